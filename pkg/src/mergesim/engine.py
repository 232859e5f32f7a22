"""Fixed-step world loop, trace recording and post-hoc safety audits."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .coordination import (
    MAIN_ROAD,
    Coordinator,
    MergeGeometry,
    MergePlan,
    QueueEntry,
    baseline_yield_policy,
    classify_predecessor,
    compute_merge_time,
    order_arrivals,
    rear_end_check,
    solve_unconstrained,
    validate_plan,
)
from .road import OffRoadError, advance_index, route_position
from .scenario import RoadSpec, Scenario, ScenarioError, VehicleSpec
from .tracking import ReferenceState, tracking_control, virtual_robot_step
from .vehicle import (
    ENCODER_DT,
    ActuatorState,
    ControlInput,
    VehicleState,
    input_to_wheel_speeds,
    low_level_step,
    unicycle_step,
    wheel_speeds_to_input,
)

log = logging.getLogger(__name__)

VEHICLE_HALF_LENGTH = 0.065


def zone_of(s: float, merge_s: float, geom: MergeGeometry) -> str:
    if s < merge_s - geom.L:
        return "outside"
    if s < merge_s:
        return "control"
    if s < merge_s + geom.S:
        return "merging"
    return "past"


@dataclass
class TickRecord:
    tick: int
    time: float
    vehicle_id: str
    road: int
    x: float
    y: float
    theta: float
    v_cmd: float
    omega_cmd: float
    v_applied: float
    route_s: float
    zone: str
    ref_s: float = math.nan


@dataclass
class Event:
    tick: int
    type: str
    vehicle_id: str | None
    payload: dict = field(default_factory=dict)

    @property
    def time(self) -> float:
        return self.payload["time"]


@dataclass
class Trace:
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def vehicle_ids(self) -> list[str]:
        seen = dict.fromkeys(r.vehicle_id for r in self.records)
        return list(seen)

    def series(self, vehicle_id: str) -> dict[str, np.ndarray]:
        rows = [r for r in self.records if r.vehicle_id == vehicle_id]
        return {
            "time": np.array([r.time for r in rows]),
            "v_applied": np.array([r.v_applied for r in rows]),
            "route_s": np.array([r.route_s for r in rows]),
            "ref_s": np.array([r.ref_s for r in rows]),
            "x": np.array([r.x for r in rows]),
            "y": np.array([r.y for r in rows]),
        }

    def events_of(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.type == kind]


@dataclass
class Agent:
    spec: VehicleSpec
    road: RoadSpec
    state: VehicleState
    ref: ReferenceState
    ref_index: int
    phys_index: int
    ref_s: float
    phys_s: float
    speed: float
    prev_s: float | None = None
    t0: float = math.nan
    actuator: ActuatorState | None = None
    plan: MergePlan | None = None
    entry: QueueEntry | None = None
    arrived: bool = False
    in_merge: bool = False
    exited: bool = False
    committed: bool = False


class World:
    """Mutable simulation state advanced one fixed tick at a time."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.geom = scenario.geometry
        self.dt = scenario.dt
        self.tick = 0
        self.rng = np.random.default_rng(scenario.seed)
        self.coordinator = Coordinator()
        self.pending = sorted(scenario.vehicles,
                              key=lambda v: (v.spawn_time, scenario.roads[v.road].road, v.id))
        self.agents: dict[str, Agent] = {}
        self.trace = Trace(meta={
            "scenario": scenario.name,
            "mode": scenario.mode,
            "seed": scenario.seed,
            "dt": scenario.dt,
            "geometry": asdict(self.geom),
            "roads": {n: {"road": r.road, "merge_s": r.merge_s} for n, r in scenario.roads.items()},
            "vehicles": {v.id: scenario.roads[v.road].road for v in scenario.vehicles},
        })

    @property
    def t(self) -> float:
        return self.tick * self.dt

    @property
    def finished(self) -> bool:
        if self.t >= self.scenario.duration - 1e-9:
            return True
        return not self.pending and all(a.exited for a in self.agents.values())

    def _event(self, kind, vid, time, **payload):
        self.trace.events.append(Event(self.tick, kind, vid, {"time": time, **payload}))

    def _cross_time(self, a: Agent, s_mark: float) -> float:
        if a.prev_s is None or a.phys_s == a.prev_s:
            return self.t
        frac = (s_mark - a.prev_s) / (a.phys_s - a.prev_s)
        return self.t - self.dt + min(max(frac, 0.0), 1.0) * self.dt

    # phase 1
    def _spawn(self):
        while self.pending and self.pending[0].spawn_time <= self.t + 1e-9:
            v = self.pending.pop(0)
            road = self.scenario.roads[v.road]
            x, y, h, k = road.route.point_at(v.spawn_s)
            a = Agent(v, road, VehicleState(x, y, h), ReferenceState(x, y, h, v.entry_speed, 0.0),
                      k, k, v.spawn_s, v.spawn_s, v.entry_speed)
            if v.fidelity == "actuated":
                a.actuator = _spun_up_actuator(v, self.scenario)
            self.agents[v.id] = a
            self._event("spawn", v.id, self.t, road=road.road, s=v.spawn_s)

    # phase 2
    def _arrivals(self):
        cands = []
        for a in self.agents.values():
            if not a.arrived and a.phys_s >= a.road.merge_s - self.geom.L:
                a.t0 = self._cross_time(a, a.road.merge_s - self.geom.L)
                cands.append(a)
        cands.sort(key=lambda a: (a.road.road, a.spec.id))
        for a in order_arrivals(cands, self.rng):
            a.arrived = True
            in_zone = [b.speed for b in self.agents.values() if b.arrived and not b.in_merge]
            v_ave = float(np.mean(in_zone))
            self._event("arrival", a.spec.id, a.t0, road=a.road.road, v0=a.speed, v_ave=v_ave)
            if self.scenario.mode == "optimal":
                self._assign(a, v_ave)

    def _assign(self, a: Agent, v_ave: float):
        geom, coord = self.geom, self.coordinator
        tag = classify_predecessor(coord.queue, a.road.road)
        prev = coord.last()
        t_m = compute_merge_time(prev.t_m if prev else None, tag, a.t0, a.speed, geom, v_ave,
                                 self.scenario.first_travel_time)
        entry = QueueEntry(a.spec.id, a.road.road, a.t0, a.speed, t_m, t_m + geom.dwell,
                           geom.delta(v_ave))
        plan = solve_unconstrained(a.t0, t_m, a.speed, geom.L, geom.v_srz)
        bad = validate_plan(plan, geom)
        if bad:
            raise ScenarioError(f"vehicle {a.spec.id}: merge plan violates "
                                + ", ".join(f"{b.bound} (value {b.value:.4f} at t={b.t:.3f})" for b in bad))
        pos = coord.insert(entry)
        a.plan, a.entry = plan, entry
        self._event("merge_time_assigned", a.spec.id, a.t0, road=a.road.road,
                    tag=tag.value if tag else None, t0=a.t0, v0=a.speed, t_m=t_m, t_f=entry.t_f,
                    delta=entry.delta, queue_position=pos + 1,
                    plan={"a": plan.a, "b": plan.b, "c": plan.c, "d": plan.d})
        if pos != len(coord.queue) - 1:
            self._event("queue_reorder", a.spec.id, a.t0, queue_position=pos + 1)

    # phase 3
    def _zone_events(self):
        S = self.geom.S
        for a in list(self.agents.values()):
            m = a.road.merge_s
            if not a.in_merge and a.phys_s >= m:
                a.in_merge = True
                self._event("merge_entry", a.spec.id, self._cross_time(a, m), road=a.road.road)
            if a.in_merge and not a.exited and a.phys_s >= m + S:
                a.exited = True
                self.coordinator.depart(a.spec.id)
                self._event("merge_exit", a.spec.id, self._cross_time(a, m + S), road=a.road.road)
            if a.ref_s >= a.road.route.length - self.scenario.despawn_margin:
                del self.agents[a.spec.id]
                self._event("despawn", a.spec.id, self.t)

    # phase 4 helpers
    def _optimal_speed(self, a: Agent) -> tuple[float, float]:
        t1 = self.t + self.dt
        if a.plan is None:
            return a.spec.entry_speed, a.spec.entry_speed
        geom = self.geom
        if t1 <= a.plan.t_m:
            p, v_plan, _ = a.plan.evaluate(t1)
            target = a.road.merge_s - geom.L + float(p)
        elif t1 <= a.plan.t_m + geom.dwell:
            target = a.road.merge_s + geom.v_srz * (t1 - a.plan.t_m)
        else:
            return geom.v_srz, geom.v_srz
        speed = max((target - a.ref_s) / self.dt, 0.0)
        return speed, max(speed, self.scenario.plan_speed_floor)

    def _baseline_speeds(self) -> dict[str, float]:
        geom = self.geom
        rel = {vid: a.ref_s - a.road.merge_s for vid, a in self.agents.items()}
        main = [(rel[vid], a.speed) for vid, a in self.agents.items() if a.road.road == MAIN_ROAD]
        out = {}
        for vid, a in self.agents.items():
            me = rel[vid]
            gap = None
            for oid, b in self.agents.items():
                if oid == vid or rel[oid] <= me:
                    continue
                same_lane = b.road.name == a.road.name or (rel[oid] >= 0 and (me >= 0 or a.road.road == MAIN_ROAD))
                if same_lane and (gap is None or rel[oid] - me < gap):
                    gap = rel[oid] - me
            d = baseline_yield_policy(a.road.road, me, a.speed, a.spec.entry_speed, main, gap, geom,
                                      a.committed, self.scenario.baseline)
            if d.committed and not a.committed and a.road.road != MAIN_ROAD and me < 0:
                self._event("yield_release", vid, self.t)
            a.committed = d.committed
            out[vid] = min(d.speed, a.speed + geom.u_max * self.dt)
        return out

    def step(self):
        sc, dt = self.scenario, self.dt
        self._spawn()
        self._arrivals()
        self._zone_events()
        base = self._baseline_speeds() if sc.mode == "baseline" else None
        for vid in sorted(self.agents):
            a = self.agents[vid]
            if base is not None:
                speed = v_d = base[vid]
            else:
                speed, v_d = self._optimal_speed(a)
            try:
                new_ref, new_idx = virtual_robot_step(a.ref, a.road.route, a.ref_index, speed, dt)
                ref_ctrl = ReferenceState(a.ref.x, a.ref.y, a.ref.theta, v_d, new_ref.omega)
                cmd = tracking_control(a.state, ref_ctrl, sc.gains)
                new_state, v_applied = self._plant(a, cmd)
                phys_idx = advance_index((new_state.x, new_state.y), a.road.route, a.phys_index)
                phys = route_position((new_state.x, new_state.y), a.road.route, phys_idx)
                ref_pos = route_position((new_ref.x, new_ref.y), a.road.route, new_idx)
            except OffRoadError as exc:
                raise ScenarioError(f"vehicle {vid} left the road at t={self.t:.3f}: {exc}") from None
            self.trace.records.append(TickRecord(
                self.tick, self.t, vid, a.road.road, a.state.x, a.state.y, a.state.theta,
                cmd.v, cmd.omega, v_applied, a.phys_s,
                zone_of(a.phys_s, a.road.merge_s, self.geom), a.ref_s))
            a.ref, a.ref_index, a.ref_s, a.speed = new_ref, new_idx, ref_pos.cumulative, speed
            a.state, a.phys_index = new_state, phys_idx
            a.prev_s, a.phys_s = a.phys_s, phys.cumulative
        self.tick += 1

    def _plant(self, a: Agent, cmd: ControlInput) -> tuple[VehicleState, float]:
        if a.actuator is None:
            return unicycle_step(a.state, cmd, self.dt), cmd.v
        n = max(1, round(self.dt / ENCODER_DT))
        h = self.dt / n
        state, dist = a.state, 0.0
        drive = self.scenario.drive
        for _ in range(n):
            (wr, wl), _ = low_level_step(cmd, a.actuator, drive, h, a.spec.kp, a.spec.sat_scale)
            u = wheel_speeds_to_input(wr, wl, drive)
            state = unicycle_step(state, u, h)
            dist += u.v * h
        return state, dist / self.dt


def _spun_up_actuator(v: VehicleSpec, sc: Scenario) -> ActuatorState:
    act = ActuatorState()
    drive = sc.drive
    w_max = drive.v_sat * v.sat_scale / drive.wheel_radius
    for wheel, w in zip((act.right, act.left),
                        input_to_wheel_speeds(ControlInput(v.entry_speed, 0.0), drive)):
        wheel.duty = min(1.0, w / w_max)
        wheel.queue.extend([w] * wheel.queue.maxlen)
    return act


def step(world: World) -> World:
    world.step()
    return world


def run(scenario: Scenario) -> Trace:
    world = World(scenario)
    while not world.finished:
        world.step()
    log.info("run %s/%s finished at t=%.2f s after %d ticks", scenario.name, scenario.mode,
             world.t, world.tick)
    world.trace.meta["end_time"] = world.t
    return world.trace


def detect_collisions(trace: Trace, geometry: MergeGeometry | None = None,
                      half_length: float = VEHICLE_HALF_LENGTH) -> list[Event]:
    """Rear-end, lateral (merging-zone exclusivity) and disc-overlap audits."""
    geom = geometry or MergeGeometry(**trace.meta["geometry"])
    out: list[Event] = []
    by_tick: dict[int, list[TickRecord]] = {}
    for r in trace.records:
        by_tick.setdefault(r.tick, []).append(r)
    for tick in sorted(by_tick):
        rows = by_tick[tick]
        merging = [r for r in rows if r.zone == "merging"]
        if len({r.road for r in merging}) > 1:
            out.append(Event(tick, "lateral_violation", None,
                             {"time": rows[0].time, "vehicles": sorted(r.vehicle_id for r in merging)}))
        if len(rows) > 1:
            xy = np.array([(r.x, r.y) for r in rows])
            dist = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
            ii, jj = np.nonzero(np.triu(dist < 2 * half_length, 1))
            for i, j in zip(ii, jj):
                out.append(Event(tick, "disc_overlap", rows[i].vehicle_id,
                                 {"time": rows[i].time, "other": rows[j].vehicle_id,
                                  "distance": float(dist[i, j])}))
    entries = [QueueEntry(e.vehicle_id, e.payload["road"], e.payload["t0"], e.payload["v0"],
                          e.payload["t_m"], e.payload["t_f"], e.payload["delta"])
               for e in trace.events_of("merge_time_assigned")]
    if entries:
        tracks = {}
        for vid in trace.vehicle_ids():
            s = trace.series(vid)
            tracks[vid] = (s["time"], s["route_s"])
        tick_of = {r.time: r.tick for r in trace.records}
        for v in rear_end_check(tracks, entries):
            out.append(Event(tick_of.get(v.t, -1), "rear_end_violation", v.follower,
                             {"time": v.t, "leader": v.leader, "gap": v.gap, "required": v.required}))
    return out
