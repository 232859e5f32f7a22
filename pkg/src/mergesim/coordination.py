"""Decentralized merge coordination.

Vehicles entering the control zone are placed in a queue ordered by their
assigned merging-zone entry time.  Each newcomer reads its predecessor's
shared information, computes its own entry time from the rear-end and
lateral separation rules, and solves the unconstrained minimum-effort
double-integrator problem for a cubic position profile.  The coordinator is
bookkeeping only.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MAIN_ROAD = 1
SECONDARY_ROAD = 2


class Subset(str, enum.Enum):
    SAME_LANE = "same-lane"
    CONFLICTING = "conflicting"


@dataclass(frozen=True)
class MergeGeometry:
    L: float = 3.0
    S: float = 0.4
    v_min: float = 0.05
    v_max: float = 0.5
    u_min: float = -0.2
    u_max: float = 0.2
    v_srz: float = 0.3
    delta0: float = 0.15
    headway: float = 0.4

    def __post_init__(self):
        problems = []
        if not 0 < self.S < self.L:
            problems.append(f"need 0 < S < L (S={self.S}, L={self.L})")
        if not 0 <= self.v_min < self.v_srz <= self.v_max:
            problems.append(f"need 0 <= v_min < v_srz <= v_max "
                            f"({self.v_min}, {self.v_srz}, {self.v_max})")
        if not self.u_min < 0 < self.u_max:
            problems.append(f"need u_min < 0 < u_max ({self.u_min}, {self.u_max})")
        if self.delta0 < 0 or self.headway < 0:
            problems.append("delta0 and headway must be non-negative")
        elif self.delta(self.v_max) >= self.S:
            problems.append(f"safe gap delta(v_max)={self.delta(self.v_max):.3f} must be < S={self.S}")
        if problems:
            raise ValueError("; ".join(problems))

    def delta(self, v_ave: float) -> float:
        """Rear-end safe gap as a function of the control-zone average speed."""
        return self.delta0 + self.headway * v_ave

    @property
    def dwell(self) -> float:
        """Time to cross the merging zone at the imposed speed."""
        return self.S / self.v_srz


@dataclass
class QueueEntry:
    vehicle_id: str
    road: int
    t0: float
    v0: float
    t_m: float
    t_f: float
    delta: float = 0.0


@dataclass(frozen=True)
class InfoSet:
    p: float
    v: float
    tag: Subset | None
    t_m: float


def classify_predecessor(queue: Sequence[QueueEntry], road: int) -> Subset | None:
    """Subset of the last queued vehicle relative to a newcomer on ``road``."""
    if not queue:
        return None
    return Subset.SAME_LANE if queue[-1].road == road else Subset.CONFLICTING


def compute_merge_time(prev_tm: float | None, tag: Subset | None, t0: float, v0: float,
                       geom: MergeGeometry, v_ave: float, first_travel_time: float | None = None) -> float:
    """Assigned merging-zone entry time for a vehicle arriving at ``t0``.

    Travel-duration terms are offset by ``t0`` so they compare with the
    predecessor's absolute entry time.  With no predecessor the vehicle keeps
    its arrival speed unless ``first_travel_time`` is given.
    """
    if v0 <= 0:
        raise ValueError(f"arrival speed must be positive, got {v0}")
    if v_ave <= 0:
        raise ValueError(f"average speed must be positive, got {v_ave}")
    if tag is None or prev_tm is None:
        return t0 + (first_travel_time if first_travel_time is not None else geom.L / v0)
    sep = geom.delta(v_ave) if tag is Subset.SAME_LANE else geom.S
    slowest = t0 + geom.L / geom.v_min if geom.v_min > 0 else math.inf
    return max(min(prev_tm + sep / geom.v_srz, slowest), t0 + geom.L / v0, t0 + geom.L / geom.v_max)


def insert_into_queue(queue: Sequence[QueueEntry], entry: QueueEntry) -> tuple[list[QueueEntry], int]:
    """New queue with ``entry`` placed after every entry whose t_m is not later.

    Returns the queue and the 0-based position used.  Existing entries keep
    their times and relative order.
    """
    pos = bisect.bisect_right([e.t_m for e in queue], entry.t_m)
    return [*queue[:pos], entry, *queue[pos:]], pos


def order_arrivals(arrivals: Iterable, rng: np.random.Generator, key=None,
                   tie_tol: float = 1e-9) -> list:
    """Order same-tick arrivals by time, breaking ties with ``rng``.

    ``arrivals`` should already be in a deterministic order (road, id); each
    item exposes ``t0`` unless ``key`` is given.  Times within ``tie_tol`` of
    the first member of a group count as simultaneous, so interpolation
    round-off does not decide the order.
    """
    key = key or (lambda a: a.t0)
    items = sorted(arrivals, key=key)
    out = []
    i = 0
    while i < len(items):
        j = i + 1
        while j < len(items) and key(items[j]) - key(items[i]) <= tie_tol:
            j += 1
        group = items[i:j]
        if len(group) > 1:
            group = [group[k] for k in rng.permutation(len(group))]
        out.extend(group)
        i = j
    return out


@dataclass(frozen=True)
class MergePlan:
    """Cubic position profile over ``[t0, t_m]``.

    Coefficients are in the shifted clock ``tau = t - t0``:
    ``u = a tau + b``, ``v = a tau^2/2 + b tau + c``,
    ``p = a tau^3/6 + b tau^2/2 + c tau + d``.
    """

    a: float
    b: float
    c: float
    d: float
    t0: float
    t_m: float
    v0: float
    v_final: float
    distance: float

    @property
    def horizon(self) -> float:
        return self.t_m - self.t0

    def evaluate(self, t):
        tau = np.asarray(t, dtype=float) - self.t0
        u = self.a * tau + self.b
        v = 0.5 * self.a * tau**2 + self.b * tau + self.c
        p = self.a * tau**3 / 6.0 + 0.5 * self.b * tau**2 + self.c * tau + self.d
        return p, v, u

    def cost(self) -> float:
        """Closed-form 0.5 * integral of u^2 over the window."""
        T, a, b = self.horizon, self.a, self.b
        return 0.5 * (a * a * T**3 / 3.0 + a * b * T * T + b * b * T)

    def absolute_coefficients(self) -> tuple[float, float, float, float]:
        """Same polynomial expanded in absolute time t."""
        a, b, c, d, s = self.a, self.b, self.c, self.d, self.t0
        return (a, b - a * s, a * s * s / 2 - b * s + c,
                -a * s**3 / 6 + b * s * s / 2 - c * s + d)


def solve_unconstrained(t0: float, t_m: float, v0: float, distance: float, v_final: float) -> MergePlan:
    """Minimum-effort plan from (0, v0) at t0 to (distance, v_final) at t_m."""
    T = t_m - t0
    if not T > 0:
        raise ValueError(f"merge time {t_m} must be later than arrival {t0}")
    if v0 <= 0:
        raise ValueError(f"arrival speed must be positive, got {v0}")
    A = np.array([[0.0, 0.0, 0.0, 1.0],
                  [0.0, 0.0, 1.0, 0.0],
                  [T**3 / 6.0, T * T / 2.0, T, 1.0],
                  [T * T / 2.0, T, 1.0, 0.0]])
    rhs = np.array([0.0, v0, distance, v_final])
    a, b, c, d = np.linalg.solve(A, rhs)
    return MergePlan(float(a), float(b), float(c), float(d), t0, t_m, v0, v_final, distance)


def eval_plan(plan: MergePlan, t: float) -> tuple[float, float, float]:
    if t < plan.t0 - 1e-12 or t > plan.t_m + 1e-12:
        raise ValueError(f"t={t} outside plan window [{plan.t0}, {plan.t_m}]")
    p, v, u = plan.evaluate(t)
    return float(p), float(v), float(u)


@dataclass(frozen=True)
class Violation:
    bound: str
    t: float
    value: float
    limit: float


def validate_plan(plan: MergePlan, geom: MergeGeometry, tol: float = 1e-12) -> list[Violation]:
    """Speed and acceleration bound violations of ``plan`` (empty when feasible).

    Speed is checked at both ends and at its interior stationary point; the
    control is linear so its ends suffice.
    """
    times = [plan.t0, plan.t_m]
    if plan.a != 0.0:
        t_star = plan.t0 - plan.b / plan.a
        if plan.t0 < t_star < plan.t_m:
            times.append(t_star)
    out = []
    _, vs, _ = plan.evaluate(times)
    k_lo = int(np.argmin(vs))
    k_hi = int(np.argmax(vs))
    if vs[k_lo] < geom.v_min - tol:
        out.append(Violation("v_min", times[k_lo], float(vs[k_lo]), geom.v_min))
    if vs[k_hi] > geom.v_max + tol:
        out.append(Violation("v_max", times[k_hi], float(vs[k_hi]), geom.v_max))
    _, _, us = plan.evaluate([plan.t0, plan.t_m])
    for t, u in zip((plan.t0, plan.t_m), us):
        if u < geom.u_min - tol:
            out.append(Violation("u_min", t, float(u), geom.u_min))
        if u > geom.u_max + tol:
            out.append(Violation("u_max", t, float(u), geom.u_max))
    return out


def occupancy_interval(entry: QueueEntry, geom: MergeGeometry) -> tuple[float, float]:
    return entry.t_m, entry.t_m + geom.dwell


@dataclass
class Coordinator:
    """Passive queue keeper: assigns identities and relays information sets."""

    queue: list[QueueEntry] = field(default_factory=list)

    def identity(self, vehicle_id: str) -> tuple[int, int]:
        for i, e in enumerate(self.queue, start=1):
            if e.vehicle_id == vehicle_id:
                return i, e.road
        raise KeyError(vehicle_id)

    def last(self) -> QueueEntry | None:
        return self.queue[-1] if self.queue else None

    def info_set(self, vehicle_id: str, p: float, v: float) -> InfoSet:
        i, _ = self.identity(vehicle_id)
        entry = self.queue[i - 1]
        tag = classify_predecessor(self.queue[:i - 1], entry.road)
        return InfoSet(p, v, tag, entry.t_m)

    def insert(self, entry: QueueEntry) -> int:
        self.queue, pos = insert_into_queue(self.queue, entry)
        return pos

    def depart(self, vehicle_id: str) -> None:
        self.queue = [e for e in self.queue if e.vehicle_id != vehicle_id]


@dataclass(frozen=True)
class RearEndViolation:
    t: float
    follower: str
    leader: str
    gap: float
    required: float

    @property
    def deficit(self) -> float:
        return self.required - self.gap


def rear_end_check(tracks: Mapping[str, tuple[np.ndarray, np.ndarray]],
                   entries: Sequence[QueueEntry]) -> list[RearEndViolation]:
    """Audit same-road gaps over each follower's control-zone window.

    ``tracks`` maps vehicle id to (times, route arc length) samples on a
    common tick grid.  The leader of a vehicle is the previous arrival on the
    same road; the required gap is the follower's frozen ``delta``.
    """
    out = []
    by_road: dict[int, list[QueueEntry]] = {}
    for e in sorted(entries, key=lambda e: (e.t0, e.vehicle_id)):
        by_road.setdefault(e.road, []).append(e)
    for road_entries in by_road.values():
        for lead, fol in zip(road_entries, road_entries[1:]):
            if fol.vehicle_id not in tracks or lead.vehicle_id not in tracks:
                continue
            tf, sf = tracks[fol.vehicle_id]
            tl, sl = tracks[lead.vehicle_id]
            common, i_f, i_l = np.intersect1d(np.round(tf, 9), np.round(tl, 9),
                                              assume_unique=True, return_indices=True)
            mask = (common >= fol.t0) & (common <= fol.t_m)
            gaps = sl[i_l] - sf[i_f]
            for t, g in zip(common[mask], gaps[mask]):
                if g < fol.delta:
                    out.append(RearEndViolation(float(t), fol.vehicle_id, lead.vehicle_id,
                                                float(g), fol.delta))
    return out


@dataclass(frozen=True)
class YieldParams:
    clearance_time: float = 1.5
    follow_headway: float = 1.0
    commit_margin: float = 0.05
    stop_tol: float = 1e-3


@dataclass(frozen=True)
class YieldDecision:
    speed: float
    committed: bool
    clear: bool


def _time_to_cover(dist: float, v: float, v_target: float, accel: float) -> float:
    """Time to cover ``dist`` accelerating at ``accel`` from ``v`` up to ``v_target``."""
    if dist <= 0:
        return 0.0
    v = max(v, 0.0)
    if v >= v_target:
        return dist / v_target
    t_acc = (v_target - v) / accel
    d_acc = v * t_acc + 0.5 * accel * t_acc**2
    if d_acc >= dist:
        return (-v + math.sqrt(v * v + 2 * accel * dist)) / accel
    return t_acc + (dist - d_acc) / v_target


def baseline_yield_policy(road: int, s_rel: float, v: float, v_cruise: float,
                          main_traffic: Sequence[tuple[float, float]], leader_gap: float | None,
                          geom: MergeGeometry, committed: bool = False,
                          params: YieldParams = YieldParams()) -> YieldDecision:
    """Speed command for the uncoordinated lane-following baseline.

    ``s_rel`` is the vehicle's arc length relative to the merging-zone entry
    (the stop line), ``main_traffic`` lists ``(s_rel, speed)`` of main-road
    vehicles.  A secondary-road vehicle may pass the stop line only when no
    main-road vehicle is in the zone and none will reach it before this
    vehicle has left the zone plus the clearance time.  Once it commits it
    does not reconsider.
    """
    clear = True
    target = v_cruise
    if road != MAIN_ROAD and not committed and s_rel < 0:
        d_stop = -s_rel
        own_exit = _time_to_cover(d_stop + geom.S, v, v_cruise, geom.u_max)
        for s_m, v_m in main_traffic:
            if 0 <= s_m < geom.S:
                clear = False
            elif s_m < 0 and (v_m <= 0 or -s_m / v_m < own_exit + params.clearance_time):
                clear = False
        commit_dist = v * v / (2 * -geom.u_min) + params.commit_margin
        if clear and d_stop <= commit_dist:
            committed = True
        elif d_stop <= params.stop_tol:
            target = 0.0
        else:
            target = min(v_cruise, math.sqrt(2 * -geom.u_min * (d_stop - params.stop_tol)))
    if leader_gap is not None:
        target = min(target, max(0.0, (leader_gap - geom.delta0) / params.follow_headway))
    return YieldDecision(target, committed or (road != MAIN_ROAD and s_rel >= 0), clear)
