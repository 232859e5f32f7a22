"""Scenario files: YAML text describing roads, merge geometry and vehicles."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .coordination import MAIN_ROAD, SECONDARY_ROAD, MergeGeometry, YieldParams
from .road import Route, segment_from_dict
from .tracking import TrackingGains
from .vehicle import DriveGeometry

MODES = ("optimal", "baseline")
FIDELITIES = ("ideal", "actuated")


class ScenarioError(ValueError):
    """Malformed scenario, or a run that cannot continue under its rules."""


@dataclass(frozen=True)
class RoadSpec:
    name: str
    road: int
    route: Route
    merge_s: float


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    road: str
    spawn_time: float
    entry_speed: float
    spawn_s: float = 0.0
    fidelity: str = "ideal"
    kp: float = 2.5e-4
    sat_scale: float = 1.0


@dataclass(frozen=True)
class Scenario:
    name: str
    roads: dict
    geometry: MergeGeometry
    vehicles: tuple
    seed: int
    mode: str = "optimal"
    dt: float = 0.01
    duration: float = 120.0
    gains: TrackingGains = field(default_factory=TrackingGains)
    drive: DriveGeometry = field(default_factory=DriveGeometry)
    baseline: YieldParams = field(default_factory=YieldParams)
    first_travel_time: float | None = None
    plan_speed_floor: float = 0.02
    despawn_margin: float = 0.05

    def control_start(self, road: str) -> float:
        return self.roads[road].merge_s - self.geometry.L

    def with_overrides(self, **kw) -> "Scenario":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "mode" in kw and kw["mode"] not in MODES:
            raise ScenarioError(f"mode: unknown control mode {kw['mode']!r}")
        return dataclasses.replace(self, **kw)


def _section(cls, data, where):
    data = data or {}
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def load_scenario(text: str) -> Scenario:
    """Parse and fully validate scenario text."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"parse error: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    if "seed" not in doc:
        raise ScenarioError("seed: required")
    mode = doc.get("mode", "optimal")
    if mode not in MODES:
        raise ScenarioError(f"mode: unknown control mode {mode!r} (expected one of {MODES})")
    geom = _section(MergeGeometry, doc.get("geometry"), "geometry")
    gains = _section(TrackingGains, doc.get("tracking"), "tracking")
    drive = _section(DriveGeometry, doc.get("drive"), "drive")
    yparams = _section(YieldParams, doc.get("baseline"), "baseline")

    roads = {}
    for k, rd in enumerate(doc.get("roads") or []):
        where = f"roads[{k}]"
        try:
            route = Route(tuple(segment_from_dict(s) for s in rd["segments"]), bool(rd.get("loop", False)))
            spec = RoadSpec(str(rd["name"]), int(rd["road"]), route, float(rd["merge_s"]))
        except KeyError as exc:
            raise ScenarioError(f"{where}: missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        if spec.road not in (MAIN_ROAD, SECONDARY_ROAD):
            raise ScenarioError(f"{where}.road: must be {MAIN_ROAD} or {SECONDARY_ROAD}")
        if spec.merge_s - geom.L < 0:
            raise ScenarioError(f"{where}.merge_s: control zone (L={geom.L}) starts before the route")
        if spec.merge_s + geom.S > route.length:
            raise ScenarioError(f"{where}.merge_s: merging zone runs past the route end")
        if spec.name in roads:
            raise ScenarioError(f"{where}.name: duplicate road {spec.name!r}")
        roads[spec.name] = spec

    vehicles = []
    for k, vd in enumerate(doc.get("vehicles") or []):
        where = f"vehicles[{k}]"
        v = _section(VehicleSpec, vd, where)
        v = dataclasses.replace(v, id=str(v.id))
        if v.road not in roads:
            raise ScenarioError(f"{where}.road: unknown road {v.road!r}")
        if v.fidelity not in FIDELITIES:
            raise ScenarioError(f"{where}.fidelity: expected one of {FIDELITIES}")
        if v.entry_speed <= 0:
            raise ScenarioError(f"{where}.entry_speed: must be positive")
        if not 0 <= v.spawn_s < roads[v.road].merge_s:
            raise ScenarioError(f"{where}.spawn_s: must lie before the merging zone")
        vehicles.append(v)
    ids = [v.id for v in vehicles]
    if len(set(ids)) != len(ids):
        raise ScenarioError("vehicles: duplicate ids")
    _check_spawns(vehicles, geom)

    kw = {}
    for key in ("dt", "duration", "first_travel_time", "plan_speed_floor", "despawn_margin"):
        if doc.get(key) is not None:
            kw[key] = float(doc[key])
    if kw.get("dt", 0.01) <= 0 or kw.get("duration", 1.0) <= 0:
        raise ScenarioError("dt and duration must be positive")
    return Scenario(name=str(doc.get("name", "unnamed")), roads=roads, geometry=geom,
                    vehicles=tuple(vehicles), seed=int(doc["seed"]), mode=mode, gains=gains,
                    drive=drive, baseline=yparams, **kw)


def _check_spawns(vehicles, geom: MergeGeometry) -> None:
    by_road: dict[str, list[VehicleSpec]] = {}
    for v in vehicles:
        by_road.setdefault(v.road, []).append(v)
    for road, vs in by_road.items():
        for a, b in zip(vs, vs[1:]):
            if b.spawn_time < a.spawn_time:
                raise ScenarioError(f"vehicles: spawn times on road {road!r} must be non-decreasing "
                                    f"({a.id} at {a.spawn_time}, {b.id} at {b.spawn_time})")
            # leader position when the follower appears, assuming it cruised
            gap = a.spawn_s + a.entry_speed * (b.spawn_time - a.spawn_time) - b.spawn_s
            if gap < geom.delta0:
                raise ScenarioError(f"vehicles: {b.id} spawns {gap:.3f} m behind {a.id} "
                                    f"(needs >= delta0={geom.delta0})")


def load_scenario_file(path) -> Scenario:
    """Load a scenario from ``path``, or a bundled scenario by bare name."""
    p = Path(path)
    if p.exists():
        return load_scenario(p.read_text())
    bundled = resources.files("mergesim") / "scenarios" / f"{path}.yaml"
    if bundled.is_file():
        return load_scenario(bundled.read_text())
    raise ScenarioError(f"scenario file not found: {path}")


def bundled_scenarios() -> list[str]:
    root = resources.files("mergesim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))
