"""Travel-time, stop and control-effort metrics; trace export and re-import.

Battery state of charge is not modelled.  ``effort`` (integral of u^2) and
``traction`` (integral of positive u*v) are control-effort proxies for it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import Event, TickRecord, Trace

CSV_COLUMNS = ["tick", "time_s", "vehicle_id", "road", "x_m", "y_m", "theta_rad",
               "v_cmd", "omega_cmd", "v_applied", "route_s_m", "zone"]
EVENT_COLUMNS = ["tick", "type", "vehicle_id", "payload"]
_FIELDS = ["tick", "time", "vehicle_id", "road", "x", "y", "theta",
           "v_cmd", "omega_cmd", "v_applied", "route_s", "zone"]
PROXY_NOTE = "effort and traction are control-effort proxies; battery SOC is not simulated"


class MetricsError(ValueError):
    pass


@dataclass
class VehicleMetrics:
    vehicle_id: str
    road: int
    arrival: float
    merge_entry: float
    merge_exit: float
    control_zone_time: float
    zone_dwell: float
    stops: int
    effort: float
    traction: float


@dataclass
class MetricsReport:
    scenario: str
    mode: str
    seed: int | None
    geometry: dict
    vehicles: dict = field(default_factory=dict)
    makespan: float = 0.0
    stop_events: int = 0
    secondary_stop_events: int = 0
    max_stopped_queue: dict = field(default_factory=dict)
    effort: float = 0.0
    traction: float = 0.0
    note: str = PROXY_NOTE

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["vehicles"] = {k: VehicleMetrics(**v) for k, v in d.get("vehicles", {}).items()}
        return cls(**d)


def stop_intervals(t: np.ndarray, v: np.ndarray, speed_tol: float = 0.005,
                   min_duration: float = 0.2) -> list[tuple[float, float]]:
    """Maximal runs with |v| < speed_tol lasting at least ``min_duration``."""
    if len(t) == 0:
        return []
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    slow = np.abs(v) < speed_tol
    edges = np.diff(np.concatenate([[0], slow.astype(int), [0]]))
    starts, ends = np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]
    return [(float(t[a]), float(t[b - 1]) + dt) for a, b in zip(starts, ends)
            if (b - a) * dt >= min_duration - 1e-9]


def _reconstructed_accel(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    if len(t) < 2:
        return np.zeros_like(v)
    return np.gradient(v, t)


def effort_metrics(trace: Trace, t_start: float | None = None,
                   t_end: float | None = None) -> dict[str, tuple[float, float]]:
    """Per-vehicle (integral u^2 dt, integral max(0, u v) dt) from applied speeds.

    Acceleration is reconstructed from the applied-speed samples; both
    integrals use the trapezoid rule, optionally restricted to a time window.
    """
    out = {}
    for vid in trace.vehicle_ids():
        s = trace.series(vid)
        t, v = s["time"], s["v_applied"]
        u = _reconstructed_accel(t, v)
        keep = np.ones_like(t, dtype=bool)
        if t_start is not None:
            keep &= t >= t_start - 1e-9
        if t_end is not None:
            keep &= t <= t_end + 1e-9
        t, v, u = t[keep], v[keep], u[keep]
        if len(t) < 2:
            out[vid] = (0.0, 0.0)
            continue
        out[vid] = (float(np.trapezoid(u * u, t)), float(np.trapezoid(np.maximum(0.0, u * v), t)))
    return out


def travel_metrics(trace: Trace, speed_tol: float = 0.005, min_stop: float = 0.2) -> MetricsReport:
    """Per-vehicle timing, stops and effort plus scenario aggregates."""
    first = {}
    for kind in ("arrival", "merge_entry", "merge_exit"):
        first[kind] = {e.vehicle_id: e.time for e in trace.events_of(kind)}
    meta = trace.meta
    report = MetricsReport(meta.get("scenario", "unknown"), meta.get("mode", "unknown"),
                           meta.get("seed"), meta.get("geometry", {}))
    vids = trace.vehicle_ids()
    if not vids:
        return report
    missing = [(vid, k) for vid in vids for k in first if vid not in first[k]]
    if missing:
        raise MetricsError(f"trace lacks coordination events: {missing[:5]}")
    efforts = effort_metrics(trace)
    roads = {r.vehicle_id: r.road for r in trace.records}
    stopped_at: dict[int, dict[float, int]] = {}
    for vid in vids:
        s = trace.series(vid)
        stops = stop_intervals(s["time"], s["v_applied"], speed_tol, min_stop)
        slow_t = s["time"][np.abs(s["v_applied"]) < speed_tol]
        counter = stopped_at.setdefault(roads[vid], {})
        for tt in slow_t:
            counter[float(tt)] = counter.get(float(tt), 0) + 1
        arr, ent, ex = first["arrival"][vid], first["merge_entry"][vid], first["merge_exit"][vid]
        report.vehicles[vid] = VehicleMetrics(vid, roads[vid], arr, ent, ex, ent - arr, ex - ent,
                                              len(stops), *efforts[vid])
    vm = report.vehicles.values()
    report.makespan = max(m.merge_exit for m in vm) - min(m.arrival for m in vm)
    report.stop_events = sum(m.stops for m in vm)
    report.secondary_stop_events = sum(m.stops for m in vm if m.road != 1)
    report.max_stopped_queue = {str(r): max(c.values()) for r, c in sorted(stopped_at.items()) if c}
    report.effort = sum(m.effort for m in vm)
    report.traction = sum(m.traction for m in vm)
    return report


def _savings(ours: float, base: float) -> float | None:
    if base == 0:
        return None
    return 100.0 * (base - ours) / base


def compare(report: MetricsReport, baseline: MetricsReport) -> dict:
    """Percent savings of ``report`` relative to ``baseline`` (None when undefined)."""
    if report.scenario != baseline.scenario or report.geometry != baseline.geometry:
        raise MetricsError(f"reports come from different scenarios "
                           f"({report.scenario!r} vs {baseline.scenario!r})")
    if set(report.vehicles) != set(baseline.vehicles):
        raise MetricsError("reports cover different vehicle sets")
    return {
        "scenario": report.scenario,
        "modes": [report.mode, baseline.mode],
        "makespan_s": [report.makespan, baseline.makespan],
        "makespan_savings_pct": _savings(report.makespan, baseline.makespan),
        "effort_savings_pct": _savings(report.effort, baseline.effort),
        "traction_savings_pct": _savings(report.traction, baseline.traction),
        "stop_events": [report.stop_events, baseline.stop_events],
        "note": PROXY_NOTE,
    }


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def export_trace(trace: Trace, fmt: str, out_dir) -> list[Path]:
    """Write ``trace.<fmt>`` and ``events.<fmt>`` into ``out_dir``."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown trace format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tpath, epath = out / f"trace.{fmt}", out / f"events.{fmt}"
    rows = ([getattr(r, f) for f in _FIELDS] for r in trace.records)
    erows = ([e.tick, e.type, e.vehicle_id, e.payload] for e in trace.events)
    if fmt == "csv":
        with tpath.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            w.writerows([_fmt(x) for x in row] for row in rows)
        with epath.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVENT_COLUMNS)
            for tick, kind, vid, payload in erows:
                w.writerow([tick, kind, "" if vid is None else vid, json.dumps(payload, sort_keys=True)])
    else:
        with tpath.open("w") as fh:
            for row in rows:
                fh.write(json.dumps(dict(zip(CSV_COLUMNS, row))) + "\n")
        with epath.open("w") as fh:
            for row in erows:
                fh.write(json.dumps(dict(zip(EVENT_COLUMNS, row)), sort_keys=True) + "\n")
    return [tpath, epath]


def read_trace(trace_path, events_path=None, meta: dict | None = None) -> Trace:
    """Load an exported trace (csv or jsonl, chosen by suffix)."""
    tpath = Path(trace_path)
    jsonl = tpath.suffix == ".jsonl"
    conv = [int, float, str, int, float, float, float, float, float, float, float, str]
    records = []
    with tpath.open() as fh:
        rows = (json.loads(line) for line in fh) if jsonl else csv.DictReader(fh)
        for row in rows:
            records.append(TickRecord(*(c(row[k]) for c, k in zip(conv, CSV_COLUMNS))))
    events = []
    if events_path is not None:
        with Path(events_path).open() as fh:
            rows = (json.loads(line) for line in fh) if jsonl else csv.DictReader(fh)
            for row in rows:
                payload = row["payload"] if jsonl else json.loads(row["payload"])
                vid = row["vehicle_id"] or None
                events.append(Event(int(row["tick"]), row["type"], vid, payload))
    return Trace(records, events, dict(meta or {}))


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def read_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


def summary_lines(report: MetricsReport) -> list[str]:
    lines = [f"scenario = {report.scenario}", f"mode = {report.mode}",
             f"makespan_s = {report.makespan:.3f}", f"stop_events = {report.stop_events}",
             f"effort_u2 = {report.effort:.6g}", f"traction_proxy = {report.traction:.6g}"]
    for vid, m in report.vehicles.items():
        lines.append(f"vehicle {vid}: road={m.road} control_zone_s={m.control_zone_time:.3f} "
                     f"merge_entry_s={m.merge_entry:.3f} stops={m.stops}")
    return lines
