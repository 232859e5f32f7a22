"""Lane geometry and the analytic guidance fields that run along it.

Roads are chains of tangent line and arc segments.  Each segment carries a
velocity field whose integral curves converge onto the lane centerline and
then flow along it.  Junctions are crossed with half-plane tests so a
reference point leaves one segment at its centerline and enters the next one
at its centerline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi
_EPS = 1e-9


class OffRoadError(ValueError):
    """A point lies outside every segment region that could own it."""


class OutOfRegionError(OffRoadError):
    """A point lies outside the active region of one specific segment."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(theta, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@dataclass(frozen=True)
class LineSegment:
    x0: float
    y0: float
    dx: float
    dy: float
    length: float
    width: float = 0.2
    p: float = 2.0

    def __post_init__(self):
        if abs(self.dx * self.dx + self.dy * self.dy - 1.0) > 1e-9:
            raise ValueError(f"line direction ({self.dx}, {self.dy}) is not a unit vector")
        if self.length <= 0 or self.width <= 0 or self.p <= 0:
            raise ValueError("line length, width and p must be positive")

    kind = "line"

    @classmethod
    def from_heading(cls, x0, y0, heading, length, width=0.2, p=2.0):
        return cls(x0, y0, math.cos(heading), math.sin(heading), length, width, p)

    def local(self, x: float, y: float) -> tuple[float, float]:
        """(along, left-offset) coordinates of a point in the segment frame."""
        rx, ry = x - self.x0, y - self.y0
        return rx * self.dx + ry * self.dy, -rx * self.dy + ry * self.dx

    def contains(self, x: float, y: float) -> bool:
        along, off = self.local(x, y)
        return -_EPS <= along <= self.length + _EPS and abs(off) <= self.width / 2 + _EPS

    def raw_field(self, x, y):
        # verbatim line field; works elementwise on numpy arrays too
        ex, ey = self.x0 - x, self.y0 - y
        proj = ex * self.dx + ey * self.dy
        return (self.dx + self.p * (ex - proj * self.dx),
                self.dy + self.p * (ey - proj * self.dy))

    def project(self, x: float, y: float) -> float:
        along, _ = self.local(x, y)
        return min(max(along, 0.0), self.length)

    def lateral_error(self, x, y):
        return np.abs(-(x - self.x0) * self.dy + (y - self.y0) * self.dx)

    def point_at(self, s: float) -> tuple[float, float, float]:
        return self.x0 + s * self.dx, self.y0 + s * self.dy, math.atan2(self.dy, self.dx)

    @property
    def start(self) -> tuple[float, float]:
        return self.x0, self.y0

    @property
    def end(self) -> tuple[float, float]:
        return self.x0 + self.length * self.dx, self.y0 + self.length * self.dy

    def start_heading(self) -> float:
        return math.atan2(self.dy, self.dx)

    def end_heading(self) -> float:
        return math.atan2(self.dy, self.dx)


@dataclass(frozen=True)
class ArcSegment:
    """Circular arc.  ``cw=+1`` travels clockwise, ``cw=-1`` counter-clockwise.

    ``start_angle`` and ``end_angle`` are polar angles (about the center) of
    the first and last centerline points in travel order.
    """

    xc: float
    yc: float
    r: float
    cw: int
    start_angle: float
    end_angle: float
    width: float = 0.2
    p: float = 2.0

    kind = "arc"

    def __post_init__(self):
        if self.r <= 0 or self.width <= 0 or self.p <= 0:
            raise ValueError("arc radius, width and p must be positive")
        if self.cw not in (1, -1):
            raise ValueError(f"cw must be +1 or -1, got {self.cw}")
        if self.width / 2 >= self.r:
            raise ValueError("arc half-width must be smaller than its radius")

    @property
    def span(self) -> float:
        if self.cw == 1:
            sweep = (self.start_angle - self.end_angle) % TWO_PI
        else:
            sweep = (self.end_angle - self.start_angle) % TWO_PI
        return sweep if sweep > _EPS else TWO_PI

    @property
    def length(self) -> float:
        return self.r * self.span

    def _progress(self, phi: float) -> float:
        """Angle travelled from the start to polar angle ``phi``, in [0, 2pi)."""
        if self.cw == 1:
            return (self.start_angle - phi) % TWO_PI
        return (phi - self.start_angle) % TWO_PI

    def contains(self, x: float, y: float) -> bool:
        rho = math.hypot(x - self.xc, y - self.yc)
        if abs(rho - self.r) > self.width / 2 + _EPS:
            return False
        prog = self._progress(math.atan2(y - self.yc, x - self.xc))
        tol = _EPS / self.r
        return prog <= self.span + tol or prog >= TWO_PI - tol

    def raw_field(self, x, y):
        ex, ey = x - self.xc, y - self.yc
        conv = 4.0 * self.p * (ex * ex + ey * ey - self.r * self.r)
        return (self.r * ey * self.cw - conv * ex,
                -self.r * ex * self.cw - conv * ey)

    def project(self, x: float, y: float) -> float:
        prog = self._progress(math.atan2(y - self.yc, x - self.xc))
        if prog > self.span:
            # beyond the end: snap to whichever end is angularly closer
            prog = self.span if prog - self.span < TWO_PI - prog else 0.0
        return self.r * prog

    def lateral_error(self, x, y):
        return np.abs(np.hypot(x - self.xc, y - self.yc) - self.r)

    def point_at(self, s: float) -> tuple[float, float, float]:
        phi = self.start_angle - self.cw * s / self.r
        heading = phi - self.cw * math.pi / 2
        return (self.xc + self.r * math.cos(phi), self.yc + self.r * math.sin(phi),
                wrap_angle(heading))

    @property
    def start(self) -> tuple[float, float]:
        return self.point_at(0.0)[:2]

    @property
    def end(self) -> tuple[float, float]:
        return self.point_at(self.length)[:2]

    def start_heading(self) -> float:
        return self.point_at(0.0)[2]

    def end_heading(self) -> float:
        return self.point_at(self.length)[2]


Segment = Union[LineSegment, ArcSegment]


@dataclass(frozen=True)
class HalfPlane:
    px: float
    py: float
    nx: float
    ny: float

    def crossed(self, x: float, y: float) -> bool:
        return (x - self.px) * self.nx + (y - self.py) * self.ny >= 0.0


@dataclass(frozen=True)
class RoutePosition:
    index: int
    s: float
    cumulative: float


@dataclass(frozen=True)
class Route:
    segments: tuple
    loop: bool = False
    exits: tuple = field(init=False, repr=False)
    offsets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("a route needs at least one segment")
        object.__setattr__(self, "segments", segs)
        pairs = list(zip(segs[:-1], segs[1:]))
        if self.loop:
            pairs.append((segs[-1], segs[0]))
        for k, (a, b) in enumerate(pairs):
            gap = math.dist(a.end, b.start)
            if gap > 1e-6:
                raise ValueError(f"segments {k} and {k + 1} do not meet (gap {gap:.3g} m)")
            turn = abs(wrap_angle(a.end_heading() - b.start_heading()))
            if turn > 1e-6:
                raise ValueError(f"segments {k} and {k + 1} are not tangent (kink {turn:.3g} rad)")
        exits = []
        for seg in segs:
            h = seg.end_heading()
            ex, ey = seg.end
            exits.append(HalfPlane(ex, ey, math.cos(h), math.sin(h)))
        object.__setattr__(self, "exits", tuple(exits))
        object.__setattr__(self, "offsets", tuple(np.concatenate(
            [[0.0], np.cumsum([s.length for s in segs])[:-1]]).tolist()))

    @property
    def length(self) -> float:
        return self.offsets[-1] + self.segments[-1].length

    def next_index(self, index: int) -> int | None:
        if index + 1 < len(self.segments):
            return index + 1
        return 0 if self.loop else None

    def point_at(self, s: float) -> tuple[float, float, float, int]:
        """Centerline pose at cumulative arc length ``s`` and its segment index."""
        if s < 0 or s > self.length + _EPS:
            raise OffRoadError(f"arc length {s} outside route [0, {self.length}]")
        k = int(np.searchsorted(self.offsets, s, side="right")) - 1
        k = min(max(k, 0), len(self.segments) - 1)
        x, y, h = self.segments[k].point_at(min(s - self.offsets[k], self.segments[k].length))
        return x, y, h, k


def line_field(point: Sequence[float], seg: LineSegment) -> tuple[float, float]:
    x, y = point
    if not seg.contains(x, y):
        raise OutOfRegionError(f"({x:.4f}, {y:.4f}) outside line region")
    fx, fy = seg.raw_field(x, y)
    return float(fx), float(fy)


def arc_field(point: Sequence[float], seg: ArcSegment) -> tuple[float, float]:
    x, y = point
    if not seg.contains(x, y):
        raise OutOfRegionError(f"({x:.4f}, {y:.4f}) outside arc region")
    fx, fy = seg.raw_field(x, y)
    return float(fx), float(fy)


def segment_field(point, seg: Segment) -> tuple[float, float]:
    return line_field(point, seg) if seg.kind == "line" else arc_field(point, seg)


def transition_check(point: Sequence[float], route: Route, active_index: int) -> bool:
    """True once ``point`` has crossed the exit half-plane of the active segment."""
    return route.exits[active_index].crossed(point[0], point[1])


def advance_index(point, route: Route, active_index: int) -> int:
    """Active index after applying the junction test once."""
    if not transition_check(point, route, active_index):
        return active_index
    nxt = route.next_index(active_index)
    if nxt is None:
        raise OffRoadError(f"({point[0]:.4f}, {point[1]:.4f}) is past the end of the route")
    return nxt


def evaluate_route_field(point, route: Route, active_index: int):
    """Field vector at ``point`` and the (possibly advanced) segment index."""
    idx = advance_index(point, route, active_index)
    try:
        return segment_field(point, route.segments[idx]), idx
    except OutOfRegionError as exc:
        raise OffRoadError(str(exc)) from None


def route_position(point, route: Route, active_index: int) -> RoutePosition:
    seg = route.segments[active_index]
    if not seg.contains(point[0], point[1]):
        raise OffRoadError(f"({point[0]:.4f}, {point[1]:.4f}) is off segment {active_index}")
    s = seg.project(point[0], point[1])
    return RoutePosition(active_index, s, route.offsets[active_index] + s)


def segment_from_dict(d: dict) -> Segment:
    """Build a segment from a scenario record (SI units; angles in rad or ``*_deg``)."""
    kind = d.get("kind")
    width = float(d.get("width", 0.2))
    p = float(d.get("p", 2.0))
    if kind == "line":
        x0, y0 = d["origin"]
        if "heading_deg" in d:
            return LineSegment.from_heading(x0, y0, math.radians(d["heading_deg"]),
                                            float(d["length"]), width, p)
        dx, dy = d["direction"]
        return LineSegment(float(x0), float(y0), float(dx), float(dy), float(d["length"]), width, p)
    if kind == "arc":
        xc, yc = d["center"]
        if "start_deg" in d:
            a0, a1 = math.radians(d["start_deg"]), math.radians(d["end_deg"])
        else:
            a0, a1 = float(d["start_angle"]), float(d["end_angle"])
        return ArcSegment(float(xc), float(yc), float(d["radius"]), int(d["cw"]), a0, a1, width, p)
    raise ValueError(f"unknown segment kind {kind!r}")
