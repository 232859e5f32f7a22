"""Virtual-robot reference generation and the unicycle state-tracking law."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .road import Route, evaluate_route_field, wrap_angle
from .vehicle import ControlInput, VehicleState


@dataclass(frozen=True)
class ReferenceState:
    x: float
    y: float
    theta: float
    v: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True)
class TrackingGains:
    zeta: float = 0.8
    b: float = 70.0
    # which gain is linear in v_d: "k3" (k1 = k2 = 2 zeta a) or "k2" (k1 = k3 = 2 zeta a)
    linear_gain: str = "k3"

    def __post_init__(self):
        if self.linear_gain not in ("k3", "k2"):
            raise ValueError(f"linear_gain must be 'k3' or 'k2', got {self.linear_gain!r}")
        if not 0.0 < self.zeta < 1.0:
            raise ValueError(f"zeta must lie in (0, 1), got {self.zeta}")
        if self.b <= 0:
            raise ValueError(f"b must be positive, got {self.b}")


def virtual_robot_step(ref: ReferenceState, route: Route, index: int,
                       speed_command: float, dt: float) -> tuple[ReferenceState, int]:
    """Move the reference point ``speed_command * dt`` along the unit field direction.

    The returned state carries the commanded speed and the finite-difference
    turn rate of the step just taken.
    """
    if speed_command < 0:
        raise ValueError("speed_command must be non-negative")
    (fx, fy), index = evaluate_route_field((ref.x, ref.y), route, index)
    norm = math.hypot(fx, fy)
    ux, uy = fx / norm, fy / norm
    step = speed_command * dt
    x, y = ref.x + step * ux, ref.y + step * uy
    (gx, gy), index = evaluate_route_field((x, y), route, index)
    theta = math.atan2(gy, gx)
    omega = wrap_angle(theta - ref.theta) / dt
    return ReferenceState(x, y, theta, speed_command, omega), index


def compute_gains(v_d: float, omega_d: float, gains: TrackingGains) -> tuple[float, float, float]:
    """(k1, k2, k3) scheduled on the reference speed and turn rate.

    With the default layout k1 = k2 = 2 zeta sqrt(omega_d^2 + b v_d^2) and
    k3 = b v_d.  The ``"k2"`` layout swaps the roles of k2 and k3, which
    places both lateral/heading poles at the natural frequency above.
    """
    k = 2.0 * gains.zeta * math.sqrt(omega_d * omega_d + gains.b * v_d * v_d)
    if gains.linear_gain == "k2":
        return k, gains.b * abs(v_d), k
    return k, k, gains.b * v_d


def tracking_control(state: VehicleState, ref: ReferenceState, gains: TrackingGains) -> ControlInput:
    """Speed and turn-rate command pulling ``state`` onto ``ref``.

    Errors are taken in the vehicle frame; the heading error is wrapped before
    use.  ``sign(v_d)`` is +1 at zero.
    """
    k1, k2, k3 = compute_gains(ref.v, ref.omega, gains)
    ex, ey = ref.x - state.x, ref.y - state.y
    eth = wrap_angle(ref.theta - state.theta)
    c, s = math.cos(state.theta), math.sin(state.theta)
    sgn = -1.0 if ref.v < 0 else 1.0
    v = ref.v * math.cos(eth) + k1 * (ex * c + ey * s)
    w = ref.omega + k2 * sgn * (ey * c - ex * s) + k3 * eth
    return ControlInput(v, w)
