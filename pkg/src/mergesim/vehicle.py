"""Differential-drive vehicle: unicycle kinematics and the wheel-level actuator loop."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .road import wrap_angle

ENCODER_DT = 1.0 / 2000.0
QUEUE_LEN = 25


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ValueError(f"non-finite vehicle state {self}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float


@dataclass(frozen=True)
class DriveGeometry:
    wheel_radius: float = 0.016
    track_width: float = 0.09
    encoder_cpr: int = 12
    gear_ratio: float = 75.81
    v_sat: float = 0.7

    def __post_init__(self):
        if self.wheel_radius <= 0 or self.track_width <= 0:
            raise ValueError("wheel radius and track width must be positive")
        if self.encoder_cpr < 1 or self.gear_ratio <= 0 or self.v_sat <= 0:
            raise ValueError("encoder cpr, gear ratio and v_sat must be positive")

    @property
    def counts_per_rev(self) -> float:
        """Encoder counts per wheel revolution (motor-side CPR times gearing)."""
        return self.encoder_cpr * self.gear_ratio

    @property
    def counts_per_rad(self) -> float:
        return self.counts_per_rev / (2.0 * math.pi)


@dataclass
class WheelState:
    command: float = 0.0
    queue: deque = field(default_factory=lambda: deque(maxlen=QUEUE_LEN))
    duty: float = 0.0
    residual: float = 0.0


@dataclass
class ActuatorState:
    right: WheelState = field(default_factory=WheelState)
    left: WheelState = field(default_factory=WheelState)


def unicycle_step(state: VehicleState, u: ControlInput, dt: float) -> VehicleState:
    """Integrate the unicycle exactly for a piecewise-constant input."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (math.isfinite(u.v) and math.isfinite(u.omega)):
        raise ValueError(f"non-finite input {u}")
    th = state.theta
    if abs(u.omega) < 1e-9:
        return VehicleState(state.x + u.v * dt * math.cos(th),
                            state.y + u.v * dt * math.sin(th), th + u.omega * dt)
    # chord form of the circular arc: well conditioned even for tiny omega
    half = 0.5 * u.omega * dt
    chord = u.v * dt * math.sin(half) / half
    mid = th + half
    return VehicleState(state.x + chord * math.cos(mid), state.y + chord * math.sin(mid),
                        th + u.omega * dt)


def input_to_wheel_speeds(u: ControlInput, geom: DriveGeometry) -> tuple[float, float]:
    """(right, left) wheel angular speeds in rad/s."""
    R, d = geom.wheel_radius, geom.track_width
    return (u.v + u.omega * d / 2) / R, (u.v - u.omega * d / 2) / R


def wheel_speeds_to_input(phi_r: float, phi_l: float, geom: DriveGeometry) -> ControlInput:
    # yaw rate divides by the track width d
    R, d = geom.wheel_radius, geom.track_width
    return ControlInput(R * (phi_r + phi_l) / 2, R * (phi_r - phi_l) / d)


def encoder_measure(speed: float, dt: float, geom: DriveGeometry,
                    residual: float = 0.0) -> tuple[int, float]:
    """Whole encoder counts seen over ``dt``; the fractional remainder is carried."""
    total = speed * dt * geom.counts_per_rad + residual
    counts = math.floor(total)
    return counts, total - counts


def smoothed_estimate(queue) -> float:
    if not queue:
        raise ValueError("cannot estimate speed from an empty queue")
    return sum(queue) / len(queue)


def low_level_step(desired: ControlInput, act: ActuatorState, geom: DriveGeometry,
                   dt: float = ENCODER_DT, kp: float = 2.5e-4,
                   sat_scale: float = 1.0) -> tuple[tuple[float, float], ActuatorState]:
    """One encoder sample of the per-wheel proportional duty loop.

    Duty is nudged by ``kp * (desired - estimate)`` each sample, clipped to
    [-1, 1], and mapped linearly to wheel speed so that full duty on both
    wheels gives ``v_sat * sat_scale``.  ``act`` is updated in place.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    w_max = geom.v_sat * sat_scale / geom.wheel_radius
    applied = []
    for wheel, target in zip((act.right, act.left), input_to_wheel_speeds(desired, geom)):
        wheel.command = target
        est = smoothed_estimate(wheel.queue) if wheel.queue else 0.0
        wheel.duty = min(1.0, max(-1.0, wheel.duty + kp * (target - est)))
        speed = wheel.duty * w_max
        counts, wheel.residual = encoder_measure(speed, dt, geom, wheel.residual)
        wheel.queue.append(counts / (geom.counts_per_rad * dt))
        applied.append(speed)
    return (applied[0], applied[1]), act
