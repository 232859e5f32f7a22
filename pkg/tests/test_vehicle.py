import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mergesim.vehicle import (
    ENCODER_DT,
    QUEUE_LEN,
    ActuatorState,
    ControlInput,
    DriveGeometry,
    VehicleState,
    encoder_measure,
    input_to_wheel_speeds,
    low_level_step,
    smoothed_estimate,
    unicycle_step,
    wheel_speeds_to_input,
)

GEOM = DriveGeometry()


def fine_euler(state, u, dt, n=200_000):
    x, y, th = state.x, state.y, state.theta
    h = dt / n
    for _ in range(n):
        x += u.v * math.cos(th) * h
        y += u.v * math.sin(th) * h
        th += u.omega * h
    return x, y, th


class TestUnicycle:
    def test_straight(self):
        s = unicycle_step(VehicleState(0, 0, 0), ControlInput(1.0, 0.0), 1.0)
        assert (s.x, s.y, s.theta) == pytest.approx((1.0, 0.0, 0.0))

    def test_pure_rotation_wraps(self):
        s = unicycle_step(VehicleState(0, 0, 0), ControlInput(0.0, math.pi), 1.0)
        assert (s.x, s.y) == (0.0, 0.0)
        assert s.theta == pytest.approx(math.pi)

    def test_quarter_circle(self):
        s = unicycle_step(VehicleState(0, 0, 0), ControlInput(1.0, 1.0), math.pi / 2)
        assert (s.x, s.y, s.theta) == pytest.approx((1.0, 1.0, math.pi / 2), abs=1e-12)

    def test_matches_fine_integration(self):
        start, u = VehicleState(0.2, -0.1, 0.4), ControlInput(0.3, -0.7)
        s = unicycle_step(start, u, 1.3)
        ref = fine_euler(start, u, 1.3, n=100_000)
        assert (s.x, s.y) == pytest.approx(ref[:2], abs=1e-5)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            unicycle_step(VehicleState(0, 0, 0), ControlInput(math.nan, 0.0), 0.1)
        with pytest.raises(ValueError):
            unicycle_step(VehicleState(0, 0, 0), ControlInput(0.1, 0.0), 0.0)
        with pytest.raises(ValueError):
            VehicleState(math.inf, 0, 0)

    @settings(max_examples=80, deadline=None)
    @given(v=st.floats(-0.5, 0.5), w=st.floats(-3, 3), th=st.floats(-3, 3), dt=st.floats(0.001, 0.5))
    def test_step_composition(self, v, w, th, dt):
        u = ControlInput(v, w)
        one = unicycle_step(VehicleState(0.1, 0.2, th), u, dt)
        half = unicycle_step(VehicleState(0.1, 0.2, th), u, dt / 2)
        two = unicycle_step(half, u, dt / 2)
        assert (two.x, two.y) == pytest.approx((one.x, one.y), abs=1e-9)
        assert abs(math.remainder(two.theta - one.theta, 2 * math.pi)) < 1e-9


class TestWheelConversion:
    def test_straight(self):
        assert input_to_wheel_speeds(ControlInput(0.16, 0.0), GEOM) == pytest.approx((10.0, 10.0))

    def test_spin(self):
        r, l = input_to_wheel_speeds(ControlInput(0.0, 2.0), GEOM)
        assert r > 0 and r == pytest.approx(-l)

    def test_yaw_rate_uses_track_width(self):
        u = wheel_speeds_to_input(10.0, 0.0, GEOM)
        assert u.v == pytest.approx(0.08)
        assert u.omega == pytest.approx(0.016 * 10.0 / 0.09)

    @settings(max_examples=100, deadline=None)
    @given(v=st.floats(-1, 1), w=st.floats(-10, 10))
    def test_roundtrip(self, v, w):
        u = wheel_speeds_to_input(*input_to_wheel_speeds(ControlInput(v, w), GEOM), GEOM)
        assert u.v == pytest.approx(v, abs=1e-12)
        assert u.omega == pytest.approx(w, abs=1e-12)


class TestEncoder:
    def test_counts_per_rev(self):
        assert GEOM.counts_per_rev == pytest.approx(909.72)

    def test_zero_speed(self):
        assert encoder_measure(0.0, ENCODER_DT, GEOM, 0.37) == (0, pytest.approx(0.37))

    def test_one_revolution(self):
        counts, residual = encoder_measure(2 * math.pi, 1.0, GEOM)
        assert counts == 909 and residual == pytest.approx(0.72)

    def test_long_run_no_lost_motion(self):
        speed, total, residual = 17.3, 0, 0.0
        for _ in range(10_000):
            c, residual = encoder_measure(speed, ENCODER_DT, GEOM, residual)
            total += c
        exact = speed * 10_000 * ENCODER_DT * GEOM.counts_per_rad
        assert abs(total - exact) < 1.0

    def test_windowed_estimate_within_quantization_bound(self):
        speed, residual, q = 9.1, 0.0, []
        for _ in range(200):
            c, residual = encoder_measure(speed, ENCODER_DT, GEOM, residual)
            q.append(c / (GEOM.counts_per_rad * ENCODER_DT))
        est = smoothed_estimate(q[-QUEUE_LEN:])
        bound = 2 * math.pi / (GEOM.counts_per_rev * ENCODER_DT * QUEUE_LEN)
        assert abs(est - speed) <= bound

    def test_window_length(self):
        assert QUEUE_LEN * ENCODER_DT == pytest.approx(0.0125)


class TestSmoothing:
    def test_constant(self):
        assert smoothed_estimate([4.2] * 25) == pytest.approx(4.2)

    def test_empty(self):
        with pytest.raises(ValueError):
            smoothed_estimate([])

    def test_step_response_is_ramp(self):
        act = ActuatorState()
        q = act.right.queue
        q.extend([0.0] * QUEUE_LEN)
        out = []
        for k in range(1, QUEUE_LEN + 1):
            q.append(1.0)
            out.append(smoothed_estimate(q))
        assert out == pytest.approx([k / QUEUE_LEN for k in range(1, QUEUE_LEN + 1)])
        assert next(k for k, e in enumerate(out, 1) if e >= 0.63) <= QUEUE_LEN


class TestLowLevel:
    def test_matched_estimate_keeps_duty(self):
        act = ActuatorState()
        target, _ = input_to_wheel_speeds(ControlInput(0.2, 0.0), GEOM)
        for w in (act.right, act.left):
            w.duty = 0.3
            w.queue.extend([target] * QUEUE_LEN)
        low_level_step(ControlInput(0.2, 0.0), act, GEOM)
        assert act.right.duty == act.left.duty == 0.3

    def test_saturation(self):
        act = ActuatorState()
        for _ in range(4000):
            (wr, wl), _ = low_level_step(ControlInput(1.0, 0.0), act, GEOM)
        assert wheel_speeds_to_input(wr, wl, GEOM).v <= 0.7 + 1e-12

    def test_saturation_scale(self):
        act = ActuatorState()
        for _ in range(4000):
            (wr, wl), _ = low_level_step(ControlInput(1.0, 0.0), act, GEOM, sat_scale=0.9)
        assert wheel_speeds_to_input(wr, wl, GEOM).v == pytest.approx(0.63)

    def test_settles_at_0p3(self):
        act = ActuatorState()
        v = []
        for _ in range(4000):
            (wr, wl), _ = low_level_step(ControlInput(0.3, 0.0), act, GEOM)
            v.append(wheel_speeds_to_input(wr, wl, GEOM).v)
        v = np.array(v)
        outside = np.nonzero(np.abs(v - 0.3) > 0.02 * 0.3)[0]
        settle = (outside[-1] + 1) * ENCODER_DT
        # regression baseline for the default kp: about 0.15 s
        assert settle < 0.5
        assert abs(v[-1] - 0.3) < 0.02 * 0.3

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            low_level_step(ControlInput(0.1, 0.0), ActuatorState(), GEOM, dt=0.0)
