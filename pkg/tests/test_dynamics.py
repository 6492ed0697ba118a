import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latentdrive.dynamics import (BicycleState, LanePID, VehicleParams,
                                  feedforward_steer, speed_accel, step_bicycle)

from conftest import assert_close

P = VehicleParams()


def drive(state, accel, delta, dt, n):
    for _ in range(n):
        step_bicycle(state, accel, delta, dt, P)
    return state


def test_straight_line_constant_speed():
    s = BicycleState(0.0, 0.0, 0.0, 10.0)
    drive(s, 0.0, 0.0, 0.1, 50)
    assert_close([s.x, s.y, s.psi, s.v], [50.0, 0.0, 0.0, 10.0], 1e-12)


@given(psi=st.floats(-3.0, 3.0), v=st.floats(0.5, 30.0))
def test_heading_sets_direction(psi, v):
    s = BicycleState(1.0, -2.0, psi, v)
    step_bicycle(s, 0.0, 0.0, 0.1, P)
    assert_close([s.x, s.y], [1.0 + v * 0.1 * math.cos(psi),
                              -2.0 + v * 0.1 * math.sin(psi)], 1e-12)


def test_steady_steering_traces_circle():
    """Radius from the slip-angle relation r = lr / sin(beta).

    The turn center sits perpendicular to the velocity direction, which
    is psi + beta, not psi.
    """
    delta = 0.3
    beta = math.atan(0.5 * math.tan(delta))
    radius = P.lr / math.sin(beta)
    s = BicycleState(0.0, 0.0, 0.0, 5.0)
    cx = -radius * math.sin(s.psi + beta)
    cy = radius * math.cos(s.psi + beta)
    for _ in range(400):
        step_bicycle(s, 0.0, delta, 0.01, P)
        r = math.hypot(s.x - cx, s.y - cy)
        assert abs(r - radius) < 0.08  # forward-Euler drift at dt=0.01


def test_speed_integrates_and_clamps():
    s = BicycleState(0.0, 0.0, 0.0, 0.0)
    step_bicycle(s, 2.0, 0.0, 0.5, P)
    assert_close(s.v, 1.0, 1e-12)
    drive(s, P.accel_max, 0.0, 1.0, 20)
    assert s.v == P.v_max
    drive(s, -50.0, 0.0, 1.0, 10)
    assert s.v == 0.0  # no reverse


def test_steering_clamped_at_delta_max():
    a = BicycleState(0.0, 0.0, 0.0, 5.0)
    b = BicycleState(0.0, 0.0, 0.0, 5.0)
    step_bicycle(a, 0.0, P.delta_max, 0.1, P)
    step_bicycle(b, 0.0, P.delta_max + 2.0, 0.1, P)
    assert a.psi == b.psi


def test_accel_clamp_asymmetric():
    brake = BicycleState(0.0, 0.0, 0.0, 30.0)
    step_bicycle(brake, -100.0, 0.0, 1.0, P)
    assert_close(brake.v, 30.0 - 2.0 * P.accel_max, 1e-12)
    push = BicycleState(0.0, 0.0, 0.0, 0.0)
    step_bicycle(push, 100.0, 0.0, 1.0, P)
    assert_close(push.v, P.accel_max, 1e-12)


@given(curvature=st.floats(-0.12, 0.12))
def test_feedforward_steer_matches_curvature(curvature):
    delta = feedforward_steer(curvature, P)
    beta = math.atan(0.5 * math.tan(delta))
    assert_close(math.sin(beta) / P.lr, curvature, 1e-10)


def test_feedforward_steer_saturates():
    assert feedforward_steer(5.0, P) == feedforward_steer(2.0, P)


@pytest.mark.parametrize("v", [2.0, 10.0, 35.0])
def test_pid_centers_on_lane(v):
    """Offset vehicle converges to the centerline at any legal speed."""
    pid = LanePID()
    s = BicycleState(0.0, 2.0, 0.0, v)
    dt = 0.1
    for _ in range(600):
        delta = pid.steer(s.y, s.psi, s.v, dt)
        step_bicycle(s, 0.0, delta, dt, P)
    assert abs(s.y) < 0.05
    assert abs(s.psi) < 0.02


def test_pid_integral_winds_down_and_clamps():
    pid = LanePID()
    for _ in range(1000):
        pid.steer(5.0, 0.0, 0.0, 0.25)
    assert pid.integral == pid.integral_clamp
    pid.reset()
    assert pid.integral == 0.0


def test_speed_accel_tracks_and_clamps():
    assert speed_accel(10.0, 10.0) == 0.0
    assert speed_accel(0.0, 100.0) == 5.0
    assert speed_accel(100.0, 0.0) == -5.0
    assert_close(speed_accel(8.0, 10.0), 3.0, 1e-12)


def test_state_copy_is_independent():
    a = BicycleState(1.0, 2.0, 0.5, 3.0)
    b = a.copy()
    step_bicycle(b, 1.0, 0.1, 0.1, P)
    assert (a.x, a.y, a.psi, a.v) == (1.0, 2.0, 0.5, 3.0)
