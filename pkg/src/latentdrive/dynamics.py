"""Kinematic bicycle integration and low-level tracking controllers.

The bicycle model places the reference point at the center of mass with
equal front/rear axle distances.  Steering produces a slip angle
beta = atan(0.5 * tan(delta)); heading rate is (v / lr) * sin(beta), so
a steady steering angle yields a circle of radius lr / sin(beta).
Integration is forward Euler at the simulation substep.
"""

import math
from dataclasses import dataclass, field

from .util import wrap_angle


@dataclass(frozen=True)
class VehicleParams:
    """Physical limits shared by every vehicle."""

    length: float = 4.6  # m, bounding box
    width: float = 2.0  # m
    lr: float = 1.25  # m, CoM to rear axle (= lf)
    delta_max: float = 0.6  # rad
    accel_max: float = 5.0  # m/s^2, actuator clamp
    v_max: float = 35.0  # m/s


@dataclass
class BicycleState:
    x: float
    y: float
    psi: float
    v: float

    def copy(self) -> "BicycleState":
        return BicycleState(self.x, self.y, self.psi, self.v)


def step_bicycle(state: BicycleState, accel: float, delta: float, dt: float,
                 params: VehicleParams) -> None:
    """Advance one Euler substep in place.  No reverse gear: v >= 0."""
    delta = min(max(delta, -params.delta_max), params.delta_max)
    accel = min(max(accel, -params.accel_max * 2.0), params.accel_max)
    beta = math.atan(0.5 * math.tan(delta))
    state.x += state.v * math.cos(state.psi + beta) * dt
    state.y += state.v * math.sin(state.psi + beta) * dt
    state.psi = wrap_angle(state.psi + state.v / params.lr * math.sin(beta) * dt)
    state.v = min(max(state.v + accel * dt, 0.0), params.v_max)


@dataclass
class LanePID:
    """PID on lateral offset with a speed-normalized damping term.

    The damping acts on sin(heading error) rather than the offset rate
    v*sin(heading error); dividing out v keeps the discrete loop's
    eigenvalues inside the unit circle across the whole speed range
    (velocity-scaled damping blows up beyond roughly 15 m/s at the
    simulation substep).  The integral is clamped so a long blocked
    approach cannot wind up the steering command.
    """

    kp: float = 0.08
    kd: float = 0.8
    ki: float = 0.01
    integral_clamp: float = 2.0
    integral: float = field(default=0.0, compare=False)

    def reset(self):
        self.integral = 0.0

    def steer(self, d: float, heading_err: float, v: float, dt: float) -> float:
        self.integral = min(max(self.integral + d * dt, -self.integral_clamp),
                            self.integral_clamp)
        return -self.kp * d - self.kd * math.sin(heading_err) - self.ki * self.integral


def speed_accel(v: float, v_target: float, kp: float = 1.5,
                a_limit: float = 5.0) -> float:
    """Proportional speed tracking with a symmetric acceleration clamp."""
    return min(max(kp * (v_target - v), -a_limit), a_limit)


def feedforward_steer(curvature: float, params: VehicleParams) -> float:
    """Steering angle whose steady-state path curvature matches the lane.

    Inverts kappa = sin(beta) / lr and beta = atan(0.5 * tan(delta)).
    """
    s = curvature * params.lr
    s = min(max(s, -0.999), 0.999)
    beta = math.asin(s)
    return math.atan(2.0 * math.tan(beta))
