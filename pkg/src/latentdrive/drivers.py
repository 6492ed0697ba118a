"""Car-following (IDM) and lane-change (MOBIL) driver models.

IDM is evaluated in its literal form: the desired-gap term
s* = s0 + v*T + v*dv / (2*sqrt(a*b)) may go negative when closing speed
is negative, which relaxes braking during pull-away.  Deceleration is
not clamped; the integrator's v >= 0 floor bounds the outcome.

MOBIL accepts a lane change when the prospective follower in the target
lane would not need to brake harder than b_safe and the politeness-
weighted acceleration gain of everyone involved clears a threshold.
"""

import math
from dataclasses import dataclass

NO_LEADER_GAP = 1e9  # sentinel: free road ahead
_MIN_GAP = 0.1  # m, avoids the 1/s^2 singularity once bumpers touch


@dataclass(frozen=True)
class IDMParams:
    v0: float = 25.0  # desired speed m/s
    T: float = 1.5  # time headway s
    s0: float = 2.0  # jam distance m
    a_max: float = 3.0  # max accel m/s^2
    b: float = 2.0  # comfortable decel m/s^2
    delta: float = 4.0  # free-flow exponent

    def with_v0(self, v0: float) -> "IDMParams":
        return IDMParams(v0, self.T, self.s0, self.a_max, self.b, self.delta)


def idm_accel(v: float, v_lead: float, gap: float, p: IDMParams) -> float:
    """Longitudinal acceleration command for a follower at the given gap."""
    gap = max(gap, _MIN_GAP)
    s_star = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b))
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.5
    threshold: float = 0.1  # m/s^2 net gain required
    b_safe: float = 4.0  # m/s^2 max imposed braking


def mobil_accepts(a_self_old: float, a_self_new: float,
                  a_newfol_old: float, a_newfol_new: float,
                  a_oldfol_old: float, a_oldfol_new: float,
                  p: MobilParams) -> bool:
    """Safety criterion first, then the politeness-weighted incentive.

    *_old are IDM accelerations before the change, *_new after; "newfol"
    is the vehicle that would trail the changer in the target lane,
    "oldfol" the one it leaves behind.
    """
    if a_newfol_new < -p.b_safe:
        return False
    gain = (a_self_new - a_self_old) + p.politeness * (
        (a_newfol_new - a_newfol_old) + (a_oldfol_new - a_oldfol_old))
    return gain > p.threshold
