import math

import numpy as np
from hypothesis import given, strategies as st

from latentdrive.drivers import (IDMParams, MobilParams, NO_LEADER_GAP,
                                 idm_accel, mobil_accepts)

from conftest import assert_close

IDM = IDMParams()
MOBIL = MobilParams()


def oracle_idm(v, v_lead, gap, p):
    gap = max(gap, 0.1)
    s_star = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b))
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)


@given(v=st.floats(0.0, 35.0), v_lead=st.floats(0.0, 35.0),
       gap=st.floats(0.5, 500.0))
def test_idm_matches_formula(v, v_lead, gap):
    assert_close(idm_accel(v, v_lead, gap, IDM), oracle_idm(v, v_lead, gap, IDM),
                 1e-12)


def test_free_road_approaches_desired_speed():
    # at v0 on an empty road the free-flow term cancels a_max exactly
    a = idm_accel(IDM.v0, 0.0, NO_LEADER_GAP, IDM)
    assert abs(a) < 1e-3
    assert idm_accel(0.0, 0.0, NO_LEADER_GAP, IDM) > 2.9
    assert idm_accel(IDM.v0 * 1.2, 0.0, NO_LEADER_GAP, IDM) < 0.0


def test_closing_on_stopped_leader_brakes_hard():
    a = idm_accel(20.0, 0.0, 15.0, IDM)
    assert a < -IDM.b  # emergency regime, exceeds comfortable decel


def test_jam_distance_holds_vehicle():
    # stationary at exactly s0 behind a stopped leader: no motion impulse
    a = idm_accel(0.0, 0.0, IDM.s0, IDM)
    assert_close(a, 0.0, 1e-12)
    assert idm_accel(0.0, 0.0, IDM.s0 * 0.5, IDM) < 0.0


def test_tiny_gap_clamped_not_singular():
    a = idm_accel(5.0, 5.0, 0.0, IDM)
    assert np.isfinite(a)
    assert a == idm_accel(5.0, 5.0, 0.1, IDM)


@given(v=st.floats(0.1, 30.0), gap=st.floats(1.0, 200.0))
def test_accel_monotonic_in_gap(v, gap):
    closer = idm_accel(v, v, gap, IDM)
    farther = idm_accel(v, v, gap * 1.5, IDM)
    assert farther >= closer - 1e-12


def test_with_v0_rebinds_only_speed():
    slow = IDM.with_v0(8.0)
    assert slow.v0 == 8.0
    assert (slow.T, slow.s0, slow.a_max, slow.b, slow.delta) == \
        (IDM.T, IDM.s0, IDM.a_max, IDM.b, IDM.delta)


# -- MOBIL -------------------------------------------------------------


def test_safety_veto_beats_any_gain():
    # huge personal gain, but the new follower would brake past b_safe
    ok = mobil_accepts(-3.0, 3.0, 0.0, -MOBIL.b_safe - 0.01, 0.0, 0.0, MOBIL)
    assert not ok


def test_gain_threshold_boundary():
    p = MobilParams(politeness=0.0, threshold=0.1)
    at = mobil_accepts(0.0, 0.1, 0.0, 0.0, 0.0, 0.0, p)
    above = mobil_accepts(0.0, 0.1 + 1e-9, 0.0, 0.0, 0.0, 0.0, p)
    assert not at  # strict inequality
    assert above


def test_politeness_weighs_others():
    # selfish gain 0.3; others lose 0.5 combined
    selfish = MobilParams(politeness=0.0, threshold=0.1)
    polite = MobilParams(politeness=1.0, threshold=0.1)
    args = (0.0, 0.3, 0.0, -0.25, 0.0, -0.25)
    assert mobil_accepts(*args, selfish)
    assert not mobil_accepts(*args, polite)


def test_altruistic_change_possible():
    # the changer loses slightly but frees the road for two others
    p = MobilParams(politeness=1.0, threshold=0.1)
    assert mobil_accepts(0.0, -0.1, 0.0, 0.2, 0.0, 0.2, p)


@given(st.floats(-4.0, 4.0), st.floats(-4.0, 4.0), st.floats(-3.9, 4.0),
       st.floats(-4.0, 4.0), st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
def test_mobil_matches_inequality(a_so, a_sn, a_nfn, a_nfo, a_ofo, a_ofn):
    got = mobil_accepts(a_so, a_sn, a_nfo, a_nfn, a_ofo, a_ofn, MOBIL)
    want = (a_nfn >= -MOBIL.b_safe) and (
        (a_sn - a_so) + MOBIL.politeness * ((a_nfn - a_nfo) + (a_ofn - a_ofo))
        > MOBIL.threshold)
    assert got == want
