import numpy as np
import pytest
from scipy.optimize import brentq

from aacc.traffic_models import (
    EMERGENCY_DECEL,
    PROFILES,
    IdmParams,
    LaneChangeContext,
    MobilParams,
    Neighbor,
    idm_accel,
    mobil_decide,
    profile,
)

CON = profile("conservative")
AGG = profile("aggressive")


def idm_reference(gap, v, v_lead, a_max, b, T, v0, s0=2.0, delta=4.0):
    s_star = s0 + max(0.0, v * T + v * (v - v_lead) / (2 * np.sqrt(a_max * b)))
    return a_max * (1 - (v / v0) ** delta - (s_star / gap) ** 2)


def test_free_flow_equilibrium():
    assert idm_accel(np.inf, 18.0, 18.0, CON.idm) == pytest.approx(0.0, abs=1e-12)
    assert idm_accel(1e9, 25.0, 25.0, AGG.idm) == pytest.approx(0.0, abs=1e-9)


def test_profile_values():
    assert (CON.idm.a_max, CON.idm.b_com, CON.idm.T, CON.idm.v0) == (1.0, 2.0, 2.5, 18.0)
    assert (CON.mobil.p, CON.mobil.a_th) == (0.2, 0.4)
    assert (AGG.idm.a_max, AGG.idm.b_com, AGG.idm.T, AGG.idm.v0) == (2.5, 3.0, 0.8, 25.0)
    assert (AGG.mobil.p, AGG.mobil.a_th) == (0.05, 0.2)
    assert set(PROFILES) == {"conservative", "aggressive"}
    with pytest.raises(ValueError):
        profile("timid")


def test_parameter_invariants():
    with pytest.raises(ValueError):
        IdmParams(a_max=0.0, b_com=2.0, T=1.0, v0=10.0)
    with pytest.raises(ValueError):
        MobilParams(p=1.5, a_th=0.1)
    with pytest.raises(ValueError):
        MobilParams(p=0.5, a_th=0.0)


def test_matches_formula_at_desired_gap():
    p = CON.idm
    gap = p.s0 + 18.0 * 2.5
    ref = idm_reference(gap, 18.0, 18.0, 1.0, 2.0, 2.5, 18.0)
    assert idm_accel(gap, 18.0, 18.0, p) == pytest.approx(ref, rel=1e-12)
    assert ref == pytest.approx(-1.0)


def test_matches_formula_random(rng):
    for _ in range(200):
        prof = PROFILES[rng.choice(list(PROFILES))].idm
        gap, v, vl = rng.uniform(1, 150), rng.uniform(0, 30), rng.uniform(0, 30)
        ref = np.clip(idm_reference(gap, v, vl, prof.a_max, prof.b_com, prof.T, prof.v0), EMERGENCY_DECEL, prof.a_max)
        assert idm_accel(gap, v, vl, prof) == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_vectorised_and_contact():
    gaps = np.array([-1.0, 0.0, 10.0, np.inf])
    a = idm_accel(gaps, np.full(4, 18.0), np.full(4, 18.0), CON.idm)
    assert a[0] == a[1] == EMERGENCY_DECEL
    assert a[2] == pytest.approx(idm_accel(10.0, 18.0, 18.0, CON.idm))
    assert a[3] == pytest.approx(0.0)


def test_monotone_in_gap_and_desired_gap(rng):
    p = AGG.idm
    for _ in range(100):
        v, vl = rng.uniform(0, 30), rng.uniform(0, 30)
        gaps = np.sort(rng.uniform(0.5, 200, 20))
        assert np.all(np.diff(idm_accel(gaps, v, vl, p)) >= -1e-12)
        # a larger desired gap (through a longer time gap) never raises the acceleration
        tight = IdmParams(p.a_max, p.b_com, p.T, p.v0)
        loose = IdmParams(p.a_max, p.b_com, p.T * 1.5, p.v0)
        g = rng.uniform(0.5, 200)
        assert idm_accel(g, v, vl, loose) <= idm_accel(g, v, vl, tight) + 1e-12


@pytest.mark.parametrize("label", ["conservative", "aggressive"])
def test_equilibrium_gap(label):
    p = PROFILES[label].idm
    v = p.v0 / 2
    numeric = brentq(lambda s: idm_accel(s, v, v, p), 0.1, 1e4, xtol=1e-12)
    analytic = (p.s0 + v * p.T) / np.sqrt(1 - (v / p.v0) ** p.delta)
    assert numeric == pytest.approx(analytic, abs=1e-6)


# -- MOBIL ------------------------------------------------------------------------------
def test_blocked_ego_changes_to_empty_lane():
    ctx = LaneChangeContext(v=18.0, leader=Neighbor(5.0, 5.0))
    d = mobil_decide(ctx, AGG.mobil, AGG.idm)
    assert d.change and d.safe and d.incentive > 1.0


def test_incentive_below_threshold_stays():
    # target leader slightly further ahead than the own leader: small gain only
    m, idm = CON.mobil, CON.idm
    own, target = Neighbor(60.0, 18.0), Neighbor(61.0, 18.0)
    gain = idm_accel(61.0, 18.0, 18.0, idm) - idm_accel(60.0, 18.0, 18.0, idm)
    assert 0 < gain < m.a_th
    d = mobil_decide(LaneChangeContext(18.0, own, target), m, idm)
    assert d.incentive == pytest.approx(gain) and not d.armed and not d.change
    # the same situation with a bias that lifts it just over the threshold arms it
    d2 = mobil_decide(LaneChangeContext(18.0, own, target, bias=m.a_th - gain + 1e-9), m, idm)
    assert d2.armed


def test_politeness_weighs_follower():
    m, idm = CON.mobil, CON.idm
    ctx = LaneChangeContext(18.0, Neighbor(5.0, 10.0), Neighbor(80.0, 18.0), Neighbor(30.0, 18.0))
    d = mobil_decide(ctx, m, idm)
    tl, tf = ctx.target_leader, ctx.target_follower
    f_old = idm_accel(tf.gap + 5.0 + tl.gap, tf.v, tl.v, idm)
    f_new = idm_accel(tf.gap, tf.v, 18.0, idm)
    a_old = idm_accel(5.0, 18.0, 10.0, idm)
    a_new = idm_accel(80.0, 18.0, 18.0, idm)
    assert d.incentive == pytest.approx(a_new - a_old + m.p * (f_new - f_old))


def test_unsafe_gap_blocks_change():
    ctx = LaneChangeContext(18.0, Neighbor(5.0, 5.0), None, Neighbor(2.0, 25.0))
    d = mobil_decide(ctx, AGG.mobil, AGG.idm)
    assert d.armed and not d.safe and not d.change
    assert d.follower_accel < -AGG.mobil.b_safe


def test_follower_model_used():
    class Stubborn:
        def accel(self, gap, v, v_lead):
            return -10.0

    ctx = LaneChangeContext(18.0, Neighbor(5.0, 5.0), None, Neighbor(50.0, 18.0, Stubborn()))
    assert not mobil_decide(ctx, AGG.mobil, AGG.idm).safe
