import json

import numpy as np
import pytest

from aacc.simulator import (
    AccParams,
    Leader,
    Scenario,
    World,
    baseline_acc_control,
    compute_metrics,
    run,
    run_function_validation,
    run_traffic_flow,
)
from aacc.simulator.world import BG, EV
from aacc.style import AGGRESSIVE_STYLE, CONSERVATIVE_STYLE
from aacc.traffic_models import PROFILES

_CACHE = {}


def fv(style, gap, controller="aacc", **kw):
    key = (style, gap, controller, tuple(sorted(kw.items())))
    if key not in _CACHE:
        _CACHE[key] = run(Scenario(cv_style=style, initial_gap=gap, controller=controller, **kw))
    return _CACHE[key]


def cv_outcome(log):
    """Where the CV ended its manoeuvre relative to the EV: 'ahead', 'behind' or None."""
    cv = log.role_ids("CV")[0]
    done = log.events_of(cv, "complete")
    if not done:
        return None
    return "ahead" if done[0].x_rel_ev > 0 else "behind"


# -- baseline ACC -----------------------------------------------------------------------
def test_baseline_cruise_equilibrium():
    assert baseline_acc_control(18.0, None) == 0.0


def test_baseline_gap_equilibrium():
    p = AccParams()
    assert baseline_acc_control(15.0, Leader(p.T_set * 15.0, 15.0), p) == pytest.approx(0.0, abs=1e-12)


def test_baseline_brakes_for_cut_in():
    p = AccParams()
    a = baseline_acc_control(18.0, Leader(10.0, 18.0), p)
    expected = p.k_g * (10.0 - p.T_set * 18.0)
    assert a == pytest.approx(max(expected, p.a_min)) and a < 0


def test_baseline_never_exceeds_cruise_law(rng):
    p = AccParams()
    for _ in range(200):
        v = rng.uniform(0, 25)
        lead = Leader(rng.uniform(0, 100), rng.uniform(0, 30))
        assert baseline_acc_control(v, lead, p) <= baseline_acc_control(v, None, p) + 1e-12


@pytest.mark.parametrize("style", ["conservative", "aggressive"])
@pytest.mark.parametrize("gap", [10, 20, 30])
def test_baseline_is_yield_only(style, gap):
    log = fv(style, gap, "baseline")
    ev = log.vehicle(log.ev_id)
    assert ev["v"].max() <= AccParams().v_des + 1e-9
    assert not log.collision


# -- function validation ----------------------------------------------------------------
def test_aggressive_cv_cuts_in_ahead():
    log = fv("aggressive", 20)
    assert cv_outcome(log) == "ahead"
    assert (log.ev["a_ev"] < 0).any()
    assert not log.collision
    assert compute_metrics(log).min_gap > 0


def test_conservative_cv_declared_style_ends_behind():
    log = fv("conservative", 20, style_source="declared")
    cv = log.role_ids("CV")[0]
    assert log.events_of(cv, "abort")
    assert cv_outcome(log) == "behind"
    assert (log.ev["a_ev"] > 0).any()
    assert not log.collision


@pytest.mark.xfail(strict=True, reason="the identifier does not converge on an IDM-driven CV; see decisions ledger")
def test_conservative_cv_ends_behind():
    log = fv("conservative", 20)
    assert cv_outcome(log) == "behind"


def test_function_validation_logs():
    log = fv("aggressive", 20)
    sc = log.scenario
    t = np.unique(log.records["t"])
    np.testing.assert_allclose(np.diff(t), sc.dt, atol=1e-9)
    assert len(log.ev["a_ev"]) == len(t) - 1
    assert set(log.role_ids("EV")) == {log.ev_id} and len(log.role_ids("PV")) == 1
    assert np.all(log.ev["a_ev"] >= AccParams().a_min - 1e-12)
    assert np.all(log.ev["a_ev"] <= AccParams().a_max + 1e-12)
    assert len(log.solve_times) > 0 and max(log.solve_times) < 0.05
    json.dumps(log.summary())


def test_csv_export(tmp_path):
    log = fv("aggressive", 20)
    path = tmp_path / "run.csv"
    log.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,id,role,lane,x,y,v,psi,a_cmd"
    assert len(lines) == len(log.records["t"]) + 1


@pytest.mark.parametrize("beta", [AGGRESSIVE_STYLE, CONSERVATIVE_STYLE], ids=["aggressive", "conservative"])
def test_in_loop_identifier_recovers_harness_weights(beta):
    log = run(Scenario(cv_driver="lqr", cv_beta=beta, t_max=10.0))
    conv = np.flatnonzero(log.beta["converged"])
    assert conv.size
    k = conv[-1]
    est = np.array([log.beta[f"beta{i}"][k] for i in (1, 2, 3)])
    np.testing.assert_allclose(est, beta.beta_long, rtol=0.05)


def test_mode_mismatch_rejected():
    with pytest.raises(ValueError):
        run_function_validation(Scenario(mode="traffic_flow"))
    with pytest.raises(ValueError):
        run_traffic_flow(Scenario())


# -- traffic flow -----------------------------------------------------------------------
def test_empty_road_travel_time():
    for ctl in ("baseline", "aacc"):
        m = compute_metrics(run(Scenario(mode="traffic_flow", vc_ratio=0.0, controller=ctl)))
        assert m.travel_time_ev == pytest.approx(3000.0 / 18.0, abs=0.05)
        assert m.avg_speed_ev == pytest.approx(18.0, abs=1e-6)


def test_traffic_run_is_collision_free_and_logged():
    log = run(Scenario(mode="traffic_flow", vc_ratio=0.6, rng_seed=2, road_length=1200.0))
    assert not log.collision and log.ev_exit_time is not None
    lo, hi = log.scenario.log_window
    for t in np.unique(log.records["t"])[::50]:
        rows = log.records["t"] == t
        ev_x = log.records["x"][rows & (log.records["id"] == log.ev_id)]
        dx = log.records["x"][rows] - ev_x
        assert np.all((dx >= lo) & (dx <= hi))


def test_traffic_determinism():
    sc = Scenario(mode="traffic_flow", vc_ratio=0.6, rng_seed=4, road_length=1000.0)
    a, b = run(sc), run(sc)
    assert a == b
    c = run(sc.with_(rng_seed=5))
    assert a != c


def test_function_validation_determinism():
    sc = Scenario(cv_style="aggressive", initial_gap=10.0)
    assert run(sc) == run(sc)


# -- scenario and world -----------------------------------------------------------------
def test_scenario_defaults():
    sc = Scenario()
    assert (sc.road_length, sc.lane_width, sc.dt, sc.horizon, sc.v_lim) == (3000.0, 3.5, 0.1, 1.0, 25.0)
    assert sc.n_horizon == 10


def test_scenario_round_trip():
    sc = Scenario(cv_style="aggressive", initial_gap=30.0, cv_driver="lqr", cv_beta=AGGRESSIVE_STYLE)
    again = Scenario.from_dict(json.loads(json.dumps(sc.to_dict())))
    assert again == sc and again.digest() == sc.digest()
    assert Scenario().digest() != sc.digest()


@pytest.mark.parametrize("bad", [
    {"mode": "city"}, {"controller": "pid"}, {"cv_style": "timid"}, {"dt": 0.0}, {"vc_ratio": 1.5},
    {"horizon": 0.95}, {"cv_driver": "lqr"}, {"rng_seed": -1}, {"initial_gap": -1.0},
])
def test_scenario_validation(bad):
    with pytest.raises(ValueError):
        Scenario(**bad)


def test_unknown_scenario_field():
    with pytest.raises(ValueError):
        Scenario.from_dict({"gap": 10})


def test_collision_detection():
    w = World()
    w.add(EV, 0.0, 0, 18.0)
    w.add(BG, 3.0, 0, 18.0, style=0)
    w.add(BG, 3.0, 1, 18.0, style=0)
    assert len(w.collisions()) == 1


def test_human_profile_speeds():
    assert PROFILES["aggressive"].idm.v0 == 25.0 and PROFILES["conservative"].idm.v0 == 18.0
