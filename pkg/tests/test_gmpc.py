import numpy as np
import pytest
from oracles import cvxopt_qp

from aacc.cv_reaction import ReactionLaw, backward_pass, rollout
from aacc.dynamics import SystemState, linearize
from aacc.gmpc import (
    OPTIMAL,
    RELAXED,
    EvObjective,
    GmpcConfig,
    assemble,
    build_bounds,
    build_cost,
    build_dynamics_constraint,
    cost_offset,
    plan,
    solve,
)
from aacc.qp import QpError, solve_active_set
from aacc.style import AGGRESSIVE_STYLE, CONSERVATIVE_STYLE, CvDesired, StyleParams

CFG = GmpcConfig(cv_desired=CvDesired(25.0, 18.0, 0.0))
X0 = SystemState(20.0, 18.0, 18.0, 3.5, 0.0)


def random_instance(rng, N=10):
    x0 = SystemState(rng.uniform(-10, 50), rng.uniform(0, 25), rng.uniform(5, 25), rng.uniform(0, 3.5), rng.uniform(-0.05, 0.05))
    beta = StyleParams.from_vector(rng.uniform(0.01, 5.0, 5))
    obj = EvObjective(*rng.uniform(0.1, 20, 3), delta_x_des_ev=rng.choice([0.0, 25.0]), v_des_ev=18.0)
    cfg = GmpcConfig(horizon=N, cv_desired=CvDesired(25.0, 18.0, rng.choice([0.0, 3.5])))
    dyns = [linearize(x0, cfg.dt)] * N
    law, ric = backward_pass(beta, dyns, cfg.cv_desired)
    return assemble(x0, law, obj, cfg, dyns, ric), (x0, beta, obj, cfg, dyns, law)


# -- cost -------------------------------------------------------------------------------
def test_state_weight_matrix():
    np.testing.assert_array_equal(EvObjective().q_ev, np.diag([10.0, 10.0, 0.0, 0.0, 0.0]))


def test_cost_zero_at_target():
    obj, N = EvObjective(), 10
    H, q = build_cost(obj, N)
    z = np.concatenate([np.tile(obj.x_des, N + 1), np.zeros(N)])
    assert 0.5 * z @ H @ z + q @ z + cost_offset(obj, N) == pytest.approx(0.0, abs=1e-9)


def test_cost_matches_termwise_sum(rng):
    obj, N = EvObjective(3.0, 7.0, 0.5, 25.0, 18.0), 10
    H, q = build_cost(obj, N)
    X = rng.normal(size=(N + 1, 5)) * 10
    U = rng.normal(size=N)
    z = np.concatenate([X.ravel(), U])
    direct = sum(0.5 * (X[n] - obj.x_des) @ obj.q_ev @ (X[n] - obj.x_des) + 0.5 * obj.theta3 * U[n] ** 2 for n in range(N))
    assert 0.5 * z @ H @ z + q @ z + cost_offset(obj, N) == pytest.approx(direct, rel=1e-9)


def test_objective_rejects_negative_weight():
    with pytest.raises(ValueError):
        EvObjective(theta1=-1.0)


def test_desired_distance_switches_on_style():
    assert EvObjective.for_style(CONSERVATIVE_STYLE).delta_x_des_ev == 0.0
    assert EvObjective.for_style(AGGRESSIVE_STYLE).delta_x_des_ev == 25.0
    assert EvObjective.for_style(None).delta_x_des_ev == 25.0


# -- constraints ------------------------------------------------------------------------
def test_zero_law_is_open_loop_dynamics(rng):
    N = 6
    dyns = [linearize(X0, 0.1)] * N
    lhs, rhs = build_dynamics_constraint(dyns, ReactionLaw.zero(N), None, X0)
    U = rng.normal(size=N)
    X = [X0.as_array()]
    for n in range(N):
        X.append(dyns[n].a_d @ X[-1] + dyns[n].b_d[:, 0] * U[n])
    z = np.concatenate([np.ravel(X), U])
    np.testing.assert_allclose(lhs @ z, rhs, atol=1e-12)


def test_closed_loop_rollout_satisfies_equality(rng):
    for _ in range(10):
        problem, (x0, beta, obj, cfg, dyns, law) = random_instance(rng)
        U = rng.uniform(-3, 3, cfg.horizon)
        X, _ = rollout(law, dyns, x0, U)
        z = np.concatenate([X.ravel(), U])
        np.testing.assert_allclose(problem.eq_lhs @ z, problem.eq_rhs, atol=1e-9)


def test_initial_rows_pin_measured_state():
    problem, (x0, *_rest) = random_instance(np.random.default_rng(0))
    np.testing.assert_array_equal(problem.eq_lhs[:5, :5], np.eye(5))
    assert not problem.eq_lhs[:5, 5:].any()
    np.testing.assert_array_equal(problem.eq_rhs[:5], x0.as_array())


def test_horizon_mismatch_rejected():
    dyns = [linearize(X0, 0.1)] * 3
    with pytest.raises(ValueError):
        build_dynamics_constraint(dyns, ReactionLaw.zero(4), None, X0)


def test_bounds_values():
    b = build_bounds(-3.5, 4.0, 18.0, 25.0, 0.1, 10)
    assert b.u_min.tolist() == [-3.5] * 10 and b.u_max.tolist() == [4.0] * 10
    np.testing.assert_allclose(b.v_min, -18.0)
    np.testing.assert_allclose(b.v_max, 7.0)
    cum = b.rows @ np.zeros(10)
    assert np.all((b.v_min <= cum) & (cum <= b.v_max))
    with pytest.raises(ValueError):
        build_bounds(4.0, -3.5, 18.0, 25.0, 0.1, 10)


# -- solve ------------------------------------------------------------------------------
def test_interior_optimum_is_stationary():
    problem, _ = random_instance(np.random.default_rng(1))
    wide = build_bounds(-1e6, 1e6, 1e5, 2e5, 0.1, problem.n_inputs)
    problem = type(problem)(problem.hessian, problem.linear, problem.eq_lhs, problem.eq_rhs, wide, problem.offset)
    z, _, status, _ = solve(problem)
    assert status == OPTIMAL
    # KKT: H z + q = E' lambda for some multiplier
    grad = problem.hessian @ z + problem.linear
    lam, *_ = np.linalg.lstsq(problem.eq_lhs.T, grad, rcond=None)
    assert np.abs(problem.eq_lhs.T @ lam - grad).max() < 1e-8 * max(1.0, np.abs(grad).max())


def test_matches_reference_solver(rng):
    for _ in range(20):
        N = int(rng.integers(2, 21))
        problem, _ = random_instance(rng, N)
        z, cost, status, _ = solve(problem)
        z_ref, cost_ref, ref_status = cvxopt_qp(problem)
        assert ref_status == "optimal" and status == OPTIMAL
        assert abs(cost - cost_ref) <= 1e-6 * max(1.0, abs(cost_ref))
        u = z[problem.n_states:]
        assert np.linalg.norm(u - z_ref[problem.n_states:]) <= 1e-5


def test_solution_satisfies_constraints(rng):
    for _ in range(20):
        problem, _ = random_instance(rng)
        z, *_ = solve(problem)
        np.testing.assert_allclose(problem.eq_lhs @ z, problem.eq_rhs, atol=1e-6)
        G, h = problem.inequality_matrix()
        assert np.all(G @ z[problem.n_states:] <= h + 1e-8)


def test_infeasible_speed_rows_relaxed():
    # above the limit and unable to shed the excess within one horizon
    res = plan(SystemState(20.0, 30.0, 18.0), AGGRESSIVE_STYLE, EvObjective(), CFG)
    assert res.status == RELAXED
    assert np.all(res.u_ev_seq >= CFG.a_min - 1e-9) and np.all(res.u_ev_seq <= CFG.a_max + 1e-9)
    assert res.u_ev_seq[0] == pytest.approx(CFG.a_min)


# -- plan -------------------------------------------------------------------------------
def test_plan_reproduces_closed_loop():
    res = plan(X0, AGGRESSIVE_STYLE, EvObjective(), CFG)
    dyns = [linearize(X0, CFG.dt)] * CFG.horizon
    X, U = rollout(res.law, dyns, X0, res.u_ev_seq)
    np.testing.assert_allclose(X, res.x_seq, atol=1e-6)
    np.testing.assert_allclose(U, res.u_cv_pred, atol=1e-6)


def test_cruise_without_competitor_holds_speed():
    res = plan(SystemState(1e4, 18.0, 18.0), None, EvObjective(theta1=0.0), CFG)
    np.testing.assert_allclose(res.u_ev_seq, 0.0, atol=1e-9)
    assert res.x_seq[-1, 1] == pytest.approx(18.0)


def test_receding_horizon_reaches_desired_speed():
    x = SystemState(1e4, 8.0, 18.0)
    obj = EvObjective(theta1=0.0)
    dyn = linearize(x, CFG.dt)
    v = []
    for _ in range(100):
        a = plan(x, None, obj, CFG).first_accel
        x = SystemState.from_array(dyn.a_d @ x.as_array() + dyn.b_d[:, 0] * a)
        v.append(x.v_ev)
    assert abs(v[-1] - 18.0) < 0.05
    assert max(v) <= CFG.v_lim


def test_conservative_style_accelerates():
    res = plan(X0, CONSERVATIVE_STYLE, EvObjective(delta_x_des_ev=0.0), CFG)
    assert res.first_accel > 0


def test_aggressive_style_yields():
    res = plan(X0, AGGRESSIVE_STYLE, EvObjective(delta_x_des_ev=25.0), CFG)
    assert res.first_accel < 0


def test_comfort_weight_shrinks_inputs(rng):
    for _ in range(10):
        problem, (x0, beta, obj, cfg, *_rest) = random_instance(rng)
        heavy = EvObjective(obj.theta1, obj.theta2, 10 * obj.theta3, obj.delta_x_des_ev, obj.v_des_ev)
        u1 = plan(x0, beta, obj, cfg).u_ev_seq
        u2 = plan(x0, beta, heavy, cfg).u_ev_seq
        assert np.linalg.norm(u2) <= np.linalg.norm(u1) + 1e-9


def test_warm_start_gives_same_answer():
    cold = plan(X0, AGGRESSIVE_STYLE, EvObjective(), CFG)
    warm = plan(X0, AGGRESSIVE_STYLE, EvObjective(), CFG, warm_start=cold.u_ev_seq)
    np.testing.assert_allclose(warm.u_ev_seq, cold.u_ev_seq, atol=1e-8)


def test_single_plan_fast():
    plan(X0, AGGRESSIVE_STYLE, EvObjective(), CFG)
    assert plan(X0, AGGRESSIVE_STYLE, EvObjective(), CFG).solve_time < 0.05


# -- active set -------------------------------------------------------------------------
def test_active_set_box():
    # min (x-2)^2 + (y+1)^2 on [0,1]^2 -> (1, 0)
    sol = solve_active_set(2 * np.eye(2), np.array([-4.0, 2.0]),
                           np.vstack([np.eye(2), -np.eye(2)]), np.array([1.0, 1.0, 0.0, 0.0]), np.array([0.5, 0.5]))
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-12)
    assert np.all(sol.multipliers >= -1e-12)


def test_active_set_rejects_infeasible_start():
    with pytest.raises(QpError):
        solve_active_set(np.eye(1), np.zeros(1), np.eye(1), np.zeros(1), np.ones(1))
