"""Game-based MPC: the leader's QP with the follower's best response embedded.

Decision vector ``z = (x_0, ..., x_N, u_0, ..., u_{N-1})``. Substituting the
follower law into the stacked dynamics leaves one linear equality in ``z``;
inputs are boxed and the cumulative speed change is bounded by the speed
limit. States are eliminated through the equality and the remaining
inequality-constrained problem in the EV inputs is solved by active set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from aacc.cv_reaction import ReactionLaw, RiccatiState, backward_pass
from aacc.dynamics import LinearDynamics, SystemState, VehicleGeometry, linearize
from aacc.qp import solve_active_set
from aacc.style import CvDesired, StyleParams

OPTIMAL = "optimal"
RELAXED = "infeasible-relaxed"


@dataclass(frozen=True)
class EvObjective:
    theta1: float = 10.0
    theta2: float = 10.0
    theta3: float = 1.0
    delta_x_des_ev: float = 25.0
    v_des_ev: float = 18.0

    def __post_init__(self):
        if min(self.theta1, self.theta2, self.theta3) < 0:
            raise ValueError("objective weights must be nonnegative")

    @property
    def q_ev(self) -> np.ndarray:
        return np.diag([self.theta1, self.theta2, 0.0, 0.0, 0.0])

    @property
    def x_des(self) -> np.ndarray:
        return np.array([self.delta_x_des_ev, self.v_des_ev, 0.0, 0.0, 0.0])

    @classmethod
    def for_style(cls, style: StyleParams | None, threshold: float = 1.0, **kw) -> "EvObjective":
        """Desired gap 0 m against a conservative CV, 25 m otherwise (including unknown)."""
        gap = 0.0 if style is not None and not style.is_aggressive(threshold) else 25.0
        return cls(delta_x_des_ev=gap, **kw)


@dataclass(frozen=True)
class GmpcConfig:
    horizon: int = 10
    dt: float = 0.1
    a_min: float = -3.5
    a_max: float = 4.0
    v_lim: float = 25.0
    soft_penalty: float = 1e4
    cv_desired: CvDesired = field(default_factory=CvDesired)
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    discretization: str = "zoh"


@dataclass(frozen=True, eq=False)
class SpeedBounds:
    u_min: np.ndarray
    u_max: np.ndarray
    rows: np.ndarray  # lower-triangular dt matrix
    v_min: np.ndarray
    v_max: np.ndarray


@dataclass(frozen=True, eq=False)
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    eq_lhs: np.ndarray
    eq_rhs: np.ndarray
    bounds: SpeedBounds
    offset: float = 0.0
    soft_penalty: float = 1e4

    @property
    def n_inputs(self) -> int:
        return len(self.bounds.u_min)

    @property
    def n_states(self) -> int:
        return self.hessian.shape[0] - self.n_inputs

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.hessian @ z + self.linear @ z + self.offset)

    def inequality_matrix(self):
        """All inequalities on the inputs as ``G u <= h``."""
        b = self.bounds
        eye = np.eye(self.n_inputs)
        G = np.vstack([eye, -eye, b.rows, -b.rows])
        h = np.concatenate([b.u_max, -b.u_min, b.v_max, -b.v_min])
        return G, h


@dataclass(frozen=True, eq=False)
class PlanResult:
    u_ev_seq: np.ndarray
    x_seq: np.ndarray
    u_cv_pred: np.ndarray
    cost: float
    solve_time: float
    status: str = OPTIMAL
    law: ReactionLaw | None = None

    @property
    def first_accel(self) -> float:
        return float(self.u_ev_seq[0])


def build_cost(obj: EvObjective, N: int):
    """Block-diagonal Hessian and linear term over ``(X, U)``.

    The constant ``1/2 sum x_des' Q x_des`` is returned separately by
    :func:`cost_offset` so that a trajectory sitting at the target costs zero.
    """
    if N < 1:
        raise ValueError("horizon must be at least one step")
    nx = 5 * (N + 1)
    H = np.zeros((nx + N, nx + N))
    q = np.zeros(nx + N)
    Q = obj.q_ev
    qx = -Q @ obj.x_des
    for n in range(N):
        H[5 * n:5 * n + 5, 5 * n:5 * n + 5] = Q
        q[5 * n:5 * n + 5] = qx
    H[nx:, nx:] = obj.theta3 * np.eye(N)
    return H, q


def cost_offset(obj: EvObjective, N: int) -> float:
    return 0.5 * N * float(obj.x_des @ obj.q_ev @ obj.x_des)


def build_dynamics_constraint(
    dyn_seq: Sequence[LinearDynamics],
    law: ReactionLaw,
    riccati: RiccatiState | None,
    x0: SystemState,
):
    """Initial-condition rows followed by the closed-loop dynamics rows.

    Row block ``n+1`` encodes
    ``x_{n+1} = (A + C J) x_n + (B + C G) u_n + C sum_{j>n} Et[n, j] u_j + C F``.
    """
    dyns = list(dyn_seq)
    N = law.horizon
    if len(dyns) != N or (riccati is not None and riccati.horizon != N):
        raise ValueError("dynamics, reaction law and Riccati horizons differ")
    nx = 5 * (N + 1)
    lhs = np.zeros((nx, nx + N))
    rhs = np.zeros(nx)
    lhs[:5, :5] = np.eye(5)
    rhs[:5] = x0.as_array()
    for n, d in enumerate(dyns):
        r = 5 * (n + 1)
        A, B, C = d.a_d, d.b_d[:, 0], d.c_d
        lhs[r:r + 5, r:r + 5] = np.eye(5)
        lhs[r:r + 5, 5 * n:5 * n + 5] = -(A + C @ law.j_seq[n])
        lhs[r:r + 5, nx + n] = -(B + C @ law.g_seq[n])
        if n + 1 < N:
            lhs[r:r + 5, nx + n + 1:] = -(C @ law.e_blocks[n, n + 1:].T)
        rhs[r:r + 5] = C @ law.f_seq[n]
    return lhs, rhs


def build_bounds(a_min: float, a_max: float, v0_ev: float, v_lim: float, dt: float, N: int) -> SpeedBounds:
    if a_min >= a_max:
        raise ValueError("acceleration bounds are inverted")
    if dt <= 0 or N < 1:
        raise ValueError("need dt > 0 and N >= 1")
    rows = dt * np.tril(np.ones((N, N)))
    return SpeedBounds(
        np.full(N, float(a_min)),
        np.full(N, float(a_max)),
        rows,
        np.full(N, -float(v0_ev)),
        np.full(N, float(v_lim) - float(v0_ev)),
    )


def _feasible_inputs(b: SpeedBounds):
    """A point inside the box and the speed rows, or None when there is none.

    Reachable cumulative speed changes form an interval at each step; a backward
    sweep then picks a consistent sequence.
    """
    N = len(b.u_min)
    dt = b.rows[0, 0]
    lo = np.zeros(N)
    hi = np.zeros(N)
    prev_lo = prev_hi = 0.0
    for k in range(N):
        lo[k] = max(prev_lo + dt * b.u_min[k], b.v_min[k])
        hi[k] = min(prev_hi + dt * b.u_max[k], b.v_max[k])
        if lo[k] > hi[k] + 1e-12:
            return None
        prev_lo, prev_hi = lo[k], hi[k]
    c = np.zeros(N)
    c[-1] = np.clip(0.0, lo[-1], hi[-1])
    for k in range(N - 2, -1, -1):
        c[k] = np.clip(c[k + 1], max(lo[k], c[k + 1] - dt * b.u_max[k + 1]), min(hi[k], c[k + 1] - dt * b.u_min[k + 1]))
    return np.diff(np.concatenate([[0.0], c])) / dt


def _eliminate_states(problem: QpProblem):
    """Write ``z = z_c + Z u`` from the equality rows; returns ``(z_c, Z)``."""
    ns = problem.n_states
    E_x = problem.eq_lhs[:, :ns]
    E_u = problem.eq_lhs[:, ns:]
    if E_x.shape[0] != ns:
        raise ValueError("equality rows must determine the states")
    sol = np.linalg.solve(E_x, np.column_stack([problem.eq_rhs, -E_u]))
    z_c = np.concatenate([sol[:, 0], np.zeros(problem.n_inputs)])
    Z = np.vstack([sol[:, 1:], np.eye(problem.n_inputs)])
    return z_c, Z


def solve(problem: QpProblem, x_start=None) -> tuple[np.ndarray, float, str, float]:
    """Global minimiser of the planning QP.

    Returns ``(z, cost, status, seconds)``. When the speed rows cannot be met
    inside the acceleration box they are softened with a quadratic penalty
    on nonnegative slacks and the status reads ``infeasible-relaxed``.
    """
    t0 = time.perf_counter()
    z_c, Z = _eliminate_states(problem)
    H = Z.T @ problem.hessian @ Z
    g = Z.T @ (problem.hessian @ z_c + problem.linear)
    H = 0.5 * (H + H.T)
    G, h = problem.inequality_matrix()

    start = None
    if x_start is not None and np.all(G @ x_start <= h + 1e-9):
        start = np.asarray(x_start, dtype=float)
    if start is None:
        start = _feasible_inputs(problem.bounds)
    status = OPTIMAL
    if start is not None:
        u = solve_active_set(H, g, G, h, start).x
    else:
        status = RELAXED
        u = _solve_relaxed(problem, H, g)
    z = z_c + Z @ u
    return z, problem.objective(z), status, time.perf_counter() - t0


def _solve_relaxed(problem: QpProblem, H, g):
    b = problem.bounds
    rho = problem.soft_penalty
    N = problem.n_inputs
    # variables (u, s_hi, s_lo), slacks nonnegative
    Hs = np.zeros((3 * N, 3 * N))
    Hs[:N, :N] = H
    Hs[N:, N:] = rho * np.eye(2 * N)
    gs = np.concatenate([g, np.zeros(2 * N)])
    eye, zero = np.eye(N), np.zeros((N, N))
    G = np.block([
        [eye, zero, zero],
        [-eye, zero, zero],
        [b.rows, -eye, zero],
        [-b.rows, zero, -eye],
        [zero, -eye, zero],
        [zero, zero, -eye],
    ])
    h = np.concatenate([b.u_max, -b.u_min, b.v_max, -b.v_min, np.zeros(2 * N)])
    u0 = np.clip(0.0, b.u_min, b.u_max)
    cum = b.rows @ u0
    s0 = np.concatenate([np.maximum(cum - b.v_max, 0.0), np.maximum(b.v_min - cum, 0.0)])
    return solve_active_set(Hs, gs, G, h, np.concatenate([u0, s0])).x[:N]


def assemble(x0: SystemState, law: ReactionLaw, obj: EvObjective, config: GmpcConfig, dyn_seq=None, riccati=None) -> QpProblem:
    N = config.horizon
    if dyn_seq is None:
        dyn_seq = [linearize(x0, config.dt, config.geom, config.discretization)] * N
    H, q = build_cost(obj, N)
    lhs, rhs = build_dynamics_constraint(dyn_seq, law, riccati, x0)
    bounds = build_bounds(config.a_min, config.a_max, max(x0.v_ev, 0.0), config.v_lim, config.dt, N)
    return QpProblem(H, q, lhs, rhs, bounds, cost_offset(obj, N), config.soft_penalty)


def plan(
    x0: SystemState,
    beta: StyleParams | None,
    obj: EvObjective = EvObjective(),
    config: GmpcConfig = GmpcConfig(),
    warm_start=None,
) -> PlanResult:
    """One leader decision: follower law, constraint assembly, QP solve.

    ``beta=None`` means no competing vehicle is engaged; the follower then
    keeps its inputs at zero. ``warm_start`` is the previous cycle's input
    sequence and only seeds the active-set iteration.
    """
    t0 = time.perf_counter()
    N = config.horizon
    dyn_seq = [linearize(x0, config.dt, config.geom, config.discretization)] * N
    if beta is None:
        law, riccati = ReactionLaw.zero(N), None
    else:
        law, riccati = backward_pass(beta, dyn_seq, config.cv_desired)
    problem = assemble(x0, law, obj, config, dyn_seq, riccati)
    start = None
    if warm_start is not None:
        start = np.concatenate([np.asarray(warm_start, dtype=float)[1:], [0.0]])
    z, cost, status, _ = solve(problem, start)
    nx = problem.n_states
    u = z[nx:]
    X = z[:nx].reshape(N + 1, 5)
    law = law.with_ev_plan(u)
    e = law.e_seq
    u_cv = np.array([law.j_seq[n] @ X[n] + law.g_seq[n] * u[n] + law.f_seq[n] + e[n] for n in range(N)])
    return PlanResult(u, X, u_cv, cost, time.perf_counter() - t0, status, law)
