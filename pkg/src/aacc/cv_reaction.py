"""Best response of the competing vehicle as a Stackelberg follower.

The follower minimises

    1/2 sum_{n<N} (x_n - x_des)' Q (x_n - x_des) + u_n' R u_n

over its own inputs ``u_n = (a_cv, delta_f)`` given the leader's accelerations
``w_n``. Backward dynamic programming with the value function
``V_n(x) = 1/2 x' M_n x + o_n' x`` gives the affine law

    u_n = J_n x_n + G_n w_n + F_n + E_n,    E_n = sum_{j>n} Etilde[n, j] w_j

where ``F`` collects the desired-state feedforward and ``E`` the influence of
the leader's announced future actions, carried through ``o_n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from aacc.dynamics import CvControl, EvControl, LinearDynamics, SystemState
from aacc.style import CvDesired, StyleParams

STEER_REGULARIZATION = 1e-6


class SingularReactionError(np.linalg.LinAlgError):
    """``C' M C + R`` could not be inverted even after regularisation."""


@dataclass(frozen=True, eq=False)
class RiccatiState:
    m_seq: np.ndarray  # (N+1, 5, 5), m_seq[N] = 0
    o_seq: np.ndarray  # (N+1, 5), affine term for the stored leader plan
    f_seq: np.ndarray  # (N+1, 5), part of o driven by the desired state
    s_seq: np.ndarray  # (N, 5, 5), propagation of o through one step
    t_seq: np.ndarray  # (N, 5), injection of w_n into o_n

    @property
    def horizon(self) -> int:
        return len(self.s_seq)


@dataclass(frozen=True, eq=False)
class ReactionLaw:
    j_seq: np.ndarray  # (N, 2, 5)
    g_seq: np.ndarray  # (N, 2)
    f_seq: np.ndarray  # (N, 2)
    e_blocks: np.ndarray  # (N, N, 2); e_blocks[n, j] = 0 for j <= n
    u_ev_plan: np.ndarray = field(default=None)  # (N,)

    def __post_init__(self):
        if self.u_ev_plan is None:
            object.__setattr__(self, "u_ev_plan", np.zeros(self.horizon))

    @property
    def horizon(self) -> int:
        return len(self.j_seq)

    @property
    def e_seq(self) -> np.ndarray:
        return np.einsum("njk,j->nk", self.e_blocks, self.u_ev_plan)

    def with_ev_plan(self, u_ev_plan) -> "ReactionLaw":
        u = np.asarray(u_ev_plan, dtype=float).ravel()
        if u.shape != (self.horizon,):
            raise ValueError(f"leader plan must have {self.horizon} entries")
        return replace(self, u_ev_plan=u)

    @classmethod
    def zero(cls, N: int) -> "ReactionLaw":
        return cls(np.zeros((N, 2, 5)), np.zeros((N, 2)), np.zeros((N, 2)), np.zeros((N, N, 2)))


def _as_sequence(dyn_seq, N):
    if isinstance(dyn_seq, LinearDynamics):
        if N is None:
            raise ValueError("horizon N is required with a single LinearDynamics")
        return [dyn_seq] * N
    dyn_seq = list(dyn_seq)
    if N is not None and len(dyn_seq) != N:
        raise ValueError(f"expected {N} dynamics, got {len(dyn_seq)}")
    return dyn_seq


def backward_pass(
    beta: StyleParams,
    dyn_seq: LinearDynamics | Sequence[LinearDynamics],
    desired: CvDesired = CvDesired(),
    N: int | None = None,
    u_ev_plan=None,
    eps: float = STEER_REGULARIZATION,
) -> tuple[ReactionLaw, RiccatiState]:
    """Solve the follower LQR backwards from ``M_N = 0, o_N = 0``."""
    dyns = _as_sequence(dyn_seq, N)
    N = len(dyns)
    if N < 1:
        raise ValueError("horizon must be at least one step")
    bvec = beta.as_vector()
    if np.any(bvec < 0):
        raise ValueError("style weights must be nonnegative")
    Q = beta.state_weights()
    R = np.diag([bvec[2], eps])
    qx = Q @ desired.as_array()
    w = np.zeros(N) if u_ev_plan is None else np.asarray(u_ev_plan, dtype=float).ravel()

    M = np.zeros((N + 1, 5, 5))
    f = np.zeros((N + 1, 5))
    o = np.zeros((N + 1, 5))
    S = np.zeros((N, 5, 5))
    T = np.zeros((N, 5))
    J = np.zeros((N, 2, 5))
    G = np.zeros((N, 2))
    F = np.zeros((N, 2))
    K = np.zeros((N, 2, 5))  # -(C'MC + R)^-1 C'
    eye = np.eye(5)
    for n in range(N - 1, -1, -1):
        A, B, C = dyns[n].a_d, dyns[n].b_d[:, 0], dyns[n].c_d
        M1 = M[n + 1]
        H = C.T @ M1 @ C + R
        if np.linalg.cond(H) > 1e14:
            raise SingularReactionError(f"follower Hessian singular at step {n}")
        K[n] = -np.linalg.solve(H, C.T)
        J[n] = K[n] @ M1 @ A
        G[n] = K[n] @ M1 @ B
        F[n] = K[n] @ f[n + 1]
        Pi = eye + C @ K[n] @ M1
        S[n] = A.T @ Pi.T
        T[n] = S[n] @ M1 @ B
        Mn = Q + A.T @ M1 @ Pi @ A
        M[n] = 0.5 * (Mn + Mn.T)
        f[n] = S[n] @ f[n + 1] - qx
        o[n] = S[n] @ o[n + 1] + T[n] * w[n] - qx

    E = np.zeros((N, N, 2))
    for n in range(N - 1):
        chain = eye
        for j in range(n + 1, N):
            E[n, j] = K[n] @ chain @ T[j]
            chain = chain @ S[j]

    law = ReactionLaw(J, G, F, E, w.copy())
    return law, RiccatiState(M, o, f, S, T)


def estimate_reaction(law: ReactionLaw, x: SystemState, u_ev: EvControl, n: int) -> CvControl:
    """Follower's best response at step ``n`` to the leader's current action."""
    if not 0 <= n < law.horizon:
        raise IndexError(f"step {n} outside horizon {law.horizon}")
    u = law.j_seq[n] @ x.as_array() + law.g_seq[n] * u_ev.a_ev + law.f_seq[n] + law.e_seq[n]
    return CvControl(float(u[0]), float(u[1]))


def rollout(law: ReactionLaw, dyn_seq, x0: SystemState, u_ev_seq):
    """Simulate the linear closed loop; returns states (N+1, 5) and follower inputs (N, 2)."""
    N = law.horizon
    dyns = _as_sequence(dyn_seq, N)
    w = np.asarray(u_ev_seq, dtype=float).ravel()
    law = law.with_ev_plan(w)
    e = law.e_seq
    X = np.zeros((N + 1, 5))
    U = np.zeros((N, 2))
    X[0] = x0.as_array()
    for n in range(N):
        U[n] = law.j_seq[n] @ X[n] + law.g_seq[n] * w[n] + law.f_seq[n] + e[n]
        d = dyns[n]
        X[n + 1] = d.a_d @ X[n] + d.b_d[:, 0] * w[n] + d.c_d @ U[n]
    return X, U


def follower_cost(X, U, beta: StyleParams, desired: CvDesired = CvDesired(), eps: float = STEER_REGULARIZATION) -> float:
    """Follower objective over ``x_0..x_{N-1}`` and ``u_0..u_{N-1}``."""
    N = len(U)
    Q = beta.state_weights()
    R = np.diag([beta.beta_long[2], eps])
    dev = np.asarray(X)[:N] - desired.as_array()
    return 0.5 * float(np.einsum("ni,ij,nj->", dev, Q, dev) + np.einsum("ni,ij,nj->", U, R, U))
