"""Joint EV/CV kinematics.

State ordering is ``(dx, v_ev, v_cv, y_cv, psi_cv)`` where ``dx = x_cv - x_ev``
is the signed longitudinal distance (positive when the CV is ahead of the EV).
The EV moves longitudinally only; the CV follows a kinematic bicycle model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_DIM = 5
DX, V_EV, V_CV, Y_CV, PSI_CV = range(STATE_DIM)
MAX_STEER = 0.5


@dataclass(frozen=True)
class VehicleGeometry:
    l_r: float = 2.0
    l_f: float = 2.0

    def __post_init__(self):
        if self.l_r <= 0 or self.l_f <= 0:
            raise ValueError("axle distances must be positive")

    @property
    def wheelbase(self) -> float:
        return self.l_r + self.l_f


@dataclass(frozen=True)
class SystemState:
    delta_x: float
    v_ev: float
    v_cv: float
    y_cv: float = 0.0
    psi_cv: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_x, self.v_ev, self.v_cv, self.y_cv, self.psi_cv], dtype=float)

    @classmethod
    def from_array(cls, x) -> "SystemState":
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (STATE_DIM,):
            raise ValueError(f"expected a {STATE_DIM}-vector, got shape {x.shape}")
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class EvControl:
    a_ev: float = 0.0


@dataclass(frozen=True)
class CvControl:
    a_cv: float = 0.0
    delta_f: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a_cv, self.delta_f], dtype=float)


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    """Discrete model ``x+ = a_d x + b_d u_ev + c_d u_cv``."""

    a_d: np.ndarray
    b_d: np.ndarray
    c_d: np.ndarray
    dt: float


def continuous_matrices(state: SystemState, geom: VehicleGeometry = VehicleGeometry()):
    """Linearize the joint kinematics about ``psi = 0, phi = 0`` at the current CV speed.

    Returns ``(A, B, C)`` with shapes (5, 5), (5, 1), (5, 2). ``C`` is obtained by
    differentiating the bicycle model: steering enters the lateral rate with
    ``v l_r / (l_f + l_r)`` and the yaw rate with ``v / (l_f + l_r)``.
    """
    v = float(state.v_cv)
    A = np.zeros((STATE_DIM, STATE_DIM))
    A[DX, V_EV] = -1.0
    A[DX, V_CV] = 1.0
    A[Y_CV, PSI_CV] = v
    B = np.zeros((STATE_DIM, 1))
    B[V_EV, 0] = 1.0
    C = np.zeros((STATE_DIM, 2))
    C[V_CV, 0] = 1.0
    C[Y_CV, 1] = v * geom.l_r / geom.wheelbase
    C[PSI_CV, 1] = v / geom.wheelbase
    return A, B, C


def discretize(A, B, C, dt: float, method: str = "zoh") -> LinearDynamics:
    """Discretize the continuous model with step ``dt``.

    ``method="euler"`` gives ``I + A dt, B dt, C dt``. ``method="zoh"`` holds the
    inputs constant over the step and integrates exactly; because the state
    matrix is nilpotent (``A @ A == 0``) the state matrix is the same for both
    rules and only the input matrices pick up the ``A B dt^2 / 2`` term.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    if method == "euler":
        return LinearDynamics(np.eye(n) + A * dt, B * dt, C * dt, dt)
    if method == "zoh":
        m = B.shape[1] + C.shape[1]
        aug = np.zeros((n + m, n + m))
        aug[:n, :n] = A * dt
        aug[:n, n:] = np.hstack([B, C]) * dt
        sq = aug @ aug
        if not (sq @ aug).any():
            # nilpotent of index <= 3: the exponential series stops exactly
            phi = np.eye(n + m) + aug + 0.5 * sq
        else:
            from scipy.linalg import expm

            phi = expm(aug)
        gam = phi[:n, n:]
        return LinearDynamics(phi[:n, :n], gam[:, : B.shape[1]], gam[:, B.shape[1]:], dt)
    raise ValueError(f"unknown discretization method {method!r}")


def linearize(state: SystemState, dt: float, geom: VehicleGeometry = VehicleGeometry(), method: str = "zoh") -> LinearDynamics:
    return discretize(*continuous_matrices(state, geom), dt, method=method)


def step_linear(dyn: LinearDynamics, state: SystemState, u_ev: EvControl, u_cv: CvControl) -> SystemState:
    x = dyn.a_d @ state.as_array() + dyn.b_d[:, 0] * u_ev.a_ev + dyn.c_d @ u_cv.as_array()
    return SystemState.from_array(x)


def slip_angle(delta_f, geom: VehicleGeometry = VehicleGeometry()):
    return np.arctan(geom.l_r / geom.wheelbase * np.tan(delta_f))


def bicycle_rates(v, psi, a, delta_f, geom: VehicleGeometry = VehicleGeometry()):
    """Kinematic bicycle rates ``(xdot, ydot, psidot, vdot)``; works elementwise on arrays."""
    phi = slip_angle(delta_f, geom)
    return (
        v * np.cos(psi + phi),
        v * np.sin(psi + phi),
        v / geom.l_r * np.sin(phi),
        a,
    )


def step_bicycle(x, y, psi, v, a, delta_f, dt, geom: VehicleGeometry = VehicleGeometry()):
    """One RK4 step of the bicycle model with inputs held over the step.

    Inputs may be scalars or equal-length arrays. Steering is clamped to
    ``|delta_f| <= 0.5`` and the returned speed is floored at zero.
    """
    delta_f = np.clip(delta_f, -MAX_STEER, MAX_STEER)
    s0 = np.array([x, y, psi, v], dtype=float)
    k1 = _rates(s0, a, delta_f, geom)
    k2 = _rates(s0 + 0.5 * dt * k1, a, delta_f, geom)
    k3 = _rates(s0 + 0.5 * dt * k2, a, delta_f, geom)
    k4 = _rates(s0 + dt * k3, a, delta_f, geom)
    s1 = s0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    s1[3] = np.maximum(s1[3], 0.0)
    return s1[0], s1[1], s1[2], s1[3]


def _rates(s, a, delta_f, geom):
    xd, yd, psid, vd = bicycle_rates(s[3], s[2], a, delta_f, geom)
    return np.array([xd, yd, psid, np.broadcast_to(vd, np.shape(xd))], dtype=float)


def step_nonlinear(
    state: SystemState,
    u_ev: EvControl,
    u_cv: CvControl,
    dt: float,
    geom: VehicleGeometry = VehicleGeometry(),
) -> SystemState:
    """Advance the joint state with RK4 on the full bicycle model.

    The EV's position is integrated alongside so that ``dx`` stays exact
    under the EV's speed change within the step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = float(np.clip(u_cv.delta_f, -MAX_STEER, MAX_STEER))
    a_ev, a_cv = u_ev.a_ev, u_cv.a_cv

    def f(s):
        dx, v_ev, v_cv, y, psi = s
        xd, yd, psid, _ = bicycle_rates(v_cv, psi, a_cv, delta, geom)
        return np.array([xd - v_ev, a_ev, a_cv, yd, psid])

    s = state.as_array()
    k1 = f(s)
    k2 = f(s + 0.5 * dt * k1)
    k3 = f(s + 0.5 * dt * k2)
    k4 = f(s + dt * k3)
    out = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    out[V_EV] = max(out[V_EV], 0.0)
    out[V_CV] = max(out[V_CV], 0.0)
    return SystemState.from_array(out)
