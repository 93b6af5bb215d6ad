"""Online inverse optimal control for the competing vehicle's style weights.

Observed CV behaviour is assumed optimal for a weighted sum of quadratic
features. Along an optimal trajectory the discrete minimum principle gives

    lambda_n = grad_x L_n' beta + A_n' lambda_{n+1}
    0        = grad_u L_n' beta + C_n' lambda_{n+1}

Stacking ``gamma_n = (beta, lambda_n)`` turns the co-state equation into the
forward recursion ``gamma_{n+1} = K_n gamma_n``, so every stationarity
condition becomes a linear constraint ``L_n K_n ... K_0 gamma_0 = 0`` on the
unknown ``gamma_0``. The weights are the least-squares solution with the
first weight pinned to a scaling constant.

Longitudinal (safety, efficiency, comfort) and lateral (lane request,
smoothness) weights are identified by two independent instances.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from aacc.dynamics import DX, PSI_CV, V_CV, Y_CV, CvControl, EvControl, LinearDynamics, SystemState, VehicleGeometry, linearize
from aacc.style import CvDesired, StyleParams

__all__ = [
    "CvDesired",
    "IocState",
    "OnlineIdentifier",
    "RankDeficientError",
    "StyleParams",
    "Subproblem",
    "TrajectorySample",
    "feature_gradients",
    "feature_values",
    "identify_offline",
    "load_trajectory_csv",
    "recursion_step",
    "solve_constrained_ls",
    "update",
]

log = logging.getLogger(__name__)

SCALING_FACTOR = 1.0
WINDOW = 10
REL_TOL = 1e-3
MIN_SAMPLES = 10
N_FEATURES = 5


class RankDeficientError(np.linalg.LinAlgError):
    """The data so far do not pin down the weights."""


@dataclass(frozen=True)
class Subproblem:
    features: tuple
    states: tuple
    controls: tuple

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_states(self) -> int:
        return len(self.states)


LONGITUDINAL = Subproblem(features=(0, 1, 2), states=(0, 1, 2), controls=(0,))
LATERAL = Subproblem(features=(3, 4), states=(3, 4), controls=(1,))


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    x_long: np.ndarray
    x_lat: np.ndarray
    u_cv: CvControl
    u_ev: EvControl
    n: int = 0

    @classmethod
    def from_state(cls, state: SystemState, u_cv: CvControl, u_ev: EvControl = EvControl(), n: int = 0):
        x = state.as_array()
        return cls(x[:3], x[3:], u_cv, u_ev, n)

    @property
    def state(self) -> SystemState:
        return SystemState.from_array(np.concatenate([self.x_long, self.x_lat]))


def feature_values(state: SystemState, u_cv: CvControl, desired: CvDesired = CvDesired()) -> np.ndarray:
    return np.array([
        (state.delta_x - desired.delta_x_des) ** 2,
        (state.v_cv - desired.v_des) ** 2,
        u_cv.a_cv ** 2,
        (state.y_cv - desired.y_des) ** 2,
        (state.psi_cv - desired.psi_des) ** 2,
    ])


def feature_gradients(sample: TrajectorySample, desired: CvDesired = CvDesired()):
    """Gradients of the five running-cost features.

    Returns ``grad_x`` (5 features x 5 states) and ``grad_u`` (5 features x 2
    inputs); row ``k`` is the gradient of feature ``k``.
    """
    x = sample.state
    gx = np.zeros((N_FEATURES, 5))
    gu = np.zeros((N_FEATURES, 2))
    gx[0, DX] = 2.0 * (x.delta_x - desired.delta_x_des)
    gx[1, V_CV] = 2.0 * (x.v_cv - desired.v_des)
    gu[2, 0] = 2.0 * sample.u_cv.a_cv
    gx[3, Y_CV] = 2.0 * (x.y_cv - desired.y_des)
    gx[4, PSI_CV] = 2.0 * (x.psi_cv - desired.psi_des)
    return gx, gu


@dataclass(frozen=True, eq=False)
class IocState:
    part: Subproblem = LONGITUDINAL
    k_chain: np.ndarray = None
    p_accum: np.ndarray = None
    n: int = 0
    last_estimate: np.ndarray | None = None
    history: tuple = ()
    converged: bool = False

    def __post_init__(self):
        d = self.part.n_features + self.part.n_states
        if self.k_chain is None:
            object.__setattr__(self, "k_chain", np.eye(d))
        if self.p_accum is None:
            object.__setattr__(self, "p_accum", np.zeros((d, d)))

    @classmethod
    def longitudinal(cls) -> "IocState":
        return cls(LONGITUDINAL)

    @classmethod
    def lateral(cls) -> "IocState":
        return cls(LATERAL)


def recursion_step(st: IocState, sample: TrajectorySample, dyn: LinearDynamics, desired: CvDesired = CvDesired()) -> IocState:
    part = st.part
    s, c, f = list(part.states), list(part.controls), list(part.features)
    k, m = part.n_features, part.n_states
    A = dyn.a_d[np.ix_(s, s)]
    C = dyn.c_d[np.ix_(s, c)]
    try:
        a_inv_t = np.linalg.inv(A.T)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("state transition matrix is singular") from exc
    gx, gu = feature_gradients(sample, desired)
    gx = gx[np.ix_(f, s)]
    gu = gu[np.ix_(f, c)]

    K = np.zeros((k + m, k + m))
    K[:k, :k] = np.eye(k)
    K[k:, :k] = -a_inv_t @ gx.T
    K[k:, k:] = a_inv_t
    chain = K @ st.k_chain
    L = np.hstack([gu.T, C.T])
    LK = L @ chain
    return replace(st, k_chain=chain, p_accum=st.p_accum + LK.T @ LK, n=st.n + 1)


def solve_constrained_ls(p_accum: np.ndarray, i: float = SCALING_FACTOR, n_weights: int = 3, rcond: float = 1e-11) -> np.ndarray:
    """Minimise ``g' P g`` subject to ``g[0] = i`` and return the weight block of ``g``.

    The stationarity conditions and the constraint are solved as one bordered
    system. Directions of the co-state that the data never excite leave that
    system singular without affecting the weights; only a null space that
    touches the weights is reported as rank deficiency.
    """
    if i <= 0:
        raise ValueError("scaling factor must be positive")
    d = p_accum.shape[0]
    scale = np.abs(p_accum).max()
    if scale == 0.0:
        raise RankDeficientError("no information accumulated")
    P = p_accum / scale
    kkt = np.zeros((d + 1, d + 1))
    kkt[:d, :d] = 2.0 * P
    kkt[:d, d] = kkt[d, :d] = np.eye(d)[0]
    rhs = np.zeros(d + 1)
    rhs[d] = i
    u, sv, vt = np.linalg.svd(kkt)
    keep = sv > rcond * sv[0]
    null = vt[~keep]
    if null.size and np.abs(null[:, :n_weights]).max() > 1e-6:
        raise RankDeficientError("weights not identifiable from data so far")
    sol = vt[keep].T @ ((u[:, keep].T @ rhs) / sv[keep])
    return sol[:n_weights]


def _relative_change(a, b):
    return np.abs(a - b) / np.maximum(np.abs(b), 1e-12)


def update(
    st: IocState,
    sample: TrajectorySample,
    dyn: LinearDynamics,
    desired: CvDesired = CvDesired(),
    window: int = WINDOW,
    tol: float = REL_TOL,
    min_samples: int = MIN_SAMPLES,
    i: float = SCALING_FACTOR,
):
    """Feed one sample; returns ``(state, weights or None)``.

    Weights are returned only once the estimate has stayed within ``tol``
    relative change for ``window`` consecutive solves; after that the state is
    frozen and further samples are ignored.
    """
    if st.converged:
        return st, st.last_estimate
    st = recursion_step(st, sample, dyn, desired)
    if st.n < min_samples:
        return st, None
    try:
        est = solve_constrained_ls(st.p_accum, i=i, n_weights=st.part.n_features)
    except RankDeficientError:
        return replace(st, history=()), None
    history = (st.history + (est,))[-(window + 1):]
    converged = len(history) == window + 1 and all(
        np.all(_relative_change(history[j + 1], history[j]) < tol) for j in range(window)
    )
    st = replace(st, last_estimate=est, history=history, converged=converged)
    return st, (est if converged else None)


@dataclass
class OnlineIdentifier:
    """Runs the longitudinal and lateral identifiers side by side on one CV."""

    desired: CvDesired = field(default_factory=CvDesired)
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    window: int = WINDOW
    tol: float = REL_TOL
    long: IocState = field(default_factory=IocState.longitudinal)
    lat: IocState = field(default_factory=IocState.lateral)

    def observe(self, sample: TrajectorySample, dyn: LinearDynamics | None = None, dt: float = 0.1) -> StyleParams | None:
        """Returns the style once the longitudinal weights have converged."""
        if dyn is None:
            dyn = linearize(sample.state, dt, self.geom)
        self.long, _ = update(self.long, sample, dyn, self.desired, self.window, self.tol)
        try:
            self.lat, _ = update(self.lat, sample, dyn, self.desired, self.window, self.tol)
        except np.linalg.LinAlgError:
            log.debug("lateral update skipped at sample %d", sample.n)
        return self.style if self.long.converged else None

    @property
    def converged(self) -> bool:
        return self.long.converged

    @property
    def style(self) -> StyleParams | None:
        if self.long.last_estimate is None:
            return None
        lat = self.lat.last_estimate if self.lat.last_estimate is not None else (SCALING_FACTOR, SCALING_FACTOR)
        return StyleParams(tuple(self.long.last_estimate), tuple(lat))


CSV_COLUMNS = ("t", "delta_x", "v_ev", "v_cv", "y_cv", "psi_cv", "a_cv", "delta_f", "a_ev")


def load_trajectory_csv(path) -> tuple[list[TrajectorySample], float]:
    """Read a replay file; returns the samples and the (uniform) step length."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trajectory file lacks columns {sorted(missing)}")
        rows = [{k: float(r[k]) for k in CSV_COLUMNS} for r in reader]
    if len(rows) < 2:
        raise ValueError("need at least two samples")
    t = np.array([r["t"] for r in rows])
    steps = np.diff(t)
    dt = float(np.median(steps))
    if dt <= 0 or np.abs(steps - dt).max() > 1e-6 * max(1.0, dt):
        raise ValueError("samples must be uniformly spaced in time")
    samples = [
        TrajectorySample(
            np.array([r["delta_x"], r["v_ev"], r["v_cv"]]),
            np.array([r["y_cv"], r["psi_cv"]]),
            CvControl(r["a_cv"], r["delta_f"]),
            EvControl(r["a_ev"]),
            n,
        )
        for n, r in enumerate(rows)
    ]
    return samples, dt


def write_trajectory_csv(path, samples: Iterable[TrajectorySample], dt: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in samples:
            x = s.state
            w.writerow([s.n * dt, x.delta_x, x.v_ev, x.v_cv, x.y_cv, x.psi_cv, s.u_cv.a_cv, s.u_cv.delta_f, s.u_ev.a_ev])


def identify_offline(samples: Iterable[TrajectorySample], dt: float, desired: CvDesired = CvDesired(), geom: VehicleGeometry = VehicleGeometry()) -> OnlineIdentifier:
    ident = OnlineIdentifier(desired=desired, geom=geom)
    for s in samples:
        ident.observe(s, dt=dt)
        if ident.long.converged and ident.lat.converged:
            break
    return ident
