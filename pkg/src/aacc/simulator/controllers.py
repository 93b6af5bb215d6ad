"""EV controllers: the constant-time-gap ACC baseline and the game-based AACC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from aacc.dynamics import SystemState, VehicleGeometry
from aacc.gmpc import EvObjective, GmpcConfig, PlanResult, plan
from aacc.ioc import OnlineIdentifier, TrajectorySample
from aacc.style import AGGRESSIVE_STYLE, CvDesired, StyleParams
from aacc.traffic_models import EMERGENCY_DECEL

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AccParams:
    v_des: float = 18.0
    T_set: float = 1.5
    k_g: float = 0.23
    k_v: float = 0.74
    a_min: float = -3.5
    a_max: float = 4.0

    def follow(self, gap, v, v_lead):
        """Unclamped gap-keeping law."""
        return self.k_g * (gap - self.T_set * v) + self.k_v * (v_lead - v)

    def clamp(self, a):
        return float(np.clip(a, self.a_min, self.a_max))


@dataclass(frozen=True)
class Leader:
    gap: float  # bumper to bumper
    v: float


def baseline_acc_control(v: float, leader: Leader | None, p: AccParams = AccParams()) -> float:
    """Constant-time-gap ACC.

    Cruise toward ``v_des`` on a free road. With a leader the gap law applies,
    capped by the cruise law so the set speed is never exceeded.
    """
    a = p.k_v * (p.v_des - v)
    if leader is not None:
        a = min(a, p.follow(leader.gap, v, leader.v))
    return p.clamp(a)


@dataclass(frozen=True)
class AccFollowerModel:
    """How a lane changer predicts an ACC-driven follower's braking.

    Same gap law as the baseline without the lower actuator clamp, so the
    MOBIL safety test sees the braking the follower would actually need.
    """

    acc: AccParams = AccParams()

    def accel(self, gap, v, v_lead):
        gap = np.asarray(gap, dtype=float)
        v = np.asarray(v, dtype=float)
        cruise = self.acc.k_v * (self.acc.v_des - v)
        with np.errstate(invalid="ignore"):
            follow = np.where(np.isinf(gap), cruise, self.acc.follow(np.where(np.isinf(gap), 0.0, gap), v, v_lead))
        a = np.minimum(np.minimum(cruise, follow), self.acc.a_max)
        a = np.where(gap > 0, a, EMERGENCY_DECEL)
        return float(a) if a.ndim == 0 else a


def usable_weights(style: StyleParams | None) -> StyleParams | None:
    """The follower law needs finite non-negative weights; anything else is unusable."""
    if style is None:
        return None
    b = style.as_vector()
    if not np.all(np.isfinite(b)) or np.any(b < 0):
        return None
    return style


@dataclass
class StyleTracker:
    """Online identifiers for the vehicles the EV is watching, keyed by vehicle id."""

    desired: CvDesired = field(default_factory=CvDesired)
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    dt: float = 0.1
    sessions: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def observe(self, vid: int, state: SystemState, u_cv, u_ev) -> None:
        ident = self.sessions.get(vid)
        if ident is None:
            ident = self.sessions[vid] = OnlineIdentifier(desired=self.desired, geom=self.geom)
            self.counts[vid] = 0
        n = self.counts[vid]
        self.counts[vid] = n + 1
        if ident.long.converged and ident.lat.converged:
            return
        ident.observe(TrajectorySample.from_state(state, u_cv, u_ev, n), dt=self.dt)

    def drop(self, vid: int) -> None:
        self.sessions.pop(vid, None)
        self.counts.pop(vid, None)

    def estimate(self, vid: int) -> tuple[StyleParams | None, bool]:
        """Current best weights and whether the longitudinal identifier has converged."""
        ident = self.sessions.get(vid)
        if ident is None:
            return None, False
        return ident.style, ident.converged


@dataclass
class AaccController:
    """Receding-horizon Stackelberg planner with an ACC envelope.

    While a competitor is engaged the first planned acceleration is applied,
    limited by the ACC gap law toward the actual same-lane leader. Until the
    identifier converges the planner keeps the cautious desired distance and
    models the follower with the current estimate when usable, else with the
    aggressive reference weights.
    """

    config: GmpcConfig
    acc: AccParams = AccParams()
    classify_threshold: float = 1.0
    prior: StyleParams = AGGRESSIVE_STYLE
    _warm: dict = field(default_factory=dict)

    def command(self, v_ev: float, leader: Leader | None, x0: SystemState | None = None,
                style: StyleParams | None = None, converged: bool = False, vid=None):
        """Returns ``(a_ev, PlanResult or None)``."""
        if x0 is None:
            return baseline_acc_control(v_ev, leader, self.acc), None
        usable = usable_weights(style)
        if converged and usable is not None:
            obj = EvObjective.for_style(usable, self.classify_threshold, v_des_ev=self.acc.v_des)
            beta = usable
        else:
            obj = EvObjective.for_style(None, v_des_ev=self.acc.v_des)
            beta = usable or self.prior
        try:
            res = plan(x0, beta, obj, self.config, self._warm.get(vid))
        except np.linalg.LinAlgError as exc:
            log.warning("plan failed (%s); falling back to the prior weights", exc)
            res = plan(x0, self.prior, obj, self.config)
        self._warm = {vid: res.u_ev_seq}
        a = res.first_accel
        if leader is not None:
            a = min(a, self.acc.follow(leader.gap, v_ev, leader.v))
        return self.acc.clamp(a), res


__all__ = [
    "AaccController",
    "AccFollowerModel",
    "AccParams",
    "Leader",
    "PlanResult",
    "StyleTracker",
    "baseline_acc_control",
    "usable_weights",
]
