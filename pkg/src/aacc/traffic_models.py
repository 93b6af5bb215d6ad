"""IDM car following and MOBIL lane-change decisions with two style profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EMERGENCY_DECEL = -9.0
VEHICLE_LENGTH = 5.0


@dataclass(frozen=True)
class IdmParams:
    a_max: float
    b_com: float
    T: float
    v0: float
    s0: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        if min(self.a_max, self.b_com, self.T, self.v0, self.s0, self.delta) <= 0:
            raise ValueError("IDM parameters must be positive")

    def desired_gap(self, v, v_lead):
        v = np.asarray(v, dtype=float)
        dyn = v * (v - np.asarray(v_lead, dtype=float)) / (2.0 * np.sqrt(self.a_max * self.b_com))
        return self.s0 + v * self.T + dyn

    def accel(self, gap, v, v_lead):
        return idm_accel(gap, v, v_lead, self)


@dataclass(frozen=True)
class MobilParams:
    p: float
    a_th: float
    b_safe: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.a_th <= 0 or self.b_safe <= 0:
            raise ValueError("threshold and safe braking must be positive")


@dataclass(frozen=True)
class StyleProfile:
    label: str
    idm: IdmParams
    mobil: MobilParams


PROFILES = {
    "conservative": StyleProfile(
        "conservative",
        IdmParams(a_max=1.0, b_com=2.0, T=2.5, v0=18.0),
        MobilParams(p=0.2, a_th=0.4),
    ),
    "aggressive": StyleProfile(
        "aggressive",
        IdmParams(a_max=2.5, b_com=3.0, T=0.8, v0=25.0),
        MobilParams(p=0.05, a_th=0.2),
    ),
}


def profile(label: str) -> StyleProfile:
    try:
        return PROFILES[label]
    except KeyError:
        raise ValueError(f"unknown style {label!r}; expected one of {sorted(PROFILES)}") from None


def idm_accel(gap, v, v_lead, p: IdmParams):
    """IDM acceleration for bumper gap ``gap``; vectorised over array inputs.

    ``gap = inf`` means a free road. Non-positive gaps return the emergency
    deceleration. Results are clamped to ``[-9, a_max]``. ``p`` may also carry
    per-vehicle parameter arrays broadcastable against the inputs.
    """
    gap = np.asarray(gap, dtype=float)
    v = np.asarray(v, dtype=float)
    v_lead = np.asarray(v_lead, dtype=float)
    free = 1.0 - (v / p.v0) ** p.delta
    dyn = v * (v - v_lead) / (2.0 * np.sqrt(p.a_max * p.b_com))
    s_star = np.maximum(p.s0 + v * p.T + dyn, p.s0)
    positive = gap > 0
    # an infinite gap gives zero interaction
    interaction = (s_star / np.where(positive, gap, 1.0)) ** 2
    a = p.a_max * (free - interaction)
    a = np.where(positive, np.clip(a, EMERGENCY_DECEL, p.a_max), EMERGENCY_DECEL)
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class Neighbor:
    """A vehicle relative to the deciding vehicle; ``gap`` is bumper to bumper.

    ``model`` predicts this vehicle's acceleration; anything with an
    ``accel(gap, v, v_lead)`` method works. ``None`` means the deciding
    vehicle's own IDM.
    """

    gap: float
    v: float
    model: object = None


@dataclass(frozen=True)
class LaneChangeContext:
    v: float
    leader: Neighbor | None = None
    target_leader: Neighbor | None = None
    target_follower: Neighbor | None = None
    bias: float = 0.0  # extra incentive toward the target lane


@dataclass(frozen=True)
class MobilDecision:
    change: bool
    armed: bool
    safe: bool
    incentive: float
    follower_accel: float


def mobil_decide(ctx: LaneChangeContext, m: MobilParams, idm: IdmParams) -> MobilDecision:
    """Change iff the incentive exceeds the threshold and the new follower stays above ``-b_safe``.

    Missing neighbours are treated as a free lane. The new follower's reaction
    is evaluated with its own model when supplied, else with ``idm``.
    """
    inf = np.inf
    lead = ctx.leader
    a_old = idm_accel(lead.gap if lead else inf, ctx.v, lead.v if lead else ctx.v, idm)
    tl = ctx.target_leader
    a_new = idm_accel(tl.gap if tl else inf, ctx.v, tl.v if tl else ctx.v, idm)

    tf = ctx.target_follower
    if tf is None:
        f_old = f_new = 0.0
    else:
        f_model = tf.model or idm
        # without the ego in between, the new follower trails the target leader
        gap_to_tl = tf.gap + VEHICLE_LENGTH + tl.gap if tl else inf
        f_old = float(f_model.accel(gap_to_tl, tf.v, tl.v if tl else tf.v))
        f_new = float(f_model.accel(tf.gap, tf.v, ctx.v))

    incentive = (a_new - a_old) + m.p * (f_new - f_old) + ctx.bias
    armed = bool(incentive > m.a_th)
    safe = bool(f_new >= -m.b_safe)
    return MobilDecision(armed and safe, armed, safe, float(incentive), float(f_new))
