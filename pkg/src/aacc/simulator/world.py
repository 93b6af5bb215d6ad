"""Multi-vehicle state on a two-lane road and the human driver models acting on it.

Vehicles live in parallel numpy arrays so IDM, MOBIL and the lateral
controller evaluate the whole population at once. Lane 0 is centred at
``y = 0`` and lane 1 at ``y = lane_width``; a vehicle belongs to the lane its
centre is in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from aacc.dynamics import MAX_STEER, VehicleGeometry, step_bicycle
from aacc.simulator.controllers import AccFollowerModel
from aacc.traffic_models import EMERGENCY_DECEL, PROFILES, VEHICLE_LENGTH, idm_accel

EV, CV, PV, BG = 0, 1, 2, 3
ROLE_NAMES = ("EV", "CV", "PV", "background")
STYLE_LABELS = ("conservative", "aggressive")
N_LANES = 2

# predictive models a lane changer uses for a follower: the two IDM profiles and ACC
MODEL_CON, MODEL_AGG, MODEL_ACC = 0, 1, 2

HEADING_TIME = 0.3  # s, heading loop time constant
LATERAL_GAIN = 1.0  # 1/s, lateral position loop
MIN_ABORT_TIME = 1.0  # s
LANE_CHANGE_COOLDOWN = 5.0  # s between discretionary lane changes


def quintic(tau):
    """Smooth 0 -> 1 blend with zero velocity and acceleration at both ends; returns (q, dq/dtau)."""
    tau = np.clip(tau, 0.0, 1.0)
    q = tau**3 * (10 - 15 * tau + 6 * tau**2)
    dq = 30 * tau**2 * (1 - tau) ** 2
    return q, dq


@dataclass
class World:
    lane_width: float = 3.5
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    t: float = 0.0
    next_id: int = 0

    def __post_init__(self):
        f, i, b = np.float64, np.int64, bool
        self._cols = {
            "id": i, "role": i, "style": i, "model": i,
            "x": f, "y": f, "psi": f, "v": f, "a": f, "delta": f,
            "lc_active": b, "lc_t0": f, "lc_y0": f, "lc_y1": f, "lc_dur": f,
            "lc_origin": i, "lc_target": i, "lc_aborting": b, "lc_last_end": f,
            "mandatory": i,  # target lane of a mandatory change, -1 if none
            "lc_allowed": b, "armed": b, "incentive": f,
        }
        for k, dt in self._cols.items():
            setattr(self, k, np.zeros(0, dtype=dt))

    # -- population -----------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.x)

    def add(self, role: int, x: float, lane: int, v: float, style: int = -1, mandatory: int = -1,
            lc_allowed: bool = True) -> int:
        vid = self.next_id
        self.next_id += 1
        model = style if style >= 0 else MODEL_ACC
        row = dict(
            id=vid, role=role, style=style, model=model, x=x, y=lane * self.lane_width, psi=0.0, v=v,
            a=0.0, delta=0.0, lc_active=False, lc_t0=0.0, lc_y0=0.0, lc_y1=0.0, lc_dur=1.0,
            lc_origin=lane, lc_target=lane, lc_aborting=False, lc_last_end=-np.inf, mandatory=mandatory,
            lc_allowed=lc_allowed, armed=False, incentive=0.0,
        )
        for k, dt in self._cols.items():
            setattr(self, k, np.append(getattr(self, k), np.asarray(row[k], dtype=dt)))
        return vid

    def keep(self, mask) -> None:
        for k in self._cols:
            setattr(self, k, getattr(self, k)[mask])

    def index_of(self, vid: int) -> int:
        hit = np.flatnonzero(self.id == vid)
        return int(hit[0]) if hit.size else -1

    def lane(self) -> np.ndarray:
        return np.clip(np.floor(self.y / self.lane_width + 0.5), 0, N_LANES - 1).astype(np.int64)

    def lane_center(self, lane) -> np.ndarray:
        return np.asarray(lane, dtype=float) * self.lane_width

    # -- neighbours -----------------------------------------------------------------
    def neighbors(self, lane=None):
        """Nearest vehicle ahead and behind in each lane; shapes (N_LANES, n), -1 when none."""
        lane = self.lane() if lane is None else lane
        n = self.n
        lead = np.full((N_LANES, n), -1, dtype=np.int64)
        foll = np.full((N_LANES, n), -1, dtype=np.int64)
        for L in range(N_LANES):
            idx = np.flatnonzero(lane == L)
            if idx.size == 0:
                continue
            order = idx[np.argsort(self.x[idx], kind="stable")]
            xs = self.x[order]
            right = np.searchsorted(xs, self.x, side="right")
            left = np.searchsorted(xs, self.x, side="left")
            lead[L] = np.where(right < len(order), order[np.minimum(right, len(order) - 1)], -1)
            foll[L] = np.where(left > 0, order[np.maximum(left - 1, 0)], -1)
            # a vehicle is never its own neighbour
            lead[L] = np.where(lead[L] == np.arange(n), -1, lead[L])
            foll[L] = np.where(foll[L] == np.arange(n), -1, foll[L])
        return lead, foll

    def gap_to(self, i, j) -> np.ndarray:
        """Bumper gap from ``i`` to ``j`` ahead; ``inf`` where ``j == -1``."""
        i = np.asarray(i)
        j = np.asarray(j)
        safe = np.where(j >= 0, j, 0)
        return np.where(j >= 0, self.x[safe] - self.x[i] - VEHICLE_LENGTH, np.inf)

    def speed_of(self, j, default) -> np.ndarray:
        j = np.asarray(j)
        return np.where(j >= 0, self.v[np.where(j >= 0, j, 0)], default)

    # -- collisions -----------------------------------------------------------------
    def collisions(self) -> list[tuple[int, int]]:
        """Same-lane pairs (follower id, leader id) with a non-positive bumper gap."""
        lane = self.lane()
        out = []
        for L in range(N_LANES):
            idx = np.flatnonzero(lane == L)
            if idx.size < 2:
                continue
            order = idx[np.argsort(self.x[idx], kind="stable")]
            gaps = np.diff(self.x[order]) - VEHICLE_LENGTH
            for k in np.flatnonzero(gaps <= 0):
                out.append((int(self.id[order[k]]), int(self.id[order[k + 1]])))
        return out

    # -- integration ----------------------------------------------------------------
    def advance(self, dt: float) -> None:
        a = np.maximum(self.a, -self.v / dt)  # never drive backwards
        self.x, self.y, self.psi, self.v = step_bicycle(self.x, self.y, self.psi, self.v, a, self.delta, dt, self.geom)
        self.t += dt


class _StyleTable:
    """Profile parameters as arrays indexed by style code, for whole-population evaluation."""

    def __init__(self, idx=None, table=None):
        self._t = table if table is not None else {
            name: np.array([getattr(getattr(PROFILES[s], part), name) for s in STYLE_LABELS])
            for part, names in (("idm", ("a_max", "b_com", "T", "v0", "s0", "delta")), ("mobil", ("p", "a_th", "b_safe")))
            for name in names
        }
        self._idx = idx

    def __call__(self, idx) -> "_StyleTable":
        return _StyleTable(np.asarray(idx), self._t)

    def __getattr__(self, name):
        try:
            col = self.__dict__["_t"][name]
        except KeyError:
            raise AttributeError(name) from None
        return col[self._idx]


STYLE_PARAMS = _StyleTable()
_ACC_FOLLOWER = AccFollowerModel()


def model_accel(model, gap, v, v_lead) -> np.ndarray:
    """Per-vehicle acceleration prediction, dispatching on the model index."""
    model = np.asarray(model)
    gap, v, v_lead = (np.broadcast_to(np.asarray(z, dtype=float), model.shape) for z in (gap, v, v_lead))
    human = model != MODEL_ACC
    out = np.asarray(idm_accel(gap, v, v_lead, STYLE_PARAMS(np.where(human, model, 0))), dtype=float)
    if not human.all():
        acc = ~human
        out = np.where(acc, 0.0, out)
        out[acc] = _ACC_FOLLOWER.accel(gap[acc], v[acc], v_lead[acc])
    return out


@dataclass
class LaneChangeEvent:
    t: float
    vid: int
    kind: str  # arm | start | abort | cross | complete
    x_rel_ev: float  # x of the vehicle minus x of the EV at the event

    def as_dict(self) -> dict:
        return {"t": round(self.t, 10), "id": self.vid, "kind": self.kind, "x_rel_ev": self.x_rel_ev}


class HumanDrivers:
    """IDM car following plus MOBIL lane changing for every vehicle with a style.

    Lane changes follow a quintic lateral path; safety is re-checked every step
    until the centre crosses the lane boundary and the manoeuvre reverses if it
    fails. A vehicle with a mandatory target lane adds ``bias`` to its incentive
    and, until its manoeuvre starts, also slows for the target-lane vehicle it must merge
    behind (bounded by its comfortable deceleration).
    """

    def __init__(self, lane_change_time: float = 3.0, bias: float = 0.0, geom: VehicleGeometry = VehicleGeometry()):
        self.lane_change_time = lane_change_time
        self.bias = bias
        self.geom = geom

    def step(self, w: World, ev_index: int = -1) -> list[LaneChangeEvent]:
        events: list[LaneChangeEvent] = []
        human = np.flatnonzero(w.style >= 0)
        if human.size == 0:
            return events
        lane = w.lane()
        lead, foll = w.neighbors(lane)
        x_ev = w.x[ev_index] if ev_index >= 0 else 0.0

        def event(i, kind):
            events.append(LaneChangeEvent(w.t, int(w.id[i]), kind, float(w.x[i] - x_ev)))

        cur = lane[human]
        other = N_LANES - 1 - cur
        own_lead = lead[cur, human]
        a = self._idm(w, human, w.gap_to(human, own_lead), w.speed_of(own_lead, w.v[human]))

        # MOBIL toward the other lane for everyone not already manoeuvring
        tl = lead[other, human]
        tf = foll[other, human]
        inc, safe = self._mobil(w, human, own_lead, tl, tf)
        bias = np.where(w.mandatory[human] == other, self.bias, 0.0)
        inc = inc + bias
        p_th = STYLE_PARAMS(w.style[human]).a_th
        armed = inc > p_th
        cooling = (w.t - w.lc_last_end[human] < LANE_CHANGE_COOLDOWN) & (w.mandatory[human] < 0)
        eligible = ~w.lc_active[human] & w.lc_allowed[human] & ~cooling
        armed &= eligible
        for k in np.flatnonzero(armed & ~w.armed[human]):
            event(human[k], "arm")
        w.armed[human] = armed
        w.incentive[human] = inc

        # a mandatory changer that has not started yet slows for the vehicle it has to merge behind
        mand = eligible & (w.mandatory[human] == other)
        if mand.any():
            b_com = STYLE_PARAMS(w.style[human]).b_com
            gap_tl = w.gap_to(human, tl)
            overlap = np.isfinite(gap_tl) & (gap_tl <= 0)
            a_tl = self._idm(w, human, np.where(overlap, np.inf, gap_tl), w.speed_of(tl, w.v[human]))
            a_tl = np.where(overlap, -b_com, np.maximum(a_tl, -b_com))
            a = np.where(mand, np.minimum(a, a_tl), a)

        start = armed & safe
        for k in np.flatnonzero(start):
            i = human[k]
            self._begin(w, i, int(cur[k]), int(other[k]), self.lane_change_time)
            event(i, "start")

        # ongoing manoeuvres: safety re-check until the centre crosses the boundary
        # (before crossing, the target lane is the other lane, so the bulk check applies)
        pre_cross = w.lc_active[human] & ~start & ~w.lc_aborting[human] & (cur == w.lc_origin[human])
        for k in np.flatnonzero(pre_cross & ~safe):
            i = human[k]
            org = int(w.lc_origin[i])
            dur = max(MIN_ABORT_TIME, self.lane_change_time * abs(w.y[i] - org * w.lane_width) / w.lane_width)
            self._begin(w, i, org, org, dur, aborting=True)
            event(i, "abort")
        w.a[human] = a

        # completions
        for k in np.flatnonzero(w.lc_active[human]):
            i = human[k]
            if w.t - w.lc_t0[i] >= w.lc_dur[i] - 1e-9:
                w.lc_active[i] = False
                w.lc_last_end[i] = w.t
                if not w.lc_aborting[i] and w.mandatory[i] == w.lc_target[i]:
                    w.mandatory[i] = -1
                    w.lc_allowed[i] = False  # the closing lane is gone
                event(i, "return" if w.lc_aborting[i] else "complete")
                w.lc_aborting[i] = False

        w.delta[human] = self._steer(w, human)
        return events

    # -- pieces ---------------------------------------------------------------------
    def _idm(self, w: World, idx, gap, v_lead) -> np.ndarray:
        return np.asarray(idm_accel(gap, w.v[idx], v_lead, STYLE_PARAMS(w.style[idx])), dtype=float)

    def _mobil(self, w: World, idx, own_lead, tl, tf):
        """Incentive (without bias) and safety for moving ``idx`` between leader ``tl`` and follower ``tf``."""
        v = w.v[idx]
        a_old = self._idm(w, idx, w.gap_to(idx, own_lead), w.speed_of(own_lead, v))
        gap_tl = w.gap_to(idx, tl)
        a_new = self._idm(w, idx, gap_tl, w.speed_of(tl, v))
        has_f = tf >= 0
        fi = np.where(has_f, tf, 0)
        gap_f_new = np.where(has_f, w.x[idx] - w.x[fi] - VEHICLE_LENGTH, np.inf)
        gap_f_old = np.where(has_f, w.gap_to(fi, tl), np.inf)
        v_f = w.v[fi]
        f_new = np.where(has_f, model_accel(w.model[fi], gap_f_new, v_f, v), 0.0)
        f_old = np.where(has_f, model_accel(w.model[fi], gap_f_old, v_f, w.speed_of(tl, v_f)), 0.0)
        par = STYLE_PARAMS(w.style[idx])
        p, b_safe = par.p, par.b_safe
        inc = (a_new - a_old) + p * (f_new - f_old)
        room = (gap_tl > 0) & (gap_f_new > 0)
        safe = (f_new >= -b_safe) & room & (a_new > EMERGENCY_DECEL)
        return inc, safe

    def _begin(self, w: World, i: int, origin: int, target: int, dur: float, aborting: bool = False) -> None:
        w.lc_active[i] = True
        w.lc_t0[i] = w.t
        w.lc_y0[i] = w.y[i]
        w.lc_y1[i] = target * w.lane_width
        w.lc_dur[i] = dur
        w.lc_origin[i] = origin
        w.lc_target[i] = target
        w.lc_aborting[i] = aborting
        w.armed[i] = False

    def after_advance(self, w: World, lane_before, ev_index: int = -1) -> list[LaneChangeEvent]:
        """Report manoeuvring vehicles whose centre crossed into the target lane during the step."""
        lane = w.lane()
        hit = np.flatnonzero(w.lc_active & ~w.lc_aborting & (lane_before == w.lc_origin) & (lane == w.lc_target)
                             & (w.lc_origin != w.lc_target))
        x_ev = w.x[ev_index] if ev_index >= 0 else 0.0
        return [LaneChangeEvent(w.t, int(w.id[i]), "cross", float(w.x[i] - x_ev)) for i in hit]

    def _steer(self, w: World, idx) -> np.ndarray:
        """Track the reference path by commanding a yaw rate and inverting the bicycle model."""
        v = np.maximum(w.v[idx], 1.0)
        active = w.lc_active[idx]
        dur = w.lc_dur[idx]
        tau = (w.t - w.lc_t0[idx]) / dur
        q, dq = quintic(tau)
        span = w.lc_y1[idx] - w.lc_y0[idx]
        y_ref = np.where(active, w.lc_y0[idx] + span * q, w.lane_center(w.lane()[idx]))
        ydot_ref = np.where(active & (tau < 1.0), span * dq / dur, 0.0)
        psi_cmd = np.arctan2(ydot_ref + LATERAL_GAIN * (y_ref - w.y[idx]), v)
        r = (psi_cmd - w.psi[idx]) / HEADING_TIME
        l_r, wb = self.geom.l_r, self.geom.wheelbase
        s_phi = np.clip(r * l_r / v, -0.99, 0.99)
        delta = np.arctan(np.tan(np.arcsin(s_phi)) * wb / l_r)
        return np.clip(delta, -MAX_STEER, MAX_STEER)
