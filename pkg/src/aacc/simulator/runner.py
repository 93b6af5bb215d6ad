"""Closed-loop runs: identify, estimate the reaction, plan, act, let the others react, advance."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from aacc.cv_reaction import backward_pass
from aacc.dynamics import CvControl, EvControl, SystemState, VehicleGeometry, linearize
from aacc.gmpc import GmpcConfig
from aacc.simulator.controllers import AaccController, AccParams, Leader, StyleTracker, baseline_acc_control
from aacc.simulator.log import SimLog
from aacc.simulator.scenario import Scenario
from aacc.simulator.world import BG, CV, EV, N_LANES, PV, STYLE_LABELS, HumanDrivers, World
from aacc.style import AGGRESSIVE_STYLE, CONSERVATIVE_STYLE, CvDesired
from aacc.traffic_models import VEHICLE_LENGTH

EV_LANE = 0
SENSOR_AHEAD = 80.0  # m, furthest competitor the EV games against
TRACK_RANGE = (-50.0, 100.0)  # m, identification sessions are kept inside this window
LQR_HARNESS_STEPS = 300
TRAFFIC_TIME_LIMIT = 900.0  # s after the EV enters
ENTRY_HEADWAY = 1.0  # s, minimum time gap for inserting a vehicle at the entrance

DECLARED_STYLES = {"conservative": CONSERVATIVE_STYLE, "aggressive": AGGRESSIVE_STYLE}


@dataclass
class _Engine:
    sc: Scenario
    world: World
    humans: HumanDrivers
    acc: AccParams = field(default_factory=AccParams)
    tracker: StyleTracker | None = None
    aacc: AaccController | None = None
    log: SimLog | None = None
    ev_id: int = -1
    cv_id: int = -1  # function validation: the designated competitor
    lqr: tuple | None = None  # (law, desired) when the CV is the follower-model harness
    step_index: int = 0
    pending: dict = field(default_factory=dict)

    @classmethod
    def create(cls, sc: Scenario, tracker_desired: CvDesired) -> "_Engine":
        geom = VehicleGeometry()
        acc = AccParams(v_des=18.0)
        cfg = GmpcConfig(horizon=sc.n_horizon, dt=sc.dt, a_min=acc.a_min, a_max=acc.a_max, v_lim=sc.v_lim,
                         cv_desired=CvDesired(y_des=EV_LANE * sc.lane_width))
        eng = cls(sc, World(lane_width=sc.lane_width, geom=geom), HumanDrivers(sc.lane_change_time, sc.mandatory_bias, geom), acc)
        if sc.controller == "aacc":
            eng.tracker = StyleTracker(desired=tracker_desired, geom=geom, dt=sc.dt)
            eng.aacc = AaccController(cfg, acc)
        eng.log = SimLog(sc)
        return eng

    # -- per-step pieces ------------------------------------------------------------
    def _ev_leader(self, lead, ev: int) -> Leader | None:
        j = lead[EV_LANE, ev]
        if j < 0:
            return None
        return Leader(float(self.world.x[j] - self.world.x[ev] - VEHICLE_LENGTH), float(self.world.v[j]))

    def _joint_state(self, ev: int, j: int) -> SystemState:
        w = self.world
        return SystemState(float(w.x[j] - w.x[ev]), float(w.v[ev]), float(w.v[j]), float(w.y[j]), float(w.psi[j]))

    def _competitor(self, ev: int) -> int:
        """Index of the vehicle the EV games against, or -1."""
        w = self.world
        lane = w.lane()
        dx = w.x - w.x[ev]
        adjacent = (lane != EV_LANE) & (dx > -VEHICLE_LENGTH) & (dx <= SENSOR_AHEAD)
        if self.sc.mode == "function_validation":
            j = w.index_of(self.cv_id)
            ok = j >= 0 and adjacent[j] and w.mandatory[j] == EV_LANE
            return j if ok else -1
        toward = (w.armed & (lane != EV_LANE)) | (w.lc_active & ~w.lc_aborting & (w.lc_target == EV_LANE))
        cand = np.flatnonzero(adjacent & toward & (w.style >= 0))
        if cand.size == 0:
            return -1
        return int(cand[np.argmin(np.abs(dx[cand]))])

    def _tracked(self, ev: int, competitor: int) -> list[int]:
        w = self.world
        if self.sc.mode == "function_validation":
            j = w.index_of(self.cv_id)
            return [j] if j >= 0 else []
        dx = w.x - w.x[ev]
        # only adjacent-lane vehicles near the EV can become competitors
        near = (dx >= TRACK_RANGE[0]) & (dx <= TRACK_RANGE[1]) & (w.lane() != EV_LANE)
        keep = [i for i in np.flatnonzero(near) if w.id[i] in self.tracker.sessions]
        for vid in list(self.tracker.sessions):
            i = w.index_of(vid)
            if i < 0 or not near[i]:
                self.tracker.drop(vid)
        if competitor >= 0 and competitor not in keep:
            keep.append(competitor)
        return keep

    def _track(self, ev: int, competitor: int, a_ev: float) -> None:
        """Queue this step's transitions for identification and log the shown estimate."""
        w = self.world
        watch = self._tracked(ev, competitor)
        self.pending = {
            int(w.id[j]): (self._joint_state(ev, j), CvControl(float(w.a[j]), float(w.delta[j])), EvControl(a_ev))
            for j in watch
        }
        shown = int(w.id[competitor]) if competitor >= 0 else (int(w.id[watch[0]]) if watch else -1)
        if shown >= 0:
            style, converged = self.tracker.estimate(shown)
            self.log.beta_step(w.t, shown, style, converged)

    def _lqr_controls(self, j: int, ev: int) -> None:
        law, _ = self.lqr
        w = self.world
        n = self.step_index
        if n >= law.horizon:
            w.a[j], w.delta[j] = 0.0, 0.0
            return
        x = self._joint_state(ev, j).as_array()
        u = law.j_seq[n] @ x + law.g_seq[n] * law.u_ev_plan[n] + law.f_seq[n] + law.e_seq[n]
        w.a[j], w.delta[j] = float(u[0]), float(u[1])

    def step(self) -> bool:
        """Advance one step; returns False once the run is over."""
        sc, w = self.sc, self.world
        ev = w.index_of(self.ev_id)
        events = self.humans.step(w, ev)
        w.a[w.role == PV] = 0.0
        w.delta[w.role == PV] = 0.0

        if ev >= 0:
            lead, _ = w.neighbors()
            leader = self._ev_leader(lead, ev)
            if self.lqr is not None:
                jc = w.index_of(self.cv_id)
                if jc >= 0:
                    self._lqr_controls(jc, ev)

            # identification uses last step's completed transition
            for vid, (state, u_cv, u_ev) in self.pending.items():
                self.tracker.observe(vid, state, u_cv, u_ev)
            competitor = self._competitor(ev)
            a_ev, status, solve_time, engaged = 0.0, "acc", None, -1
            if self.aacc is not None and competitor >= 0:
                engaged = int(w.id[competitor])
                style, converged = self._style_for(engaged, competitor)
                a_ev, res = self.aacc.command(float(w.v[ev]), leader, self._joint_state(ev, competitor), style, converged, engaged)
                status, solve_time = res.status, res.solve_time
            else:
                a_ev = baseline_acc_control(float(w.v[ev]), leader, self.acc)
            w.a[ev], w.delta[ev] = a_ev, 0.0
            self.log.ev_step(w.t, a_ev, engaged, status, solve_time)

            if self.tracker is not None:
                self._track(ev, competitor, a_ev)
            self.log.snapshot(w, self._log_mask(ev))

        self.log.add_events(events)
        lane_before = w.lane()
        w.advance(sc.dt)
        self.step_index += 1
        self.log.add_events(self.humans.after_advance(w, lane_before, w.index_of(self.ev_id)))
        hits = w.collisions()
        if hits:
            self.log.collision = True
            self.log.collision_pairs = hits
            return False
        return True

    def _style_for(self, vid: int, j: int):
        if self.sc.style_source == "declared":
            return DECLARED_STYLES[STYLE_LABELS[self.world.style[j]]], True
        return self.tracker.estimate(vid)

    def _log_mask(self, ev: int):
        if self.sc.mode == "function_validation":
            return None
        dx = self.world.x - self.world.x[ev]
        lo, hi = self.sc.log_window
        return (dx >= lo) & (dx <= hi)

    def final_snapshot(self) -> None:
        ev = self.world.index_of(self.ev_id)
        if ev >= 0:
            self.log.snapshot(self.world, self._log_mask(ev), a_cmd=np.full(self.world.n, np.nan))


# -- function validation -------------------------------------------------------------
def _fv_world(sc: Scenario, eng: _Engine, with_cv: bool = True) -> None:
    w = eng.world
    eng.ev_id = w.add(EV, 0.0, EV_LANE, sc.v_init)
    w.add(PV, sc.pv_gap, EV_LANE, sc.pv_speed)
    if with_cv:
        x_cv = sc.initial_gap
        v_cv = sc.v_init if sc.cv_speed is None else sc.cv_speed
        if sc.cv_driver == "idm":
            eng.cv_id = w.add(CV, x_cv, 1, v_cv, style=STYLE_LABELS.index(sc.cv_style), mandatory=EV_LANE)
        else:
            eng.cv_id = w.add(CV, x_cv, 1, v_cv)
    eng.log.ev_id = eng.ev_id
    eng.log.ev_entry_time = 0.0


def _ev_schedule(sc: Scenario) -> np.ndarray:
    """EV commands over the run with the CV absent (valid when the EV never engages it)."""
    eng = _Engine.create(replace(sc, cv_driver="idm"), CvDesired())
    _fv_world(sc, eng, with_cv=False)
    for _ in range(sc.n_steps):
        eng.step()
    return eng.log.finalize().ev["a_ev"]


def run_function_validation(sc: Scenario) -> SimLog:
    """EV, PV ahead in the EV lane and a CV in the adjacent lane that must merge."""
    if sc.mode != "function_validation":
        raise ValueError("scenario mode must be function_validation")
    harness = sc.cv_driver == "lqr"
    desired = CvDesired(y_des=(1 if harness else EV_LANE) * sc.lane_width)
    eng = _Engine.create(sc, desired)
    _fv_world(sc, eng)
    if harness:
        w = eng.world
        ev, j = w.index_of(eng.ev_id), w.index_of(eng.cv_id)
        x0 = eng._joint_state(ev, j)
        n_h = min(sc.n_steps, LQR_HARNESS_STEPS)
        schedule = _ev_schedule(sc)[:n_h]
        law, _ = backward_pass(sc.cv_beta, linearize(x0, sc.dt, w.geom), desired, N=n_h, u_ev_plan=schedule)
        eng.lqr = (law, desired)
    for _ in range(sc.n_steps):
        if not eng.step():
            break
        ev = eng.world.index_of(eng.ev_id)
        if eng.world.x[ev] >= sc.road_length:
            break
    eng.final_snapshot()
    return eng.log.finalize()


# -- traffic flow ----------------------------------------------------------------------
def _arrivals(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    if rate <= 0:
        return np.zeros(0)
    n = rng.poisson(rate * horizon * 1.2) + 10
    t = np.cumsum(rng.exponential(1.0 / rate, size=n))
    return t[t < horizon]


def _populate(sc: Scenario, w: World, rng: np.random.Generator, rate: float) -> None:
    """Fill both lanes with a spatial Poisson stream at the demand density."""
    if rate <= 0:
        return
    for lane in range(N_LANES):
        x = sc.road_length
        while True:
            v = sc.v_init
            x -= max(VEHICLE_LENGTH + 2.0 + ENTRY_HEADWAY * v, rng.exponential(v / rate))
            if x < 0:
                break
            w.add(BG, x, lane, v, style=int(rng.integers(0, 2)))


def run_traffic_flow(sc: Scenario) -> SimLog:
    """Two-lane corridor with Poisson demand; the EV enters after the warm-up and drives to the end."""
    if sc.mode != "traffic_flow":
        raise ValueError("scenario mode must be traffic_flow")
    rng = np.random.default_rng(sc.rng_seed)
    eng = _Engine.create(sc, CvDesired(y_des=EV_LANE * sc.lane_width))
    w = eng.world
    rate = sc.vc_ratio * sc.lane_capacity / 3600.0
    limit = sc.warmup + TRAFFIC_TIME_LIMIT
    _populate(sc, w, rng, rate)
    arrivals = [list(_arrivals(rng, rate, limit)) for _ in range(N_LANES)]
    styles = [list(rng.integers(0, 2, size=len(a))) for a in arrivals]
    queues: list[list[int]] = [[] for _ in range(N_LANES)]
    ev_waiting = True

    n_steps = int(round(limit / sc.dt))
    for _ in range(n_steps):
        t = w.t
        lane = w.lane()
        for L in range(N_LANES):
            while arrivals[L] and arrivals[L][0] <= t + 1e-9:
                arrivals[L].pop(0)
                queues[L].append(int(styles[L].pop(0)))
            want_ev = L == EV_LANE and ev_waiting and t >= sc.warmup - 1e-9
            if not (queues[L] or want_ev):
                continue
            in_lane = np.flatnonzero(lane == L)
            v_entry = sc.v_init
            if in_lane.size:
                last = in_lane[np.argmin(w.x[in_lane])]
                v_entry = min(sc.v_init, float(w.v[last]))
                if w.x[last] - VEHICLE_LENGTH < 2.0 + ENTRY_HEADWAY * v_entry:
                    continue
            if want_ev:
                eng.ev_id = w.add(EV, 0.0, L, v_entry)
                eng.log.ev_id = eng.ev_id
                eng.log.ev_entry_time = round(t, 10)
                ev_waiting = False
            else:
                w.add(BG, 0.0, L, v_entry, style=queues[L].pop(0))
        # vehicles leave at the end of the corridor
        gone = (w.x > sc.road_length) & (w.role != EV)
        if gone.any():
            w.keep(~gone)
        if not eng.step():
            break
        ev = w.index_of(eng.ev_id)
        if ev >= 0 and w.x[ev] >= sc.road_length:
            rows = eng.log._rows[-1]
            x_prev = float(rows[rows[:, 1] == eng.ev_id][0, 4])
            frac = (sc.road_length - x_prev) / max(w.x[ev] - x_prev, 1e-12)
            eng.log.ev_exit_time = round(w.t - sc.dt + frac * sc.dt, 10)
            eng.log.ev_exit_x = sc.road_length
            break
    eng.final_snapshot()
    return eng.log.finalize()


def run(sc: Scenario) -> SimLog:
    return run_function_validation(sc) if sc.mode == "function_validation" else run_traffic_flow(sc)
