"""Evaluation quantities derived from a run log."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import trapezoid

from aacc.simulator.log import SimLog
from aacc.traffic_models import VEHICLE_LENGTH

HEADWAY_CAP = 10.5  # s
HEADWAY_THRESHOLD = 1.5  # s
MIN_SPEED = 0.1  # m/s; below this the headway is undefined and set to the cap
HISTOGRAM_EDGES = np.linspace(0.0, HEADWAY_CAP, 22)  # 0.5 s buckets


@dataclass(frozen=True)
class Metrics:
    avg_speed_ev: float
    travel_time_ev: float
    distance_ev: float
    tth: float
    speed_std_ev: float
    headway_histogram: tuple
    mean_headway: float
    min_gap: float
    mean_solve_time: float
    p99_solve_time: float
    collision_flag: bool

    def as_dict(self) -> dict:
        d = asdict(self)
        d["headway_histogram"] = {"edges": HISTOGRAM_EDGES.tolist(), "counts": list(self.headway_histogram)}
        return d


def time_headway(gap, v, cap: float = HEADWAY_CAP) -> np.ndarray:
    """Bumper gap over own speed, capped; ``inf`` gaps and near-standstill map to the cap."""
    gap = np.asarray(gap, dtype=float)
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where((v < MIN_SPEED) | ~np.isfinite(gap), cap, gap / np.maximum(v, MIN_SPEED))
    return np.minimum(h, cap)


def tth(h, dt: float, threshold: float = HEADWAY_THRESHOLD) -> float:
    """Time-integrated headway shortfall below the threshold, in s^2 (one sample per step)."""
    return float(np.sum(np.maximum(0.0, threshold - np.asarray(h, dtype=float))) * dt)


def headway_histogram(h) -> np.ndarray:
    counts, _ = np.histogram(np.clip(h, 0.0, HEADWAY_CAP), bins=HISTOGRAM_EDGES)
    return counts


def ev_series(log: SimLog):
    """Per-step EV time, position, speed, lane and bumper gap to its same-lane leader."""
    r = log.records
    t_all = r["t"]
    ev = r["id"] == log.ev_id
    t = t_all[ev]
    x = r["x"][ev]
    v = r["v"][ev]
    lane = r["lane"][ev]
    gap = np.full(len(t), np.inf)
    order = np.argsort(t_all, kind="stable")
    ts = t_all[order]
    starts = np.searchsorted(ts, t, side="left")
    ends = np.searchsorted(ts, t, side="right")
    for k in range(len(t)):
        rows = order[starts[k]:ends[k]]
        ahead = rows[(r["lane"][rows] == lane[k]) & (r["x"][rows] > x[k]) & (r["id"][rows] != log.ev_id)]
        if ahead.size:
            gap[k] = r["x"][ahead].min() - x[k] - VEHICLE_LENGTH
    return t, x, v, lane, gap


def compute_metrics(log: SimLog, h_threshold: float = HEADWAY_THRESHOLD) -> Metrics:
    if not len(log.records.get("t", ())):
        raise ValueError("log is empty")
    dt = log.scenario.dt
    t, x, v, _, gap = ev_series(log)
    h = time_headway(gap, v)
    # the final snapshot closes the last interval and carries no step of its own
    steps = slice(0, max(len(t) - 1, 1))

    t_end, x_end = t[-1], x[-1]
    if log.ev_exit_time is not None:
        t_end, x_end = log.ev_exit_time, log.ev_exit_x
    travel_time = float(t_end - t[0])
    distance = float(x_end - x[0])
    if len(t) > 1:
        # trapezoidal time average of the sampled speed over the travelled interval
        tt = np.append(t[t < t_end], t_end)
        vv = np.interp(tt, t, v)
        avg = float(trapezoid(vv, tt) / max(tt[-1] - tt[0], 1e-12))
    else:
        avg = float(v[0])

    st = np.asarray(log.solve_times, dtype=float)
    finite_gap = gap[steps][np.isfinite(gap[steps])]
    return Metrics(
        avg_speed_ev=avg,
        travel_time_ev=travel_time,
        distance_ev=distance,
        tth=tth(h[steps], dt, h_threshold),
        speed_std_ev=float(np.std(v[steps])),
        headway_histogram=tuple(int(c) for c in headway_histogram(h[steps])),
        mean_headway=float(np.mean(h[steps])),
        min_gap=float(finite_gap.min()) if finite_gap.size else float("inf"),
        mean_solve_time=float(st.mean()) if st.size else 0.0,
        p99_solve_time=float(np.percentile(st, 99)) if st.size else 0.0,
        collision_flag=bool(log.collision),
    )
