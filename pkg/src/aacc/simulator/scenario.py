"""Scenario definition for the closed-loop experiments."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from aacc.style import StyleParams

MODES = ("function_validation", "traffic_flow")
CONTROLLERS = ("aacc", "baseline")
STYLES = ("conservative", "aggressive")
CV_DRIVERS = ("idm", "lqr")
STYLE_SOURCES = ("ioc", "declared")


@dataclass(frozen=True)
class Scenario:
    """One simulation run. Distances in metres, speeds in m/s, times in seconds.

    ``initial_gap`` is the initial centre-to-centre distance from the EV to the
    CV, i.e. the first component of the joint state. The CV starts at
    ``cv_speed``, slightly faster than the EV, as a merging driver would.
    ``cv_driver="lqr"`` replaces the IDM/MOBIL CV by the follower model with
    weights ``cv_beta``; it is a test harness for the identifier and keeps
    the CV in its own lane. ``style_source="declared"`` hands the planner the
    CV's true profile instead of the identified one and exists only for
    diagnosing the planner separately from identification.
    """

    road_length: float = 3000.0
    lane_width: float = 3.5
    dt: float = 0.1
    horizon: float = 1.0
    v_lim: float = 25.0
    cv_style: str = "conservative"
    initial_gap: float = 20.0
    controller: str = "aacc"
    mode: str = "function_validation"
    vc_ratio: float = 0.4
    rng_seed: int = 0

    t_max: float = 60.0
    v_init: float = 18.0
    pv_gap: float = 100.0  # PV centre ahead of the EV centre
    pv_speed: float = 18.0
    mandatory_bias: float = 4.0  # MOBIL bias toward the EV lane for the CV
    lane_change_time: float = 3.0
    lane_capacity: float = 2200.0  # veh/h/lane
    warmup: float = 30.0  # traffic mode: background settling before the EV enters
    log_window: tuple = (-100.0, 300.0)  # traffic mode: logged x range around the EV

    cv_driver: str = "idm"
    cv_beta: StyleParams | None = None
    cv_speed: float | None = 20.0  # None means v_init
    style_source: str = "ioc"

    def __post_init__(self):
        if isinstance(self.cv_beta, dict):
            object.__setattr__(self, "cv_beta", StyleParams(tuple(self.cv_beta["beta_long"]), tuple(self.cv_beta["beta_lat"])))
        object.__setattr__(self, "log_window", tuple(self.log_window))
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ValueError(msg)

        need(self.mode in MODES, f"mode must be one of {MODES}")
        need(self.controller in CONTROLLERS, f"controller must be one of {CONTROLLERS}")
        need(self.cv_style in STYLES, f"cv_style must be one of {STYLES}")
        need(self.cv_driver in CV_DRIVERS, f"cv_driver must be one of {CV_DRIVERS}")
        need(self.style_source in STYLE_SOURCES, f"style_source must be one of {STYLE_SOURCES}")
        for name in ("road_length", "lane_width", "dt", "horizon", "v_lim", "t_max", "lane_change_time", "lane_capacity"):
            need(getattr(self, name) > 0, f"{name} must be positive")
        need(self.initial_gap >= 0, "initial_gap must be non-negative")
        need(0.0 <= self.vc_ratio <= 1.0, "vc_ratio must lie in [0, 1]")
        need(self.v_init >= 0 and self.pv_speed >= 0, "speeds must be non-negative")
        need(self.warmup >= 0, "warmup must be non-negative")
        need(self.mandatory_bias >= 0, "mandatory_bias must be non-negative")
        need(abs(round(self.horizon / self.dt) * self.dt - self.horizon) < 1e-9, "horizon must be a whole number of steps")
        need(self.log_window[0] < self.log_window[1], "log_window must be increasing")
        need(self.cv_driver != "lqr" or self.cv_beta is not None, "cv_driver='lqr' needs cv_beta")
        need(self.cv_driver != "lqr" or self.mode == "function_validation", "the lqr harness is function-validation only")
        need(int(self.rng_seed) == self.rng_seed and self.rng_seed >= 0, "rng_seed must be a non-negative integer")

    @property
    def n_horizon(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["log_window"] = list(self.log_window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
