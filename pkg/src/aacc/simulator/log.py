"""Append-only record of one run and its CSV/JSON serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from aacc.simulator.scenario import Scenario
from aacc.simulator.world import ROLE_NAMES, LaneChangeEvent, World

RECORD_COLUMNS = ("t", "id", "role", "lane", "x", "y", "v", "psi", "a_cmd")
EV_COLUMNS = ("t", "a_ev", "engaged", "status")
BETA_COLUMNS = ("t", "id", "beta1", "beta2", "beta3", "beta4", "beta5", "converged")


@dataclass
class SimLog:
    """Everything a run produced.

    ``records`` holds one row per logged vehicle per step (state at the start
    of the step and the acceleration commanded for it). ``ev`` holds the EV's
    command per step and the id of the engaged competitor (-1 if none).
    ``solve_times`` are wall-clock and therefore excluded from equality.
    """

    scenario: Scenario
    records: dict = field(default_factory=dict)
    ev: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    solve_times: list = field(default_factory=list)
    collision: bool = False
    collision_pairs: list = field(default_factory=list)
    ev_id: int = 0
    ev_entry_time: float | None = None
    ev_exit_time: float | None = None
    ev_exit_x: float | None = None
    error: str | None = None

    _rows: list = field(default_factory=list, repr=False)
    _ev_rows: list = field(default_factory=list, repr=False)
    _beta_rows: list = field(default_factory=list, repr=False)

    # -- building -------------------------------------------------------------------
    def snapshot(self, w: World, mask=None, a_cmd=None) -> None:
        sel = np.ones(w.n, dtype=bool) if mask is None else mask
        a = w.a if a_cmd is None else a_cmd
        n = int(sel.sum())
        block = np.empty((n, len(RECORD_COLUMNS)))
        block[:, 0] = round(w.t, 10)
        block[:, 1] = w.id[sel]
        block[:, 2] = w.role[sel]
        block[:, 3] = w.lane()[sel]
        block[:, 4] = w.x[sel]
        block[:, 5] = w.y[sel]
        block[:, 6] = w.v[sel]
        block[:, 7] = w.psi[sel]
        block[:, 8] = np.asarray(a)[sel]
        self._rows.append(block)

    def ev_step(self, t: float, a_ev: float, engaged: int, status: str, solve_time: float | None) -> None:
        self._ev_rows.append((round(t, 10), a_ev, engaged, status))
        if solve_time is not None:
            self.solve_times.append(solve_time)

    def beta_step(self, t: float, vid: int, style, converged: bool) -> None:
        b = style.as_vector() if style is not None else np.full(5, np.nan)
        self._beta_rows.append((round(t, 10), vid, *b, converged))

    def add_events(self, events) -> None:
        self.events.extend(events)

    def finalize(self) -> "SimLog":
        rows = np.vstack(self._rows) if self._rows else np.empty((0, len(RECORD_COLUMNS)))
        self.records = {c: rows[:, k].copy() for k, c in enumerate(RECORD_COLUMNS)}
        for c in ("id", "role", "lane"):
            self.records[c] = self.records[c].astype(np.int64)
        ev = list(zip(*self._ev_rows)) if self._ev_rows else [[]] * len(EV_COLUMNS)
        self.ev = {
            "t": np.asarray(ev[0], dtype=float),
            "a_ev": np.asarray(ev[1], dtype=float),
            "engaged": np.asarray(ev[2], dtype=np.int64),
            "status": list(ev[3]),
        }
        br = list(zip(*self._beta_rows)) if self._beta_rows else [[]] * len(BETA_COLUMNS)
        self.beta = {c: np.asarray(br[k], dtype=np.int64 if c == "id" else (bool if c == "converged" else float))
                     for k, c in enumerate(BETA_COLUMNS)}
        self._rows, self._ev_rows, self._beta_rows = [], [], []
        return self

    # -- queries --------------------------------------------------------------------
    def vehicle(self, vid: int) -> dict:
        sel = self.records["id"] == vid
        return {c: v[sel] for c, v in self.records.items()}

    def role_ids(self, role: str) -> list[int]:
        code = ROLE_NAMES.index(role)
        return sorted(set(self.records["id"][self.records["role"] == code].tolist()))

    def events_of(self, vid: int, kind: str | None = None) -> list[LaneChangeEvent]:
        return [e for e in self.events if e.vid == vid and (kind is None or e.kind == kind)]

    def fingerprint(self) -> tuple:
        """Everything except wall-clock timing, as comparable bytes."""
        rec = b"".join(np.ascontiguousarray(self.records[c]).tobytes() for c in RECORD_COLUMNS)
        ev = np.ascontiguousarray(self.ev["a_ev"]).tobytes() + np.ascontiguousarray(self.ev["engaged"]).tobytes()
        beta = b"".join(np.ascontiguousarray(self.beta[c]).tobytes() for c in BETA_COLUMNS)
        events = json.dumps([e.as_dict() for e in self.events]).encode()
        return rec, ev, tuple(self.ev["status"]), beta, events, self.collision, self.ev_exit_time

    def __eq__(self, other) -> bool:
        return isinstance(other, SimLog) and self.scenario == other.scenario and self.fingerprint() == other.fingerprint()

    __hash__ = None

    # -- serialization --------------------------------------------------------------
    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            r = self.records
            roles = [ROLE_NAMES[k] for k in r["role"]]
            for k in range(len(r["t"])):
                w.writerow([
                    f"{r['t'][k]:.1f}", int(r["id"][k]), roles[k], int(r["lane"][k]),
                    repr(float(r["x"][k])), repr(float(r["y"][k])), repr(float(r["v"][k])),
                    repr(float(r["psi"][k])), repr(float(r["a_cmd"][k])),
                ])

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "scenario_hash": self.scenario.digest(),
            "collision": self.collision,
            "collision_pairs": self.collision_pairs,
            "ev_entry_time": self.ev_entry_time,
            "ev_exit_time": self.ev_exit_time,
            "events": [e.as_dict() for e in self.events],
            "error": self.error,
        }
