"""Batch experiment runner plus two debugging entry points.

    aacc run --config experiments.yaml [--mode fv|traffic] [--out DIR] [--plots] [--jobs N] [--seed S]
    aacc identify --trajectory replay.csv
    aacc plan --state state.json

Logging verbosity comes from ``AACC_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

import aacc
from aacc.gmpc import EvObjective, GmpcConfig, plan
from aacc.ioc import identify_offline, load_trajectory_csv
from aacc.simulator import Scenario, compute_metrics, run
from aacc.style import CvDesired, StyleParams
from aacc.dynamics import SystemState

log = logging.getLogger("aacc")

LOG_ENV = "AACC_LOG_LEVEL"
MODE_NAMES = {"fv": "function_validation", "traffic": "traffic_flow"}
FV_STYLES = ("conservative", "aggressive")
FV_GAPS = (10.0, 20.0, 30.0)
TRAFFIC_VC = (0.2, 0.4, 0.6, 0.8)
CONTROLLERS = ("baseline", "aacc")
PLOT_SALT = "aacc"


# -- configuration ----------------------------------------------------------------------
@dataclass(frozen=True)
class ExperimentConfig:
    """What to run. ``scenario`` holds overrides applied to every cell."""

    mode: str = "fv"
    styles: tuple = FV_STYLES
    gaps: tuple = FV_GAPS
    vc_ratios: tuple = TRAFFIC_VC
    replications: int = 10
    seed: int = 0
    controllers: tuple = CONTROLLERS
    out: str = "runs"
    plots: bool = False
    scenario: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("styles", "gaps", "vc_ratios", "controllers"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "gaps", tuple(float(g) for g in self.gaps))
        object.__setattr__(self, "vc_ratios", tuple(float(v) for v in self.vc_ratios))
        object.__setattr__(self, "scenario", dict(self.scenario))
        if self.mode not in MODE_NAMES:
            raise ValueError(f"mode must be one of {sorted(MODE_NAMES)}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        self.scenarios()  # validates every cell

    def cells(self) -> list[tuple[str, dict]]:
        """(run name, Scenario keyword arguments) for every cell, in a fixed order."""
        base = dict(self.scenario)
        base["mode"] = MODE_NAMES[self.mode]
        out = []
        if self.mode == "fv":
            for style in self.styles:
                for gap in self.gaps:
                    for ctl in self.controllers:
                        kw = dict(base, cv_style=style, initial_gap=gap, controller=ctl, rng_seed=self.seed)
                        out.append((f"fv_{style}_g{gap:g}_{ctl}", kw))
        else:
            for vc in self.vc_ratios:
                for k in range(self.replications):
                    seed = self.seed + k
                    for ctl in self.controllers:
                        kw = dict(base, vc_ratio=vc, controller=ctl, rng_seed=seed)
                        out.append((f"traffic_vc{vc:g}_s{seed}_{ctl}", kw))
        return out

    def scenarios(self) -> list[Scenario]:
        return [Scenario.from_dict(kw) for _, kw in self.cells()]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("styles", "gaps", "vc_ratios", "controllers"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError("config must be a mapping")
        return cls.from_dict(data)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


# -- manifest ---------------------------------------------------------------------------
@dataclass
class RunRecord:
    name: str
    scenario_hash: str
    seed: int
    scenario: dict
    files: list = field(default_factory=list)
    wall_time: float = 0.0
    error: str | None = None
    collision: bool = False
    metrics: dict | None = None


@dataclass
class RunManifest:
    out_dir: str
    mode: str = "fv"
    runs: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    plots: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)

    def files(self) -> list[str]:
        return [f for r in self.runs for f in r.files] + list(self.tables) + list(self.plots)

    @property
    def ok(self) -> bool:
        """All cells ran; no aacc collision in function validation."""
        if any(r.error for r in self.runs):
            return False
        if self.mode == "fv":
            return not any(r.collision for r in self.runs if r.scenario.get("controller") == "aacc")
        return True

    def to_dict(self) -> dict:
        return {
            "out_dir": self.out_dir,
            "mode": self.mode,
            "versions": self.versions,
            "runs": [asdict(r) for r in self.runs],
            "tables": self.tables,
            "plots": self.plots,
            "files": self.files(),
        }

    def write(self, path=None) -> Path:
        path = Path(path or Path(self.out_dir) / "manifest.json")
        path.write_text(json.dumps(self.to_dict(), indent=2, default=_jsonable) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        runs = [RunRecord(**r) for r in d["runs"]]
        return cls(d["out_dir"], d.get("mode", "fv"), runs, d.get("tables", []), d.get("plots", []), d.get("versions", {}))


def versions() -> dict:
    import matplotlib
    import scipy

    return {
        "aacc": aacc.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, StyleParams):
        return {"beta_long": list(x.beta_long), "beta_lat": list(x.beta_lat)}
    raise TypeError(f"not serializable: {type(x).__name__}")


# -- running ----------------------------------------------------------------------------
def run_cell(name: str, kw: dict, out_dir: str) -> RunRecord:
    """Run one scenario and write its CSV and JSON; failures are captured, not raised."""
    sc = Scenario.from_dict(kw)
    rec = RunRecord(name, sc.digest(), sc.rng_seed, sc.to_dict())
    t0 = time.perf_counter()
    try:
        sim = run(sc)
        metrics = compute_metrics(sim)
        csv_path = Path(out_dir) / f"{name}.csv"
        json_path = Path(out_dir) / f"{name}.json"
        sim.write_csv(csv_path)
        summary = sim.summary()
        summary["metrics"] = metrics.as_dict()
        json_path.write_text(json.dumps(summary, indent=2, default=_jsonable) + "\n")
        rec.files = [str(csv_path), str(json_path)]
        rec.collision = sim.collision
        rec.metrics = metrics.as_dict()
        rec.error = sim.error
    except Exception as exc:  # one broken cell must not sink the matrix
        log.exception("cell %s failed", name)
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - t0
    return rec


def run_matrix(cfg: ExperimentConfig, jobs: int = 1) -> RunManifest:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = cfg.cells()
    log.info("running %d cells with %d worker(s)", len(cells), jobs)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, name, kw, str(out)) for name, kw in cells]
            records = [f.result() for f in futures]
    else:
        records = [run_cell(name, kw, str(out)) for name, kw in cells]
    manifest = RunManifest(str(out), cfg.mode, records, versions=versions())
    manifest.tables = write_tables(manifest)
    if cfg.plots:
        manifest.plots = emit_plots(manifest)
    manifest.write()
    return manifest


def benefit(base: float, new: float, higher_is_better: bool = True) -> float:
    """Relative improvement of ``new`` over ``base`` in percent (nan when undefined)."""
    if base == 0:
        return float("nan")
    change = (new - base) / abs(base) * 100.0
    return change if higher_is_better else -change


def aggregate_tables(manifest: RunManifest) -> dict[str, list[dict]]:
    """Baseline vs aacc comparison rows; fv by style and gap, traffic by v/c."""
    done = [r for r in manifest.runs if r.metrics is not None]
    tables: dict[str, list[dict]] = {}
    if manifest.mode == "fv":
        keys = sorted({(r.scenario["cv_style"], r.scenario["initial_gap"]) for r in done})
        rows = []
        for style, gap in keys:
            by = {r.scenario["controller"]: r.metrics for r in done
                  if r.scenario["cv_style"] == style and r.scenario["initial_gap"] == gap}
            if set(by) != set(CONTROLLERS):
                continue
            b, a = by["baseline"], by["aacc"]
            rows.append({
                "style": style, "gap_m": gap,
                "avg_speed_baseline": b["avg_speed_ev"], "avg_speed_aacc": a["avg_speed_ev"],
                "avg_speed_benefit_pct": benefit(b["avg_speed_ev"], a["avg_speed_ev"]),
                "tth_baseline": b["tth"], "tth_aacc": a["tth"],
                "tth_benefit_pct": benefit(b["tth"], a["tth"], higher_is_better=False),
            })
        if rows:
            tables["fv_summary"] = rows
    else:
        rows = []
        for vc in sorted({r.scenario["vc_ratio"] for r in done}):
            row: dict = {"vc_ratio": vc}
            for metric, key, better_high in (("travel_time", "travel_time_ev", False), ("speed_std", "speed_std_ev", False)):
                means = {}
                for ctl in CONTROLLERS:
                    vals = [r.metrics[key] for r in done if r.scenario["vc_ratio"] == vc and r.scenario["controller"] == ctl]
                    means[ctl] = float(np.mean(vals)) if vals else float("nan")
                row[f"{metric}_baseline"] = means["baseline"]
                row[f"{metric}_aacc"] = means["aacc"]
                row[f"{metric}_benefit_pct"] = benefit(means["baseline"], means["aacc"], better_high)
            row["n_seeds"] = len({r.seed for r in done if r.scenario["vc_ratio"] == vc})
            rows.append(row)
        if rows:
            tables["traffic_summary"] = rows
    return tables


def write_tables(manifest: RunManifest) -> list[str]:
    paths = []
    for name, rows in aggregate_tables(manifest).items():
        path = Path(manifest.out_dir) / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
        paths.append(str(path))
    return paths


# -- plots ------------------------------------------------------------------------------
def _read_run_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty run file")
    cols = {k: [r[k] for r in rows] for k in rows[0]}
    out = {k: np.array(v, dtype=float) for k, v in cols.items() if k != "role"}
    out["role"] = np.array(cols["role"])
    return out


def _svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_run(csv_path, out_dir, stem: str) -> list[str]:
    """Speed, longitudinal position and sampled trajectories of one run, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = PLOT_SALT
    d = _read_run_csv(csv_path)
    shown = [r for r in ("EV", "CV", "PV") if (d["role"] == r).any()]
    paths = []
    for kind, ylabel in (("speed", "speed [m/s]"), ("position", "longitudinal position [m]")):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for role in shown:
            for vid in np.unique(d["id"][d["role"] == role]):
                sel = d["id"] == vid
                ax.plot(d["t"][sel], d["v" if kind == "speed" else "x"][sel], label=f"{role} {int(vid)}")
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        p = Path(out_dir) / f"{stem}_{kind}.svg"
        _svg(fig, p)
        plt.close(fig)
        paths.append(str(p))

    fig, ax = plt.subplots(figsize=(8, 2.5))
    t = d["t"]
    sample = np.isclose(np.mod(t + 1e-9, 2.0), 0.0, atol=1e-6)  # every 2 s
    for role, marker in (("background", "."), ("PV", "s"), ("CV", "^"), ("EV", "o")):
        sel = sample & (d["role"] == role)
        if sel.any():
            ax.scatter(d["x"][sel], d["y"][sel], s=12, marker=marker, label=role)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    p = Path(out_dir) / f"{stem}_trajectory.svg"
    _svg(fig, p)
    plt.close(fig)
    paths.append(str(p))
    return paths


def plot_tables(manifest: RunManifest) -> list[str]:
    """Grouped bar charts of the aggregate tables."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = PLOT_SALT
    paths = []
    for name, rows in aggregate_tables(manifest).items():
        if name == "fv_summary":
            panels = [("avg_speed", "average EV speed [m/s]"), ("tth", "TTH [s²]")]
            groups = [f"{r['style'][:4]} {r['gap_m']:g} m" for r in rows]
        else:
            panels = [("travel_time", "EV travel time [s]"), ("speed_std", "EV speed std [m/s]")]
            groups = [f"v/c {r['vc_ratio']:g}" for r in rows]
        for metric, ylabel in panels:
            fig, ax = plt.subplots(figsize=(6, 3.5))
            x = np.arange(len(rows))
            for k, ctl in enumerate(CONTROLLERS):
                ax.bar(x + (k - 0.5) * 0.38, [r[f"{metric}_{ctl}"] for r in rows], width=0.38, label=ctl)
            ax.set_xticks(x)
            ax.set_xticklabels(groups, fontsize=8)
            ax.set_ylabel(ylabel)
            ax.legend(fontsize=8)
            fig.tight_layout()
            p = Path(manifest.out_dir) / f"{name}_{metric}.svg"
            _svg(fig, p)
            plt.close(fig)
            paths.append(str(p))
    return paths


def emit_plots(manifest: RunManifest) -> list[str]:
    """Three plots per run plus bar charts for each aggregate table."""
    paths = []
    for rec in manifest.runs:
        csvs = [f for f in rec.files if f.endswith(".csv")]
        if not csvs or not Path(csvs[0]).exists():
            log.warning("no run data for %s; plots skipped", rec.name)
            continue
        paths += plot_run(csvs[0], manifest.out_dir, rec.name)
    paths += plot_tables(manifest)
    return paths


# -- debugging commands -----------------------------------------------------------------
def identify_file(path, y_des: float = 0.0) -> dict:
    samples, dt = load_trajectory_csv(path)
    ident = identify_offline(samples, dt, desired=CvDesired(y_des=y_des))
    style = ident.style
    return {
        "n_samples": len(samples),
        "dt": dt,
        "converged": bool(ident.converged),
        "beta_long": list(style.beta_long) if style else None,
        "beta_lat": list(style.beta_lat) if style else None,
        "aggressive": bool(style.is_aggressive()) if style else None,
    }


def plan_from_json(data: dict) -> dict:
    """Single planner solve. Keys: ``state`` (required), ``beta``, ``objective``, ``config``."""
    if "state" not in data:
        raise ValueError("missing 'state'")
    x0 = SystemState(**data["state"])
    beta = data.get("beta")
    style = StyleParams(tuple(beta["beta_long"]), tuple(beta.get("beta_lat", (1.0, 1.0)))) if beta else None
    obj = EvObjective(**data.get("objective", {}))
    cfg_kw = dict(data.get("config", {}))
    if "cv_desired" in cfg_kw:
        cfg_kw["cv_desired"] = CvDesired(**cfg_kw["cv_desired"])
    res = plan(x0, style, obj, GmpcConfig(**cfg_kw))
    return {
        "status": res.status,
        "first_accel": res.first_accel,
        "u_ev": res.u_ev_seq.tolist(),
        "u_cv_pred": res.u_cv_pred.tolist(),
        "cost": res.cost,
        "solve_time": res.solve_time,
    }


# -- entry point ------------------------------------------------------------------------
def configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aacc", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment matrix")
    r.add_argument("--config", required=True, help="YAML experiment file")
    r.add_argument("--mode", choices=sorted(MODE_NAMES))
    r.add_argument("--out")
    r.add_argument("--plots", action="store_true", default=None)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int)
    i = sub.add_parser("identify", help="offline identification on a replay file")
    i.add_argument("--trajectory", required=True)
    i.add_argument("--y-des", type=float, default=0.0, help="target lane centre of the replayed CV")
    p = sub.add_parser("plan", help="one planner solve for debugging")
    p.add_argument("--state", required=True, help="JSON file with state/beta/objective/config")
    return ap


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = ExperimentConfig.load(args.config)
            over = {k: v for k, v in (("mode", args.mode), ("out", args.out), ("plots", args.plots), ("seed", args.seed)) if v is not None}
            if over:
                cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **over})
            manifest = run_matrix(cfg, jobs=max(1, args.jobs))
            for name, rows in aggregate_tables(manifest).items():
                print(f"# {name}")
                for row in rows:
                    print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
            failed = [r.name for r in manifest.runs if r.error]
            if failed:
                print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
            print(f"manifest: {Path(manifest.out_dir) / 'manifest.json'}")
            return 0 if manifest.ok else 1
        if args.command == "identify":
            print(json.dumps(identify_file(args.trajectory, args.y_des), indent=2))
            return 0
        if args.command == "plan":
            print(json.dumps(plan_from_json(json.loads(Path(args.state).read_text())), indent=2))
            return 0
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
