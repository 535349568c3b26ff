"""Experiment campaigns: grid expansion, seeded trials, persistence and resume.

A campaign file is flat YAML. Grid axes take a scalar or a list; every other
key is a scalar::

    name: scaling
    protocol: [uniform, ranking]
    n: [128, 256]
    k: [16]
    q: [0.0]          # optional, defaults to [0.0]
    alpha: [2.0]      # optional
    d: [1.0]          # optional
    c_hat: [0.5]      # optional
    tau: [null]       # optional override of tau
    trials: 50
    base_seed: 0
    horizon: null     # default 50 * (n/k) * tau'
    check: false      # record snapshots and run the property checkers
    out: results/scaling

Trial ``j`` of a cell runs with seed ``base_seed + j``, so any single trial
can be replayed alone from its cell coordinates and index.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from .analysis import SweepResult, TrialSummary, aggregate, summarize
from .engine import SimConfig, run
from .topology import build_gnk

logger = logging.getLogger(__name__)

__all__ = ["Campaign", "CellError", "expand", "execute", "run_trial", "trial_filename", "default_workers", "WORKERS_ENV"]

WORKERS_ENV = "VCONGEST_WORKERS"
AXES = ("protocol", "n", "k", "q", "alpha", "d", "c_hat", "tau")
_AXIS_DEFAULTS: dict[str, list[Any]] = {"q": [0.0], "alpha": [2.0], "d": [1.0], "c_hat": [0.5], "tau": [None]}
TRIAL_COLUMNS = [
    "protocol", "n", "k", "q", "alpha", "d", "c_hat", "tau", "seed",
    "round0_to_completion", "phases", "success", "survivors",
    "p1_violations", "p2_violations", "p3_violations", "p4_violations",
]
SUMMARY_COLUMNS = [
    "protocol", "n", "k", "q", "alpha", "d", "c_hat", "trials", "success_rate",
    "mean_rounds", "median_rounds", "p95_rounds", "rounds_per_diameter",
    "rounds_per_n_over_sqrt_k", "mean_phases",
]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class CellError:
    cell: dict[str, Any]
    reason: str


@dataclass
class Campaign:
    grid: dict[str, list[Any]]
    trials: int = 1
    base_seed: int = 0
    out: str = "results"
    name: str = "campaign"
    horizon: int | None = None
    check: bool = False
    errors: list[CellError] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Campaign":
        data = dict(data)
        grid = {}
        for axis in AXES:
            val = data.pop(axis, None)
            if val is None:
                if axis not in _AXIS_DEFAULTS:
                    raise ValueError(f"campaign is missing the {axis!r} axis")
                val = _AXIS_DEFAULTS[axis]
            vals = list(val) if isinstance(val, (list, tuple)) else [val]
            if not vals:
                if axis not in _AXIS_DEFAULTS:
                    raise ValueError(f"campaign axis {axis!r} is empty")
                vals = list(_AXIS_DEFAULTS[axis])
            grid[axis] = vals
        known = {"trials", "base_seed", "out", "name", "horizon", "check"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown campaign keys: {sorted(unknown)}")
        camp = cls(grid=grid, **data)
        if camp.trials < 1:
            raise ValueError("trials must be positive")
        return camp

    @classmethod
    def from_file(cls, path: str | Path) -> "Campaign":
        data = yaml.safe_load(Path(path).read_text())
        if not isinstance(data, dict):
            raise ValueError(f"{path}: campaign file must be a mapping")
        return cls.from_dict(data)


def expand(campaign: Campaign) -> list[SimConfig]:
    """Cartesian product of the grid, cells in axis order, trials innermost.

    Invalid cells are appended to ``campaign.errors`` with their coordinates
    and skipped.
    """
    campaign.errors.clear()
    configs = []
    axes = [campaign.grid[a] for a in AXES]
    for values in itertools.product(*axes):
        cell = dict(zip(AXES, values))
        try:
            probe = SimConfig(**cell, horizon=campaign.horizon, seed=campaign.base_seed)
        except (TypeError, ValueError) as exc:
            campaign.errors.append(CellError(cell, str(exc)))
            logger.warning("skipping cell %s: %s", cell, exc)
            continue
        for j in range(campaign.trials):
            configs.append(SimConfig.from_dict({**probe.to_dict(), "seed": campaign.base_seed + j}))
    return configs


def trial_filename(cfg: SimConfig) -> str:
    tau = "auto" if cfg.tau is None else str(cfg.tau)
    return (
        f"{cfg.protocol}-n{cfg.n}-k{cfg.k}-q{cfg.q:.6e}-a{cfg.alpha:g}-d{cfg.d:g}"
        f"-c{cfg.c_hat:g}-t{tau}-seed{cfg.seed}.jsonl"
    )


def run_trial(cfg: SimConfig, check: bool = False) -> tuple[TrialSummary, str]:
    """Run one trial; returns its summary and the JSON-lines file body."""
    topo = build_gnk(cfg.n, cfg.k)
    plan = cfg.plan()
    trace = run(cfg, topo, plan, snapshots=check)
    summary = summarize(trace, topo, plan, check=check)
    body = trace.to_jsonl() + json.dumps({"record": "trial", **summary.to_dict()}, sort_keys=True) + "\n"
    return summary, body


def _trial_job(args: tuple[dict[str, Any], bool, str]) -> dict[str, Any]:
    cfg_dict, check, path = args
    cfg = SimConfig.from_dict(cfg_dict)
    try:
        summary, body = run_trial(cfg, check)
    except Exception as exc:  # isolate per-trial failures
        logger.exception("trial %s failed", path)
        summary = _failed_summary(cfg, f"{type(exc).__name__}: {exc}")
        body = json.dumps({"record": "trial", **summary.to_dict()}, sort_keys=True) + "\n"
    tmp = Path(path + ".part")
    tmp.write_text(body)
    tmp.replace(path)
    return summary.to_dict()


def _failed_summary(cfg: SimConfig, reason: str) -> TrialSummary:
    return TrialSummary(
        protocol=cfg.protocol, n=cfg.n, k=cfg.k, q=cfg.q, seed=cfg.seed,
        completion_round=None, completion_round_strict=None, phases=None,
        survivors=0, success=False, rounds_executed=0, aborted=reason,
        config=cfg.to_dict(), derived=cfg.derived(),
    )


def load_trial(path: Path) -> TrialSummary | None:
    """Summary stored in a finished trial file, or None if absent or truncated."""
    try:
        lines = path.read_text().splitlines()
        rec = json.loads(lines[-1])
    except (OSError, IndexError, json.JSONDecodeError):
        return None
    if rec.pop("record", None) != "trial":
        return None
    return TrialSummary.from_dict(rec)


def _sort_key(s: TrialSummary) -> tuple:
    c = s.config
    tau = -1 if c.get("tau") is None else c["tau"]
    return (s.protocol, s.n, s.k, s.q, c.get("alpha"), c.get("d"), c.get("c_hat"), tau, s.seed)


def trial_rows_csv(summaries: Sequence[TrialSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for s in sorted(summaries, key=_sort_key):
        c = s.config
        w.writerow([
            s.protocol, s.n, s.k, repr(s.q), c.get("alpha"), c.get("d"), c.get("c_hat"),
            "" if c.get("tau") is None else c["tau"], s.seed,
            "" if s.completion_round is None else s.completion_round,
            "" if s.phases is None else s.phases,
            int(s.success), s.survivors,
            s.p1_violations, s.p2_violations, s.p3_violations, s.p4_violations,
        ])
    return buf.getvalue()


def summary_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in result.rows:
        row = [getattr(r, col) for col in SUMMARY_COLUMNS]
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def execute(campaign: Campaign, workers: int | None = None, out: str | Path | None = None) -> SweepResult:
    """Run every trial not already on disk, then fold all trial files.

    Layout under the output directory: ``trials/<cell>-seed<s>.jsonl`` per
    trial, ``trials.csv`` with one row per trial and ``summary.csv`` with
    one row per cell. A trial whose file exists is not recomputed.
    """
    out_dir = Path(out or campaign.out)
    trial_dir = out_dir / "trials"
    trial_dir.mkdir(parents=True, exist_ok=True)
    configs = expand(campaign)
    workers = workers or default_workers()

    pending = []
    for cfg in configs:
        path = trial_dir / trial_filename(cfg)
        if load_trial(path) is None:
            pending.append((cfg.to_dict(), campaign.check, str(path)))
    logger.info("%d trials, %d to run, %d workers", len(configs), len(pending), workers)
    if pending:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                list(pool.map(_trial_job, pending, chunksize=max(1, len(pending) // (4 * workers))))
        else:
            for job in pending:
                _trial_job(job)

    wanted = {trial_filename(c) for c in configs}
    summaries = []
    for path in sorted(trial_dir.glob("*.jsonl")):
        if path.name in wanted:
            s = load_trial(path)
            if s is not None:
                summaries.append(s)
    result = aggregate(summaries)
    (out_dir / "trials.csv").write_text(trial_rows_csv(summaries))
    (out_dir / "summary.csv").write_text(summary_csv(result))
    return result
