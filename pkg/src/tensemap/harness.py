"""Shared random baseline, mutation vs. random-control branches, and their metrics.

Run directory layout::

    manifest.json                 effective config, seeds, status, metrics
    trials_shared_random.csv      shared random phase (both branches start here)
    trials_mutation.csv           MAP-Elites branch
    trials_random_control.csv     random control branch
    archive_shared.csv            snapshot after the shared phase
    archive_mutation.csv
    archive_random_control.csv
    metrics.csv
    plots/<branch>/grid_psi_*.csv, arrows.svg, arrows.csv
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .bridge import Evaluator, make_backend
from .config import ExperimentConfig
from .repertoire import (DEFAULT_GEOMETRY, STREAM_CONTROL, STREAM_MUTATION, STREAM_SHARED, Archive,
                         BinGeometry, EvaluationError, SearchConfig, fitness, replay,
                         run_map_elites)
from .trials import Outcome, TrialLog, TrialRecord, read_trial_log, utc_now

log = logging.getLogger(__name__)

TRIAL_SETS = ("shared_random_100", "mutation_400", "random_400", "mutation_total_500")
METRICS_HEADER = ["trial_set", "trials", "unique_behaviors", "avg_elite_fitness",
                  "avg_trial_fitness", "coverage"]


class MetricsError(ValueError):
    """Trial logs are inconsistent (duplicate ids, wrong phases, missing files)."""


@dataclass(frozen=True)
class RunLayout:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.csv"

    def log(self, phase: str) -> Path:
        return self.root / f"trials_{phase}.csv"

    def archive(self, name: str) -> Path:
        return self.root / f"archive_{name}.csv"

    def plots(self, branch: str) -> Path:
        return self.root / "plots" / branch


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricsRow:
    trials: int
    unique_behaviors: int
    avg_elite_fitness: float | None
    avg_trial_fitness: float | None
    coverage: float


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _opt_float(s: str) -> float | None:
    return None if s == "" else float(s)


class MetricsTable:
    """Per trial set: unique bins, mean elite fitness, mean trial fitness, coverage."""

    def __init__(self, rows: dict[str, MetricsRow]):
        self.rows = dict(rows)

    def __getitem__(self, name: str) -> MetricsRow:
        return self.rows[name]

    def __eq__(self, other):
        return isinstance(other, MetricsTable) and self.rows == other.rows

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for name, r in self.rows.items():
                w.writerow([name, r.trials, r.unique_behaviors, _fmt(r.avg_elite_fitness),
                            _fmt(r.avg_trial_fitness), _fmt(r.coverage)])

    @classmethod
    def from_csv(cls, path) -> "MetricsTable":
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != METRICS_HEADER:
                raise MetricsError(f"{path}: unexpected header {reader.fieldnames}")
            rows = {r["trial_set"]: MetricsRow(int(r["trials"]), int(r["unique_behaviors"]),
                                               _opt_float(r["avg_elite_fitness"]),
                                               _opt_float(r["avg_trial_fitness"]),
                                               float(r["coverage"]))
                    for r in reader}
        return cls(rows)

    def to_dict(self) -> dict:
        return {k: dataclasses.asdict(r) for k, r in self.rows.items()}

    def format(self) -> str:
        lines = [f"{'trial set':<20} {'trials':>6} {'unique':>6} {'elite fit':>9} "
                 f"{'trial fit':>9} {'coverage':>8}"]
        for name, r in self.rows.items():
            ef = "-" if r.avg_elite_fitness is None else f"{r.avg_elite_fitness:.3f}"
            tf = "-" if r.avg_trial_fitness is None else f"{r.avg_trial_fitness:.3f}"
            lines.append(f"{name:<20} {r.trials:>6} {r.unique_behaviors:>6} {ef:>9} {tf:>9} "
                         f"{100 * r.coverage:>7.1f}%")
        return "\n".join(lines)


def completed(records: Sequence[TrialRecord], phase: str | None = None) -> list[TrialRecord]:
    """Non-error records in trial order; an errored trial retried on resume counts once."""
    out, seen = [], set()
    for rec in records:
        if rec.outcome is Outcome.ERROR:
            continue
        if rec.trial_id in seen:
            raise MetricsError(f"trial {rec.trial_id} appears twice")
        if phase is not None and rec.phase != phase:
            raise MetricsError(f"trial {rec.trial_id} has phase {rec.phase!r}, expected {phase!r}")
        seen.add(rec.trial_id)
        out.append(rec)
    return out


def _mean(values) -> float | None:
    values = list(values)
    return round(float(np.mean(values)), 6) if values else None


def _row(records, elites, n_bins, geometry) -> MetricsRow:
    # rounded to the csv resolution so a table read back from disk compares equal
    return MetricsRow(
        trials=len(records),
        unique_behaviors=len(elites),
        avg_elite_fitness=_mean(e.fitness for e in elites),
        avg_trial_fitness=_mean(fitness(r.behavior, geometry) for r in records),
        coverage=round(len(elites) / n_bins, 6),
    )


def compute_metrics(shared: Sequence[TrialRecord], mutation: Sequence[TrialRecord],
                    control: Sequence[TrialRecord],
                    geometry: BinGeometry = DEFAULT_GEOMETRY) -> MetricsTable:
    """Table of the four trial sets, recomputed from the logs alone.

    A branch's unique behaviors are the bins it newly occupied on top of the
    shared snapshot, so ``mutation_total = shared + mutation`` holds exactly.
    Elite fitness is read from the archive at the end of each set. Skipped
    (stationary) trials count toward trial fitness with fitness 0.
    """
    shared = completed(shared, "shared_random")
    mutation = completed(mutation, "mutation")
    control = completed(control, "random_control")
    base = replay(shared, geometry)
    mut = replay(mutation, geometry, base.copy())
    ctl = replay(control, geometry, base.copy())
    n = geometry.n_bins
    new_mut = [mut[k] for k in mut if k not in base]
    new_ctl = [ctl[k] for k in ctl if k not in base]
    return MetricsTable({
        "shared_random_100": _row(shared, base.elites(), n, geometry),
        "mutation_400": _row(mutation, new_mut, n, geometry),
        "random_400": _row(control, new_ctl, n, geometry),
        "mutation_total_500": _row(list(shared) + list(mutation), mut.elites(), n, geometry),
    })


def load_logs(run_dir) -> dict[str, list[TrialRecord]]:
    layout = RunLayout(run_dir)
    out = {}
    for phase in ("shared_random", "mutation", "random_control"):
        path = layout.log(phase)
        if not path.exists():
            raise MetricsError(f"missing trial log {path}")
        out[phase] = read_trial_log(path)
    return out


def metrics_from_dir(run_dir, geometry: BinGeometry | None = None) -> MetricsTable:
    if geometry is None:
        geometry = _manifest_config(run_dir).geometry
    logs = load_logs(run_dir)
    return compute_metrics(logs["shared_random"], logs["mutation"], logs["random_control"],
                           geometry)


def archives_from_dir(run_dir, geometry: BinGeometry | None = None) -> dict[str, Archive]:
    """Rebuild the shared snapshot and both branch archives from the logs."""
    if geometry is None:
        geometry = _manifest_config(run_dir).geometry
    logs = load_logs(run_dir)
    base = replay(completed(logs["shared_random"]), geometry)
    return {
        "shared": base,
        "mutation": replay(completed(logs["mutation"]), geometry, base.copy()),
        "random_control": replay(completed(logs["random_control"]), geometry, base.copy()),
    }


def _manifest_config(run_dir) -> ExperimentConfig:
    path = RunLayout(run_dir).manifest
    if not path.exists():
        return ExperimentConfig()
    return ExperimentConfig.from_dict(json.loads(path.read_text())["config"])


# ---------------------------------------------------------------------------
# experiment

@dataclass
class ExperimentResult:
    metrics: MetricsTable
    archives: dict[str, Archive]
    logs: dict[str, list[TrialRecord]]
    out_dir: Path


def build_evaluator(cfg: ExperimentConfig) -> Evaluator:
    sim = None
    if cfg.evaluator.backend == "surrogate":
        from .sim import TensegritySim

        sim = TensegritySim(cfg.structure_spec(), cfg.sim)
    return Evaluator(cfg.evaluator, make_backend(cfg.evaluator, sim), cfg.geometry)


def _seeds(cfg: ExperimentConfig) -> dict:
    return {"master": cfg.seed,
            "shared": [cfg.seed, STREAM_SHARED],
            "random_control": [cfg.seed, STREAM_CONTROL],
            "mutation": [cfg.seed, STREAM_MUTATION],
            "surrogate": cfg.sim.seed}


def _write_manifest(layout: RunLayout, cfg: ExperimentConfig, status: str, **extra) -> None:
    doc = {"tool": "tensemap", "version": __version__, "updated": utc_now(), "status": status,
           "config": cfg.to_dict(), "seeds": _seeds(cfg),
           "stationarity_threshold": cfg.evaluator.stationarity_threshold}
    doc.update(extra)
    tmp = layout.manifest.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    tmp.replace(layout.manifest)


def load_manifest_config(run_dir) -> ExperimentConfig:
    path = RunLayout(run_dir).manifest
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {run_dir}; nothing to resume")
    cfg = ExperimentConfig.from_dict(json.loads(path.read_text())["config"])
    return cfg.replace(out_dir=str(run_dir))


def _run_phase(layout: RunLayout, phase: str, search: SearchConfig, evaluator: Callable,
               archive: Archive, resume: bool, geometry: BinGeometry):
    path = layout.log(phase)
    records = read_trial_log(path) if resume and path.exists() else []
    replay(completed(records), geometry, archive)
    with TrialLog(path) as sink:
        return run_map_elites(search, evaluator, archive, records, sink)


def run_experiment(cfg: ExperimentConfig, evaluator: Callable | None = None,
                   resume: bool = False, plots: bool = True) -> ExperimentResult:
    """Shared phase once, then both branches from its snapshot; resumable."""
    layout = RunLayout(cfg.out_dir)
    layout.root.mkdir(parents=True, exist_ok=True)
    phases = ("shared_random", "random_control", "mutation")
    if not resume and any(layout.log(p).exists() for p in phases):
        raise FileExistsError(f"{layout.root} already holds trial logs; use resume")
    if evaluator is None:
        evaluator = build_evaluator(cfg)
    geometry = cfg.geometry
    _write_manifest(layout, cfg, "running")

    shared_cfg = SearchConfig(n_random=cfg.n_shared, n_mutation=0, sigma=cfg.sigma,
                              seed=cfg.seed, random_phase="shared_random",
                              random_stream=STREAM_SHARED)
    control_cfg = SearchConfig(n_random=cfg.n_branch, n_mutation=0, sigma=cfg.sigma,
                               seed=cfg.seed, random_phase="random_control",
                               random_stream=STREAM_CONTROL, first_trial_id=cfg.n_shared)
    mutation_cfg = SearchConfig(n_random=0, n_mutation=cfg.n_branch, sigma=cfg.sigma,
                                seed=cfg.seed, mutation_phase="mutation",
                                first_trial_id=cfg.n_shared)
    try:
        shared, shared_log = _run_phase(layout, "shared_random", shared_cfg, evaluator,
                                        Archive(geometry), resume, geometry)
        shared.to_csv(layout.archive("shared"))
        control, control_log = _run_phase(layout, "random_control", control_cfg, evaluator,
                                          shared.copy(), resume, geometry)
        mutation, mutation_log = _run_phase(layout, "mutation", mutation_cfg, evaluator,
                                            shared.copy(), resume, geometry)
    except EvaluationError as exc:
        _write_manifest(layout, cfg, "interrupted", error=str(exc))
        raise

    control.to_csv(layout.archive("random_control"))
    mutation.to_csv(layout.archive("mutation"))
    metrics = compute_metrics(shared_log, mutation_log, control_log, geometry)
    metrics.to_csv(layout.metrics)
    archives = {"shared": shared, "mutation": mutation, "random_control": control}
    if plots:
        from .plots import emit_branch_plots

        for name in ("mutation", "random_control"):
            emit_branch_plots(archives[name], layout.plots(name))
    _write_manifest(layout, cfg, "complete", metrics=metrics.to_dict())
    logs = {"shared_random": shared_log, "mutation": mutation_log,
            "random_control": control_log}
    return ExperimentResult(metrics, archives, logs, layout.root)


def summarize_seeds(results: Sequence[MetricsTable]) -> dict:
    """Win count and median ratios of the mutation branch over the control."""
    new_m = np.array([r["mutation_400"].unique_behaviors for r in results], dtype=float)
    new_c = np.array([r["random_400"].unique_behaviors for r in results], dtype=float)
    ratio = np.where(new_c > 0, new_m / np.maximum(new_c, 1), math.inf)
    fit_m = [r["mutation_400"].avg_elite_fitness for r in results]
    fit_c = [r["random_400"].avg_elite_fitness for r in results]
    return {
        "seeds": len(results),
        "wins": int((new_m > new_c).sum()),
        "median_ratio": float(np.median(ratio)),
        "median_elite_fitness_mutation": float(np.median([f or 0.0 for f in fit_m])),
        "median_elite_fitness_control": float(np.median([f or 0.0 for f in fit_c])),
    }
