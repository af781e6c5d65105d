"""Replicated surrogate trials for sizing bins and choosing the trial duration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import yaml

from .config import ConfigError, default_config_path
from .descriptor import RepeatabilityReport, repeatability_stats
from .repertoire import DEFAULT_GEOMETRY, BinGeometry, ParameterSet
from .sim import SimConfig, TensegritySim, structure_from_dict

# initial-pose jitter plus random node forces that switch on after 10 s, so
# long trials accumulate extra spread
NOISY_SIM = {"noise_mm": 0.5, "process_noise": 0.02, "process_noise_onset_s": 10.0}


@dataclass(frozen=True)
class RepeatabilityConfig:
    params: tuple[ParameterSet, ...]
    durations_s: tuple[float, ...] = (5.0, 10.0, 15.0)
    replicates: int = 10
    seed: int = 0
    sim: SimConfig = field(default_factory=lambda: SimConfig(**NOISY_SIM))
    structure: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            raise ConfigError("need at least one parameter set")
        if self.replicates < 2:
            raise ConfigError("need at least 2 replicates per duration")
        if not self.durations_s or min(self.durations_s) <= 0:
            raise ConfigError("durations must be positive")

    @property
    def n_trials(self) -> int:
        return len(self.params) * len(self.durations_s) * self.replicates

    @classmethod
    def from_file(cls, path, seed: int | None = None) -> "RepeatabilityConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        if isinstance(data, list):
            data = {"params": data}
        if not isinstance(data, dict) or not data.get("params"):
            raise ConfigError(f"{path}: expected a list of [f1, f2, f3] or a mapping with 'params'")
        unknown = set(data) - {"params", "durations_s", "replicates", "seed", "sim", "structure"}
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        try:
            params = tuple(ParameterSet.from_iterable(p) for p in data["params"])
            sim = SimConfig.from_dict({**NOISY_SIM, **(data.get("sim") or {})})
            return cls(params=params,
                       durations_s=tuple(float(d) for d in data.get("durations_s", (5, 10, 15))),
                       replicates=int(data.get("replicates", 10)),
                       seed=int(data.get("seed", 0) if seed is None else seed),
                       sim=sim, structure=dict(data.get("structure") or {}))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {"params": [list(p.as_tuple()) for p in self.params],
                "durations_s": list(self.durations_s), "replicates": self.replicates,
                "seed": self.seed, "sim": dataclasses.asdict(self.sim),
                "structure": dict(self.structure)}


def default_params_path() -> Path:
    return default_config_path("repeatability.yaml")


def run_repeatability(cfg: RepeatabilityConfig, geometry: BinGeometry = DEFAULT_GEOMETRY,
                      progress: Callable[[int, int], None] | None = None,
                      sim: TensegritySim | None = None):
    """Run every (params, duration, replicate) trial; returns (report, trials).

    Replicate ``r`` uses surrogate seed ``cfg.seed + r``, so durations of the
    same replicate share their initial perturbation.
    """
    if sim is None:
        sim = TensegritySim(structure_from_dict(cfg.structure), cfg.sim)
    trials: list[tuple[ParameterSet, float, object]] = []
    done = 0
    for p in cfg.params:
        for d in cfg.durations_s:
            for r in range(cfg.replicates):
                trials.append((p, d, sim.evaluate(p, d, seed=cfg.seed + r)))
                done += 1
                if progress is not None:
                    progress(done, cfg.n_trials)
    return repeatability_stats(trials, geometry), trials


def widths_satisfy_rule(report: RepeatabilityReport, tol: float = 1e-12) -> bool:
    """Suggested widths are at least twice every group's std at the chosen duration."""
    max_std = report.max_std()
    return all(w + tol >= 2.0 * s for w, s in zip(report.suggested_widths, max_std))


def trials_to_rows(trials: Sequence) -> list[list]:
    return [[*p.as_tuple(), d, b.dx, b.dy, b.dpsi] for p, d, b in trials]
