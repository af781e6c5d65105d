"""YAML configuration for experiments and the simulator."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .bridge import EvaluatorConfig
from .repertoire import DEFAULT_SIGMA, BinGeometry
from .sim.structure import StructureSpec, check_structure, structure_from_dict
from .sim.surrogate import SimConfig


class ConfigError(ValueError):
    """Unreadable or inconsistent configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_shared: int = 100
    n_branch: int = 400
    sigma: float = DEFAULT_SIGMA
    out_dir: str = "runs/default"
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    geometry: BinGeometry = field(default_factory=BinGeometry)
    sim: SimConfig = field(default_factory=SimConfig)
    structure: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_shared < 0 or self.n_branch < 0:
            raise ConfigError("trial counts must be non-negative")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")

    def structure_spec(self) -> StructureSpec:
        spec = structure_from_dict(self.structure)
        check_structure(spec)
        return spec

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        g = self.geometry
        return {
            "seed": self.seed,
            "n_shared": self.n_shared,
            "n_branch": self.n_branch,
            "sigma": self.sigma,
            "out_dir": str(self.out_dir),
            "evaluator": dataclasses.asdict(self.evaluator),
            "geometry": {"x_bounds": list(g.x_bounds), "y_bounds": list(g.y_bounds),
                         "nx": g.nx, "ny": g.ny, "npsi": g.npsi},
            "sim": dataclasses.asdict(self.sim),
            "structure": dict(self.structure),
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            geometry = dict(d.pop("geometry", None) or {})
            for key in ("x_bounds", "y_bounds"):
                if key in geometry:
                    geometry[key] = tuple(geometry[key])
            return cls(
                evaluator=EvaluatorConfig.from_dict(d.pop("evaluator", None)),
                geometry=BinGeometry(**geometry),
                sim=SimConfig.from_dict(d.pop("sim", None)),
                structure=dict(d.pop("structure", None) or {}),
                **d,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def default_config_path(name: str = "default.yaml") -> Path:
    return Path(str(resources.files("tensemap") / "data" / name))


def read_yaml(path) -> dict:
    try:
        with Path(path).open() as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path=None) -> ExperimentConfig:
    return ExperimentConfig.from_dict(read_yaml(path or default_config_path()))


def load_param_sets(path) -> list:
    """Parameter sets from a YAML list of triples (or ``{params: [...]}``)."""
    from .repertoire import ParameterSet

    data = yaml.safe_load(Path(path).read_text()) if Path(path).exists() else None
    if data is None:
        raise ConfigError(f"cannot read parameter sets from {path}")
    if isinstance(data, dict):
        data = data.get("params")
    if not isinstance(data, list) or not data:
        raise ConfigError(f"{path}: expected a non-empty list of [f1, f2, f3]")
    try:
        return [ParameterSet.from_iterable(p) for p in data]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
