"""MAP-Elites over the three-motor parameter space.

The archive is a uniform 3-axis grid over (dx, dy, dpsi). Each occupied
cell keeps the single highest-fitness behavior offered to it; ties keep
the incumbent.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, NamedTuple

import numpy as np

from .angles import wrap_angle

PARAM_MIN = 0
PARAM_MAX = 255
DEFAULT_SIGMA = 16.0


class EmptyArchiveError(RuntimeError):
    """Raised when an elite is requested from an archive with no occupants."""


@dataclass(frozen=True, order=True)
class ParameterSet:
    f1: int
    f2: int
    f3: int

    def __post_init__(self):
        for name in ("f1", "f2", "f3"):
            value = getattr(self, name)
            if isinstance(value, (bool, np.bool_)) or int(value) != value:
                raise ValueError(f"{name} must be an integer, got {value!r}")
            value = int(value)
            if not PARAM_MIN <= value <= PARAM_MAX:
                raise ValueError(f"{name}={value} outside [{PARAM_MIN}, {PARAM_MAX}]")
            object.__setattr__(self, name, value)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.f1, self.f2, self.f3)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=int)

    @property
    def total(self) -> int:
        return self.f1 + self.f2 + self.f3

    def cycled(self) -> "ParameterSet":
        """Cyclic motor permutation (f1, f2, f3) -> (f2, f3, f1)."""
        return ParameterSet(self.f2, self.f3, self.f1)

    @classmethod
    def from_iterable(cls, values: Iterable[int]) -> "ParameterSet":
        f1, f2, f3 = values
        return cls(f1, f2, f3)


@dataclass(frozen=True)
class Behavior:
    """Local-frame displacement (mm) and yaw change (degrees) over one trial.

    ``dpsi`` is wrapped into [-180, 180) on construction.
    """

    dx: float
    dy: float
    dpsi: float

    def __post_init__(self):
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))
        object.__setattr__(self, "dpsi", float(wrap_angle(float(self.dpsi))))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dpsi)

    def in_range(self, geometry: "BinGeometry | None" = None) -> bool:
        g = geometry or BinGeometry()
        return (g.x_bounds[0] <= self.dx <= g.x_bounds[1]
                and g.y_bounds[0] <= self.dy <= g.y_bounds[1])

    def quantized(self, decimals: int = 3) -> "Behavior":
        return Behavior(round(self.dx, decimals), round(self.dy, decimals),
                        round(self.dpsi, decimals))


STATIONARY = Behavior(0.0, 0.0, 0.0)


class BinIndex(NamedTuple):
    ix: int
    iy: int
    ipsi: int


class Clamped(NamedTuple):
    x: bool
    y: bool
    psi: bool

    @property
    def any(self) -> bool:
        return self.x or self.y or self.psi


@dataclass(frozen=True)
class BinGeometry:
    x_bounds: tuple[float, float] = (-360.0, 360.0)
    y_bounds: tuple[float, float] = (-360.0, 360.0)
    psi_bounds: tuple[float, float] = (-180.0, 180.0)
    nx: int = 12
    ny: int = 12
    npsi: int = 6

    def __post_init__(self):
        if tuple(self.psi_bounds) != (-180.0, 180.0):
            raise ValueError("psi_bounds are fixed at (-180, 180)")
        for lo, hi in (self.x_bounds, self.y_bounds):
            if not hi > lo:
                raise ValueError(f"empty axis bounds ({lo}, {hi})")
        if min(self.nx, self.ny, self.npsi) < 1:
            raise ValueError("bin counts must be positive")
        object.__setattr__(self, "x_bounds", tuple(map(float, self.x_bounds)))
        object.__setattr__(self, "y_bounds", tuple(map(float, self.y_bounds)))
        object.__setattr__(self, "psi_bounds", tuple(map(float, self.psi_bounds)))

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return (self.x_bounds, self.y_bounds, self.psi_bounds)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.npsi)

    @property
    def widths(self) -> tuple[float, float, float]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.bounds, self.counts))

    @property
    def half_ranges(self) -> tuple[float, float, float]:
        return tuple((hi - lo) / 2.0 for lo, hi in self.bounds)

    @property
    def n_bins(self) -> int:
        return self.nx * self.ny * self.npsi

    def interval(self, index: BinIndex) -> tuple[tuple[float, float], ...]:
        """Nominal half-open interval ``[lo, hi)`` of each axis for ``index``."""
        out = []
        for i, (lo, _), w in zip(index, self.bounds, self.widths):
            out.append((lo + i * w, lo + (i + 1) * w))
        return tuple(out)

    def all_indices(self) -> Iterator[BinIndex]:
        for ix in range(self.nx):
            for iy in range(self.ny):
                for ipsi in range(self.npsi):
                    yield BinIndex(ix, iy, ipsi)


DEFAULT_GEOMETRY = BinGeometry()


def _axis_bin(value: float, lo: float, hi: float, n: int) -> tuple[int, bool]:
    if value < lo:
        return 0, True
    if value >= hi:
        return n - 1, True
    w = (hi - lo) / n
    i = min(int(math.floor((value - lo) / w)), n - 1)
    # rounding can put values a hair outside [lo + i*w, lo + (i+1)*w); snap to
    # the cell whose nominal interval actually contains the value
    if i > 0 and value < lo + i * w:
        i -= 1
    elif i < n - 1 and value >= lo + (i + 1) * w:
        i += 1
    return i, False


def bin_index(b: Behavior, geometry: BinGeometry = DEFAULT_GEOMETRY) -> tuple[BinIndex, Clamped]:
    """Map a behavior to its grid cell.

    Values outside an axis range land in the nearest boundary cell and
    the corresponding entry of the returned :class:`Clamped` flag is set.
    """
    values = (b.dx, b.dy, wrap_angle(b.dpsi))
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite behavior {b}")
    idx, flags = [], []
    for v, (lo, hi), n in zip(values, geometry.bounds, geometry.counts):
        i, c = _axis_bin(v, lo, hi, n)
        idx.append(i)
        flags.append(c)
    return BinIndex(*idx), Clamped(*flags)


def fitness(b: Behavior, geometry: BinGeometry = DEFAULT_GEOMETRY) -> float:
    """Sum of absolute behavior components, each scaled by its axis half-range."""
    hx, hy, hpsi = geometry.half_ranges
    return abs(b.dx) / hx + abs(b.dy) / hy + abs(b.dpsi) / hpsi


def sample_random(rng: np.random.Generator) -> ParameterSet:
    return ParameterSet.from_iterable(rng.integers(PARAM_MIN, PARAM_MAX + 1, size=3))


def mutate(p: ParameterSet, rng: np.random.Generator, sigma: float = DEFAULT_SIGMA) -> ParameterSet:
    """Per-gene rounded Gaussian step, clamped to the byte range."""
    step = np.rint(rng.normal(0.0, sigma, size=3))
    child = np.clip(p.as_array() + step, PARAM_MIN, PARAM_MAX).astype(int)
    return ParameterSet.from_iterable(child)


@dataclass(frozen=True)
class Elite:
    params: ParameterSet
    behavior: Behavior
    fitness: float
    trial_id: int
    phase: str = ""


class OfferOutcome(str, Enum):
    NEW_BIN = "NewBin"
    REPLACED = "Replaced"
    REJECTED = "Rejected"


class OfferResult(NamedTuple):
    outcome: OfferOutcome
    index: BinIndex
    fitness: float
    clamped: Clamped


ARCHIVE_HEADER = ["bin_x", "bin_y", "bin_psi", "f1", "f2", "f3", "dx_mm", "dy_mm",
                  "dpsi_deg", "fitness", "trial_id", "phase"]


def _fmt(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


class Archive:
    """Grid of elites keyed by :class:`BinIndex`."""

    def __init__(self, geometry: BinGeometry = DEFAULT_GEOMETRY):
        self.geometry = geometry
        self._bins: dict[BinIndex, Elite] = {}

    def __len__(self) -> int:
        return len(self._bins)

    def __contains__(self, index) -> bool:
        return index in self._bins

    def __getitem__(self, index: BinIndex) -> Elite:
        return self._bins[index]

    def __iter__(self) -> Iterator[BinIndex]:
        return iter(sorted(self._bins))

    def get(self, index: BinIndex, default=None):
        return self._bins.get(index, default)

    def items(self) -> list[tuple[BinIndex, Elite]]:
        return sorted(self._bins.items())

    def elites(self) -> list[Elite]:
        return [e for _, e in self.items()]

    @property
    def coverage(self) -> float:
        return len(self) / self.geometry.n_bins

    def copy(self) -> "Archive":
        other = type(self)(self.geometry)
        other._bins = dict(self._bins)
        return other

    def offer(self, params: ParameterSet, behavior: Behavior, trial_id: int,
              phase: str = "") -> OfferResult:
        index, clamped = bin_index(behavior, self.geometry)
        f = fitness(behavior, self.geometry)
        incumbent = self._bins.get(index)
        if incumbent is None:
            outcome = OfferOutcome.NEW_BIN
        elif incumbent.fitness < f:
            outcome = OfferOutcome.REPLACED
        else:
            return OfferResult(OfferOutcome.REJECTED, index, f, clamped)
        self._bins[index] = Elite(params, behavior, f, trial_id, phase)
        return OfferResult(outcome, index, f, clamped)

    def select(self, rng: np.random.Generator) -> Elite:
        if not self._bins:
            raise EmptyArchiveError(
                "cannot select an elite from an empty archive; run the random phase first")
        keys = sorted(self._bins)
        return self._bins[keys[int(rng.integers(len(keys)))]]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ARCHIVE_HEADER)
            for index, e in self.items():
                w.writerow([*index, *e.params.as_tuple(), _fmt(e.behavior.dx),
                            _fmt(e.behavior.dy), _fmt(e.behavior.dpsi), _fmt(e.fitness),
                            e.trial_id, e.phase])

    @classmethod
    def from_csv(cls, path, geometry: BinGeometry = DEFAULT_GEOMETRY) -> "Archive":
        archive = cls(geometry)
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ARCHIVE_HEADER:
                raise ValueError(f"{path}: unexpected archive header {reader.fieldnames}")
            for row in reader:
                b = Behavior(float(row["dx_mm"]), float(row["dy_mm"]), float(row["dpsi_deg"]))
                p = ParameterSet(int(row["f1"]), int(row["f2"]), int(row["f3"]))
                index = BinIndex(int(row["bin_x"]), int(row["bin_y"]), int(row["bin_psi"]))
                if bin_index(b, geometry)[0] != index:
                    raise ValueError(f"{path}: elite {row} does not belong to bin {index}")
                archive._bins[index] = Elite(p, b, fitness(b, geometry), int(row["trial_id"]),
                                             row["phase"])
        return archive


def select_elite(archive: Archive, rng: np.random.Generator) -> Elite:
    return archive.select(rng)


def offer(archive: Archive, params: ParameterSet, behavior: Behavior, trial_id: int,
          phase: str = "") -> OfferResult:
    return archive.offer(params, behavior, trial_id, phase)


# ---------------------------------------------------------------------------
# search loop

@dataclass
class SearchConfig:
    n_random: int = 100
    n_mutation: int = 400
    sigma: float = DEFAULT_SIGMA
    seed: int = 0
    random_phase: str = "shared_random"
    mutation_phase: str = "mutation"
    random_stream: int = 0
    first_trial_id: int = 0


def trial_rng(seed: int, stream: int, trial_id: int) -> np.random.Generator:
    """Independent generator per trial, so a resumed run draws the same numbers."""
    return np.random.default_rng([int(seed), int(stream), int(trial_id)])


STREAM_SHARED, STREAM_CONTROL, STREAM_MUTATION = 0, 1, 2


class EvaluationError(RuntimeError):
    """The evaluator reported a failure; completed trials have been persisted."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


def run_map_elites(cfg: SearchConfig, evaluator: Callable, archive: Archive | None = None,
                   log: list | None = None, on_trial: Callable | None = None):
    """Two-phase MAP-Elites.

    ``evaluator(params, trial_id, phase)`` must return a
    :class:`~tensemap.trials.TrialRecord`. Records already present in
    ``log`` are treated as completed (resume): they are replayed into the
    archive only if ``archive`` is None, and the loop continues after them.
    ``on_trial`` is called with every new record, before any error is raised.

    Returns ``(archive, log)``.
    """
    from .trials import Outcome

    log = [] if log is None else log
    if archive is None:
        archive = Archive()
        for rec in log:
            if rec.outcome is not Outcome.ERROR:
                archive.offer(rec.params, rec.behavior, rec.trial_id, rec.phase)
    done = {rec.trial_id for rec in log if rec.outcome is not Outcome.ERROR}
    log[:] = [rec for rec in log if rec.outcome is not Outcome.ERROR]

    def _evaluate(params, trial_id, phase):
        rec = evaluator(params, trial_id, phase)
        if rec.outcome is not Outcome.ERROR:
            res = archive.offer(rec.params, rec.behavior, rec.trial_id, phase)
            rec = rec.with_bin(res.index, res.fitness)
        log.append(rec)
        if on_trial is not None:
            on_trial(rec)
        if rec.outcome is Outcome.ERROR:
            raise EvaluationError(f"trial {trial_id} failed: {rec.message}", rec)

    tid = cfg.first_trial_id
    for _ in range(cfg.n_random):
        if tid not in done:
            _evaluate(sample_random(trial_rng(cfg.seed, cfg.random_stream, tid)), tid,
                      cfg.random_phase)
        tid += 1
    for _ in range(cfg.n_mutation):
        if tid not in done:
            rng = trial_rng(cfg.seed, STREAM_MUTATION, tid)
            parent = archive.select(rng)
            _evaluate(mutate(parent.params, rng, cfg.sigma), tid, cfg.mutation_phase)
        tid += 1
    return archive, log


def replay(records: Iterable, geometry: BinGeometry = DEFAULT_GEOMETRY,
           archive: Archive | None = None) -> Archive:
    """Rebuild an archive by offering logged trials in order."""
    from .trials import Outcome

    archive = Archive(geometry) if archive is None else archive
    for rec in records:
        if rec.outcome is not Outcome.ERROR:
            archive.offer(rec.params, rec.behavior, rec.trial_id, rec.phase)
    return archive
