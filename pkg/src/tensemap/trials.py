"""Trial provenance records and the append-only trial log."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable

from .repertoire import Behavior, BinIndex, ParameterSet

PHASES = ("shared_random", "mutation", "random_control")

TRIAL_LOG_HEADER = ["trial_id", "phase", "f1", "f2", "f3", "dx_mm", "dy_mm", "dpsi_deg",
                    "bin_x", "bin_y", "bin_psi", "fitness", "outcome", "timestamp_iso8601"]


class Outcome(str, Enum):
    EVALUATED = "Evaluated"
    SKIPPED_STATIONARY = "SkippedStationary"
    ERROR = "Error"


class TrialLogError(ValueError):
    """A trial log is malformed or truncated."""


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    phase: str
    params: ParameterSet
    behavior: Behavior | None
    outcome: Outcome
    bin: BinIndex | None = None
    fitness: float | None = None
    timestamp: str = ""
    message: str = ""

    def with_bin(self, index: BinIndex, fitness: float) -> "TrialRecord":
        return dataclasses.replace(self, bin=BinIndex(*index), fitness=fitness)


def _f3(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def record_to_row(rec: TrialRecord) -> list[str]:
    b = rec.behavior
    beh = ["", "", ""] if b is None else [_f3(b.dx), _f3(b.dy), _f3(b.dpsi)]
    bins = ["", "", ""] if rec.bin is None else [str(i) for i in rec.bin]
    fit = "" if rec.fitness is None else _f3(rec.fitness)
    return [str(rec.trial_id), rec.phase, *map(str, rec.params.as_tuple()), *beh, *bins, fit,
            rec.outcome.value, rec.timestamp]


def row_to_record(row: dict) -> TrialRecord:
    try:
        outcome = Outcome(row["outcome"])
        params = ParameterSet(int(row["f1"]), int(row["f2"]), int(row["f3"]))
        behavior = None
        if row["dx_mm"] != "":
            behavior = Behavior(float(row["dx_mm"]), float(row["dy_mm"]), float(row["dpsi_deg"]))
        index = None
        if row["bin_x"] != "":
            index = BinIndex(int(row["bin_x"]), int(row["bin_y"]), int(row["bin_psi"]))
        fit = float(row["fitness"]) if row["fitness"] != "" else None
        rec = TrialRecord(int(row["trial_id"]), row["phase"], params, behavior, outcome,
                          index, fit, row["timestamp_iso8601"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TrialLogError(f"bad trial log row {row!r}: {exc}") from exc
    if outcome is not Outcome.ERROR and behavior is None:
        raise TrialLogError(f"trial {rec.trial_id}: {outcome.value} row without a behavior")
    return rec


class TrialLog:
    """Append-only CSV writer; each record is flushed as soon as it is written."""

    def __init__(self, path):
        self.path = Path(path)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = self.path.open("a", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if new:
            self._writer.writerow(TRIAL_LOG_HEADER)
            self._fh.flush()

    def append(self, rec: TrialRecord) -> None:
        self._writer.writerow(record_to_row(rec))
        self._fh.flush()

    __call__ = append

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trial_log(path, records: Iterable[TrialRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_LOG_HEADER)
        for rec in records:
            w.writerow(record_to_row(rec))


def read_trial_log(path) -> list[TrialRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        text = fh.read()
    if text and not text.endswith("\n"):
        # a crash mid-write leaves a partial last line; drop it so the run can resume
        text = text[: text.rfind("\n") + 1]
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames != TRIAL_LOG_HEADER:
        raise TrialLogError(f"{path}: unexpected trial log header {reader.fieldnames}")
    return [row_to_record(row) for row in reader]
