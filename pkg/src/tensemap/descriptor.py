"""Behavior descriptors from tracked poses, and repeatability analysis."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .angles import wrap_angle
from .repertoire import DEFAULT_GEOMETRY, Behavior, BinGeometry, ParameterSet, fitness

__all__ = ["PoseSample", "wrap_angle", "to_local_behavior", "behavior_from_stream",
           "read_pose_csv", "repeatability_stats", "RepeatabilityReport", "GroupStats"]

POSE_HEADER = ["t_s", "x_mm", "y_mm", "z_mm", "roll_deg", "pitch_deg", "yaw_deg"]


@dataclass(frozen=True)
class PoseSample:
    t: float
    x: float
    y: float
    yaw: float
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"negative timestamp {self.t}")
        if math.isfinite(self.yaw):
            object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def valid(self) -> bool:
        return all(math.isfinite(v) for v in (self.t, self.x, self.y, self.yaw))


def to_local_behavior(initial: PoseSample, final: PoseSample) -> Behavior:
    """Displacement and yaw change expressed in the initial body frame.

    The global displacement is rotated by ``-initial.yaw`` (yaw is
    counter-clockwise positive seen from above).
    """
    if not final.t > initial.t:
        raise ValueError(f"final pose time {final.t} is not after initial time {initial.t}")
    gx = final.x - initial.x
    gy = final.y - initial.y
    a = math.radians(-initial.yaw)
    c, s = math.cos(a), math.sin(a)
    return Behavior(c * gx - s * gy, s * gx + c * gy, wrap_angle(final.yaw - initial.yaw))


def read_pose_csv(path) -> list[PoseSample]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != POSE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(POSE_HEADER)}")
        last_t = -math.inf
        for row in reader:
            vals = {k: float(v) if v.strip() else math.nan for k, v in row.items()}
            if math.isnan(vals["t_s"]):
                continue
            if vals["t_s"] < last_t:
                raise ValueError(f"{path}: timestamps decrease at t={vals['t_s']}")
            last_t = vals["t_s"]
            out.append(PoseSample(vals["t_s"], vals["x_mm"], vals["y_mm"], vals["yaw_deg"],
                                  vals["z_mm"], vals["roll_deg"], vals["pitch_deg"]))
    return out


def behavior_from_stream(samples: Sequence[PoseSample]) -> Behavior:
    """Behavior between the first and last valid samples of a stream."""
    valid = [s for s in samples if s.valid]
    if len(valid) < 2:
        raise ValueError("need at least two valid pose samples")
    return to_local_behavior(valid[0], valid[-1])


# ---------------------------------------------------------------------------
# repeatability

@dataclass(frozen=True)
class GroupStats:
    params: ParameterSet
    duration_s: float
    n: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    noise_to_signal: float


@dataclass
class RepeatabilityReport:
    groups: list[GroupStats]
    suggested_widths: tuple[float, float, float]
    suggested_duration_s: float
    duration_scores: dict[float, float] = field(default_factory=dict)
    widths_by_duration: dict[float, tuple[float, float, float]] = field(default_factory=dict)

    def max_std(self, duration_s: float | None = None) -> tuple[float, float, float]:
        d = self.suggested_duration_s if duration_s is None else duration_s
        stds = np.array([g.std for g in self.groups if g.duration_s == d])
        return tuple(stds.max(axis=0).tolist())

    def to_dict(self) -> dict:
        return {
            "suggested_duration_s": self.suggested_duration_s,
            "suggested_widths": {"dx_mm": self.suggested_widths[0],
                                 "dy_mm": self.suggested_widths[1],
                                 "dpsi_deg": self.suggested_widths[2]},
            "duration_scores": {str(k): v for k, v in self.duration_scores.items()},
            "widths_by_duration": {str(k): list(v) for k, v in self.widths_by_duration.items()},
            "groups": [{"params": list(g.params.as_tuple()), "duration_s": g.duration_s,
                        "n": g.n, "mean": list(g.mean), "std": list(g.std),
                        "noise_to_signal": g.noise_to_signal} for g in self.groups],
        }


def _group_stats(params, duration, behaviors: list[Behavior], geometry) -> GroupStats:
    arr = np.array([b.as_tuple() for b in behaviors], dtype=float)
    mean_xy = arr[:, :2].mean(axis=0)
    std_xy = arr[:, :2].std(axis=0, ddof=1)
    rad = np.radians(arr[:, 2])
    circ_mean = math.degrees(math.atan2(np.sin(rad).mean(), np.cos(rad).mean()))
    resid = wrap_angle(arr[:, 2] - circ_mean)
    std_psi = float(np.std(resid, ddof=1))
    mean = (float(mean_xy[0]), float(mean_xy[1]), float(wrap_angle(circ_mean)))
    std = (float(std_xy[0]), float(std_xy[1]), std_psi)
    noise = max(s / h for s, h in zip(std, geometry.half_ranges))
    signal = fitness(Behavior(*mean), geometry)
    ratio = noise / signal if signal > 0 else (0.0 if noise == 0 else math.inf)
    return GroupStats(params, float(duration), len(behaviors), mean, std, ratio)


def repeatability_stats(trials: Iterable[tuple[ParameterSet, float, Behavior]],
                        geometry: BinGeometry = DEFAULT_GEOMETRY) -> RepeatabilityReport:
    """Per-(parameter set, duration) spread of replicated trials.

    Suggested bin width per axis is twice the largest group standard
    deviation at the suggested duration. The suggested duration minimizes
    the median (over parameter sets) of each group's worst normalized
    standard deviation divided by its normalized mean displacement; ties
    go to the shorter duration.
    """
    grouped: dict[tuple, list[Behavior]] = defaultdict(list)
    for params, duration, behavior in trials:
        grouped[(ParameterSet.from_iterable(params.as_tuple()), float(duration))].append(behavior)
    if not grouped:
        raise ValueError("no trials given")
    short = {k: len(v) for k, v in grouped.items() if len(v) < 2}
    if short:
        raise ValueError(f"need at least 2 replicates per group, got {short}")

    groups = [_group_stats(p, d, bs, geometry) for (p, d), bs in sorted(grouped.items())]
    durations = sorted({g.duration_s for g in groups})
    scores, widths = {}, {}
    for d in durations:
        at_d = [g for g in groups if g.duration_s == d]
        ratios = [g.noise_to_signal for g in at_d]
        scores[d] = float(np.median(ratios))
        stds = np.array([g.std for g in at_d])
        widths[d] = tuple(float(2.0 * s) for s in stds.max(axis=0))
    best = min(durations, key=lambda d: (scores[d], d))
    return RepeatabilityReport(groups, widths[best], best, scores, widths)
