"""Step-width detection from single-parameter latency sweeps.

Accelerators that process fixed-size tiles show staircase latency curves:
time is flat while a parameter stays within the current tile count and
jumps when another tile is needed.  Detection works on one sweep at a
time: decide whether the curve is linear (no steps), otherwise locate the
jumps as peaks of the consecutive differences and read the step width off
the peak spacing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import DegenerateInput, InvalidParam, NonUniformSteps, NoPeaks


@dataclass(frozen=True)
class DetectorConfig:
    """Detection thresholds; all are engineering knobs exposed as CLI flags.

    threshold_linear: relative RMSE below which a sweep counts as linear.
    min_peak_prominence: required peak prominence as a fraction of the
    largest consecutive difference.
    uniformity_tolerance: allowed spread of peak spacings as a fraction of
    their mode before the pattern is rejected as non-uniform.
    """

    threshold_linear: float = 0.05
    min_peak_prominence: float = 0.5
    uniformity_tolerance: float = 0.5

    def __post_init__(self) -> None:
        if self.threshold_linear <= 0:
            raise InvalidParam("threshold_linear", self.threshold_linear, "must be positive")
        if not (0 < self.min_peak_prominence <= 1):
            raise InvalidParam(
                "min_peak_prominence", self.min_peak_prominence, "must be in (0, 1]"
            )
        if self.uniformity_tolerance < 0:
            raise InvalidParam(
                "uniformity_tolerance", self.uniformity_tolerance, "must be >= 0"
            )


StepWidthMap = Dict[str, int]


def test_linear_behavior(
    xs: Sequence[int], ys: Sequence[float], cfg: DetectorConfig = DetectorConfig()
) -> bool:
    """True when the sweep is explained by the straight line through its ends.

    The candidate line runs from (min x, min y) with slope
    (max y - min y) / (max x - min x); the sweep counts as linear when the
    RMSE against that line, relative to the mean level, stays below
    cfg.threshold_linear.  A constant sweep is linear with slope zero.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise DegenerateInput(f"{x.size} x values but {y.size} y values")
    if x.size < 2:
        raise DegenerateInput("need at least two sweep points")
    x_min, x_max = float(x.min()), float(x.max())
    if x_min == x_max:
        raise DegenerateInput("all swept values are equal")
    mean_y = float(y.mean())
    if mean_y <= 0:
        raise DegenerateInput("sweep level must be positive")
    y_min, y_max = float(y.min()), float(y.max())
    slope_avg = (y_max - y_min) / (x_max - x_min)
    estimate = slope_avg * (x - x_min) + y_min
    rmse = float(np.sqrt(np.mean((y - estimate) ** 2)))
    return rmse / mean_y < cfg.threshold_linear


def execution_time_deltas(ys: Sequence[float]) -> List[float]:
    """Consecutive differences of the sweep values."""
    y = np.asarray(ys, dtype=float)
    if y.size < 2:
        raise DegenerateInput("need at least two sweep points")
    return [float(d) for d in np.diff(y)]


def find_step_width(
    deltas: Sequence[float],
    xs: Sequence[int],
    cfg: DetectorConfig = DetectorConfig(),
) -> int:
    """Step width in x units from the spacing of delta peaks.

    deltas[i] is the jump between xs[i] and xs[i+1]; a peak marks the end
    of a step, so peak positions are read at xs[i].  The width is the mode
    of consecutive peak spacings (median on count ties).  Raises NoPeaks
    for signals without two prominent peaks and NonUniformSteps when the
    spacing spread exceeds cfg.uniformity_tolerance times the mode.
    """
    d = np.asarray(deltas, dtype=float)
    x = np.asarray(xs)
    if d.size < 2:
        raise DegenerateInput("need at least two deltas")
    if x.size != d.size + 1:
        raise DegenerateInput(f"{d.size} deltas need {d.size + 1} x values, got {x.size}")
    top = float(d.max())
    if top <= 0:
        raise NoPeaks("no positive jumps in the sweep")
    peaks, _ = find_peaks(d, prominence=cfg.min_peak_prominence * top)
    if peaks.size < 2:
        raise NoPeaks(f"found {peaks.size} prominent peak(s), need at least 2")
    positions = x[peaks]
    distances = np.diff(positions).astype(int)
    values, counts = np.unique(distances, return_counts=True)
    best = counts.max()
    modes = values[counts == best]
    if modes.size == 1:
        width = int(modes[0])
    else:
        width = int(round(float(np.median(distances))))
    spread = int(distances.max() - distances.min())
    if spread > cfg.uniformity_tolerance * width:
        raise NonUniformSteps(
            f"peak spacings {sorted(set(distances.tolist()))} spread {spread} "
            f"exceeds tolerance around {width}"
        )
    if width < 1:
        raise NoPeaks("degenerate peak spacing")
    return width


def determine_step_widths(
    sweeps: Mapping[str, "SweepResult"],  # noqa: F821  (sweep imports this module)
    cfg: DetectorConfig = DetectorConfig(),
) -> StepWidthMap:
    """Per-parameter step widths for a set of single-parameter sweeps.

    Linear sweeps get width 1; stepped sweeps get the detected width.
    Detector errors are re-raised with the parameter name attached.
    """
    widths: StepWidthMap = {}
    for param, result in sweeps.items():
        xs, ys = result.xs, result.ys
        try:
            if test_linear_behavior(xs, ys, cfg):
                widths[param] = 1
            else:
                widths[param] = find_step_width(execution_time_deltas(ys), xs, cfg)
        except (DegenerateInput, NoPeaks, NonUniformSteps) as exc:
            raise type(exc)(f"parameter {param!r}: {exc}") from exc
    return widths
