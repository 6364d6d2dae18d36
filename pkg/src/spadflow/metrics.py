"""Reconstruction quality metrics and per-frame metric logs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Optional, Sequence, Union

import numpy as np

from .engine import BeliefGrid
from .errors import InvalidInputError

CSV_HEADER = ("frame", "rmse", "mean_ci_width", "weight_mae", "step_time_s")
WARMUP_FRAMES = 10


@dataclass(frozen=True)
class FrameMetrics:
    frame_index: int
    rmse: float
    mean_ci_width: float
    weight_mae: float
    step_time: float


@dataclass(frozen=True)
class ConvergenceSummary:
    first_below: Optional[int]  # position in the sequence; None: threshold never reached
    terminal_rmse: float
    mean_step_time: float

    @property
    def reached(self) -> bool:
        return self.first_below is not None


def rmse_frame(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise InvalidInputError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    if estimate.size == 0:
        raise InvalidInputError("empty maps")
    d = estimate - truth
    return float(np.sqrt(np.mean(d * d)))


def ci_width_map(grid: Union[BeliefGrid, np.ndarray]) -> np.ndarray:
    """Width of the +-3 standard deviation interval of every pixel."""
    var = grid.variance if isinstance(grid, BeliefGrid) else np.asarray(grid, dtype=np.float64)
    return 6.0 * np.sqrt(var)


def weight_mae(wbar, w_true) -> float:
    wbar = np.asarray(wbar, dtype=np.float64)
    w_true = np.asarray(w_true, dtype=np.float64)
    if wbar.shape != w_true.shape:
        raise InvalidInputError(f"shape mismatch {wbar.shape} vs {w_true.shape}")
    return float(np.mean(np.abs(wbar - w_true)))


def frame_metrics(grid: BeliefGrid, truth_range, truth_w, step_time: float) -> FrameMetrics:
    return FrameMetrics(
        grid.frame_index,
        rmse_frame(grid.mean, truth_range),
        float(np.mean(ci_width_map(grid))),
        weight_mae(grid.weights, truth_w),
        step_time,
    )


def first_below(values: Sequence[float], threshold: float) -> Optional[int]:
    """Index of the first value strictly below ``threshold``, None if there is none."""
    hits = np.flatnonzero(np.asarray(values, dtype=np.float64) < threshold)
    return int(hits[0]) if hits.size else None


def first_settled(values: Sequence[float], bound: float) -> int:
    """First index from which every later value stays below ``bound``.

    Returns ``len(values)`` when the last value is not below ``bound``.
    """
    above = np.flatnonzero(~(np.asarray(values, dtype=np.float64) < bound))
    return int(above[-1]) + 1 if above.size else 0


def mean_step_time(times: Sequence[float], warmup: int = WARMUP_FRAMES) -> float:
    t = np.asarray(times, dtype=np.float64)
    if t.size > warmup:
        t = t[warmup:]
    return float(t.mean()) if t.size else math.nan


def convergence_summary(metrics: Sequence[FrameMetrics], threshold: float) -> ConvergenceSummary:
    if not metrics:
        raise InvalidInputError("no metrics to summarize")
    rmse = [m.rmse for m in metrics]
    hit = first_below(rmse, threshold)
    tail = max(1, len(rmse) // 10)
    return ConvergenceSummary(
        hit,
        float(np.mean(rmse[-tail:])),
        mean_step_time([m.step_time for m in metrics]),
    )


class MetricsWriter:
    """Streams one CSV row per frame so long runs never hold the whole log."""

    def __init__(self, fh: IO[str]):
        self._fh = fh
        self._w = csv.writer(fh)
        self._w.writerow(CSV_HEADER)

    def write(self, m: FrameMetrics) -> None:
        self._w.writerow([m.frame_index, repr(m.rmse), repr(m.mean_ci_width), repr(m.weight_mae), repr(m.step_time)])


def read_metrics_csv(path) -> list[FrameMetrics]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if tuple(header or ()) != CSV_HEADER:
            raise InvalidInputError(f"{path}: unexpected metrics header {header}")
        return [FrameMetrics(int(row[0]), *(float(x) for x in row[1:])) for row in r if row]


def boundary_mask(range_map, jump: float) -> np.ndarray:
    """Pixels with a 4-neighbour whose true range differs by more than ``jump``."""
    d = np.asarray(range_map, dtype=np.float64)
    out = np.zeros(d.shape, dtype=bool)
    dv = np.abs(np.diff(d, axis=0)) > jump
    dh = np.abs(np.diff(d, axis=1)) > jump
    out[:-1] |= dv
    out[1:] |= dv
    out[:, :-1] |= dh
    out[:, 1:] |= dh
    return out
