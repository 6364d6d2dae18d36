"""Batch cross-correlation range estimator used as a comparison point.

ToAs of ``N0`` consecutive frames are histogrammed and the range is the
circular lag maximizing the correlation between that histogram and the
impulse response sampled at the bin centres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .belief import ImpulseResponse
from .errors import InvalidInputError

# correlation values closer than this (relative to the peak) count as ties
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ToAHistogram:
    bin_width: float
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def n_bins(rep_period: float, bin_width: float) -> int:
    return int(math.ceil(rep_period / bin_width - 1e-9))


def build_histogram(toas: Iterable[float], rep_period: float, bin_width: float = 1.0) -> ToAHistogram:
    toas = np.asarray(list(toas) if not isinstance(toas, np.ndarray) else toas, dtype=np.float64)
    if toas.size and not np.all((toas >= 0) & (toas < rep_period)):
        raise InvalidInputError(f"ToAs must lie in [0, {rep_period})")
    nb = n_bins(rep_period, bin_width)
    idx = np.minimum((toas // bin_width).astype(np.int64), nb - 1)
    return ToAHistogram(bin_width, np.bincount(idx, minlength=nb).astype(np.int64))


def irf_template(n: int, bin_width: float, irf: ImpulseResponse, period: Optional[float] = None) -> np.ndarray:
    """Impulse response for zero delay at bin centres, wrapped onto the period."""
    period = n * bin_width if period is None else period
    t = (np.arange(n) + 0.5) * bin_width
    t = (t + period / 2) % period - period / 2
    return np.exp(-0.5 * t * t / irf.variance) / math.sqrt(2 * math.pi * irf.variance)


def xcorr_depth(hist: ToAHistogram, irf: ImpulseResponse) -> Optional[float]:
    """Range estimate, or None when the histogram is empty."""
    counts = hist.counts
    if counts.sum() <= 0:
        return None
    n = counts.size
    tmpl = irf_template(n, hist.bin_width, irf)
    nz = np.flatnonzero(counts)
    lags = np.arange(n)
    # corr[lag] = sum_i counts[i] * tmpl[(i - lag) mod n]
    corr = np.zeros(n)
    for i in nz:
        corr += counts[i] * tmpl[(i - lags) % n]
    peak = corr.max()
    best = int(np.flatnonzero(corr >= peak * (1.0 - TIE_RTOL))[0])
    return best * hist.bin_width


@dataclass(frozen=True)
class BatchEstimate:
    batch: int
    estimate: Optional[float]
    carried: bool


def batch_estimate(
    stream: Sequence[Optional[float]],
    batch_size: int,
    rep_period: float,
    irf: ImpulseResponse,
    bin_width: float = 1.0,
) -> list[BatchEstimate]:
    """Estimates for consecutive non-overlapping batches of one pixel's frames.

    ``stream`` holds one entry per frame: the ToA, or None / NaN when nothing
    was detected. Empty batches repeat the previous estimate (None before the
    first non-empty batch).
    """
    if batch_size < 1:
        raise InvalidInputError("batch size must be >= 1")
    vals = np.array([np.nan if t is None else t for t in stream], dtype=np.float64)
    out: list[BatchEstimate] = []
    prev: Optional[float] = None
    for b, start in enumerate(range(0, vals.size, batch_size)):
        chunk = vals[start : start + batch_size]
        chunk = chunk[~np.isnan(chunk)]
        est = xcorr_depth(build_histogram(chunk, rep_period, bin_width), irf) if chunk.size else None
        if est is None:
            out.append(BatchEstimate(b, prev, True))
        else:
            prev = est
            out.append(BatchEstimate(b, est, False))
    return out


def per_frame_track(estimates: Sequence[BatchEstimate], batch_size: int, frames: int) -> np.ndarray:
    """Spread batch estimates over the frames of each batch (NaN where no estimate exists)."""
    track = np.full(frames, np.nan)
    for e in estimates:
        if e.estimate is not None:
            track[e.batch * batch_size : (e.batch + 1) * batch_size] = e.estimate
    return track
