"""Batched Monte-Carlo drivers used by the acceptance suite and threshold scripts.

Every run here stacks independent seeds along a leading array axis so the
filter and the simulator handle all of them in one vectorized call per frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .baseline import batch_estimate, per_frame_track
from .belief import SystemConfig
from .engine import FilterParams, advance
from .scenes import RectDance, SceneSpec, is_static, scene_eval
from .simulator import sample_toas


@dataclass
class PixelRun:
    """Single-pixel traces, arrays of shape ``(frames, seeds)``."""

    truth: np.ndarray  # (frames,)
    mean: np.ndarray
    variance: np.ndarray
    wbar: np.ndarray
    toa: np.ndarray

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.mean - self.truth[:, None])


def run_single_pixel(spec: SceneSpec, sys: SystemConfig, params: FilterParams, seeds: Sequence[int]) -> PixelRun:
    """Filter a 1x1 scene for every seed. ``wbar`` is recorded after each update."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    s = seeds.size
    n = spec.frames
    mean = np.full((s, 1, 1), params.init_mean)
    var = np.full((s, 1, 1), params.init_variance)
    wbar = np.full((s, 1, 1), params.init_weight)
    out = {k: np.empty((n, s)) for k in ("mean", "variance", "wbar", "toa")}
    truth = np.empty(n)
    for i in range(n):
        gt = scene_eval(spec, i)
        truth[i] = gt.range_map[0, 0]
        toa = sample_toas(gt.range_map, gt.signal_frac_map, gt.detect_prob_map, sys, seeds, i + 1)
        mean, var, wbar, _ = advance(mean, var, wbar, toa, sys, params)
        out["mean"][i] = mean[:, 0, 0]
        out["variance"][i] = var[:, 0, 0]
        out["wbar"][i] = wbar[:, 0, 0]
        out["toa"][i] = toa[:, 0, 0]
    return PixelRun(truth, **out)


def baseline_tracks(run: PixelRun, sys: SystemConfig, batch_size: int) -> np.ndarray:
    """Per-frame cross-correlation estimates for every seed of a single-pixel run."""
    n, s = run.toa.shape
    irf = sys.irf
    tracks = np.empty((n, s))
    for j in range(s):
        est = batch_estimate(run.toa[:, j], batch_size, sys.rep_period, irf)
        tracks[:, j] = per_frame_track(est, batch_size, n)
    return tracks


@dataclass
class GridRun:
    rmse: np.ndarray  # (frames, seeds)
    mean: np.ndarray  # final (seeds, H, W)
    variance: np.ndarray
    wbar: np.ndarray


def run_grid(
    spec: SceneSpec,
    sys: SystemConfig,
    params: FilterParams,
    seeds: Sequence[int],
    frames: Optional[int] = None,
    region: Optional[Callable[[int], np.ndarray]] = None,
) -> GridRun:
    """Filter an image scene for every seed, recording the per-frame RMSE.

    ``region(n)`` optionally restricts the RMSE of frame ``n`` to a boolean
    pixel mask (frames where the mask is empty give NaN).
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    n = spec.frames if frames is None else frames
    h, w = spec.dims
    shape = (seeds.size, h, w)
    mean = np.full(shape, params.init_mean)
    var = np.full(shape, params.init_variance)
    wbar = np.full(shape, params.init_weight)
    rmse = np.empty((n, seeds.size))
    fixed = scene_eval(spec, 0) if is_static(spec) else None
    for i in range(n):
        gt = fixed if fixed is not None else scene_eval(spec, i)
        toa = sample_toas(gt.range_map, gt.signal_frac_map, gt.detect_prob_map, sys, seeds, i + 1)
        mean, var, wbar, _ = advance(mean, var, wbar, toa, sys, params)
        err2 = (mean - gt.range_map) ** 2
        if region is None:
            rmse[i] = np.sqrt(err2.mean(axis=(1, 2)))
        else:
            m = region(i)
            rmse[i] = np.sqrt(err2[:, m].mean(axis=1)) if m.any() else np.nan
    return GridRun(rmse, mean, var, wbar)


@dataclass(frozen=True)
class OcclusionEvents:
    """Key frames of an object's occlusion in a :class:`RectDance` scene."""

    first_covered: int  # part of the object is hidden for the first time
    hidden: int  # first frame with the object completely hidden
    reemerged: int  # first frame after that with part of it visible again
    uncovered: int  # first frame after that with all of it visible


def occlusion_events(spec: RectDance, name: str = "obj1") -> OcclusionEvents:
    marks: list[int] = []
    tests = (
        lambda foot, vis: (vis != foot).any(),
        lambda foot, vis: not vis.any(),
        lambda foot, vis: vis.any(),
        lambda foot, vis: (vis == foot).all(),
    )
    for n in range(spec.phase_bounds[0]):
        foot, vis = spec.masks(n)[name]
        if tests[len(marks)](foot, vis):
            marks.append(n)
            if len(marks) == len(tests):
                return OcclusionEvents(*marks)
    raise ValueError(f"{name} is not fully occluded and uncovered again during the first phase")
