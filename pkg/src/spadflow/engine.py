"""Online per-pixel range filter driven by individual photon detections.

Each frame runs, for every pixel: a spatiotemporal prediction that mixes the
previous Gaussian beliefs of the pixel and its neighbours (each diffused by a
random walk), an exact update of that mixture by the frame's detection (if
any), and a moment-matching projection back onto a single Gaussian. The
per-pixel signal fractions are then tracked by exponential smoothing of the
posterior signal probability.

Two paths are provided:

* ``predict_prior`` / ``update_pixel`` work on :class:`MixtureBelief` objects
  for one pixel. They are slow and exist as a reference.
* ``advance`` / ``step_frame`` run the same arithmetic on whole arrays. Arrays
  may carry leading batch axes (independent images stacked on top of each
  other); neighbourhoods only ever span the last two axes.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .belief import (
    MIN_POSTERIOR_MASS,
    GaussianBelief,
    MixtureBelief,
    MixtureComponent,
    SystemConfig,
    normalize_mixture,
    signal_component_update,
)
from .errors import DegenerateBeliefError, DegeneratePosteriorError, InvalidInputError

NEIGHBORHOODS = ("cross5", "self")
# self first, then up, down, left, right
_CROSS_OFFSETS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
_SQRT_2PI = math.sqrt(2.0 * math.pi)

PixelIndex = Union[int, tuple[int, int]]


@dataclass(frozen=True)
class FilterParams:
    """Tuning of the filter.

    Defaults match a repetition period of 1500; use :meth:`for_system` to derive
    the period-dependent defaults (initial belief, edge component variance)
    for another system.
    """

    rw_variance: float = 100.0
    self_prob: float = 0.99
    attenuation: float = 0.01
    neighborhood: str = "cross5"
    smooth_std: float = 0.0
    edge_extra_variance: float = (1500.0 / 4) ** 2
    edge_extra_weight: float = 0.05
    init_weight: float = 0.5
    init_mean: float = 750.0
    init_variance: float = (1500.0 / 2) ** 2
    occlusion_component_enabled: bool = False
    occlusion_weight: float = 0.05

    def __post_init__(self):
        if self.neighborhood not in NEIGHBORHOODS:
            raise InvalidInputError(f"neighborhood must be one of {NEIGHBORHOODS}, got {self.neighborhood!r}")
        for name in ("self_prob", "attenuation", "init_weight"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise InvalidInputError(f"{name} must lie in (0, 1], got {v}")
        for name in ("edge_extra_weight", "occlusion_weight"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")
        if not (self.rw_variance >= 0 and math.isfinite(self.rw_variance)):
            raise InvalidInputError(f"rw_variance must be >= 0, got {self.rw_variance}")
        if not (self.smooth_std >= 0 and math.isfinite(self.smooth_std)):
            raise InvalidInputError(f"smooth_std must be >= 0, got {self.smooth_std}")
        for name in ("edge_extra_variance", "init_variance"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidInputError(f"{name} must be > 0, got {v}")
        if not math.isfinite(self.init_mean):
            raise InvalidInputError("init_mean must be finite")

    @classmethod
    def for_system(cls, sys: SystemConfig, **overrides) -> "FilterParams":
        t_r = sys.rep_period
        base = dict(
            init_mean=t_r / 2,
            init_variance=(t_r / 2) ** 2,
            edge_extra_variance=(t_r / 4) ** 2,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def neighborhood_size(self) -> int:
        return 5 if self.neighborhood == "cross5" else 1

    def without_st(self) -> "FilterParams":
        """Independent-pixel variant: self-only prediction, no weight smoothing."""
        return replace(self, neighborhood="self", self_prob=1.0, smooth_std=0.0)


@dataclass(frozen=True)
class FrameEvents:
    """Sparse detections of one frame: ascending row-major pixel indices and ToAs.

    ``labels`` is an optional debug side channel (True for signal photons)
    filled by the simulator; the filter never reads it.
    """

    frame_index: int
    pixels: np.ndarray
    toas: np.ndarray
    labels: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "toas", np.asarray(self.toas, dtype=np.float64).reshape(-1))
        if self.pixels.shape != self.toas.shape:
            raise InvalidInputError("pixels and toas must have the same length")

    def __len__(self) -> int:
        return self.pixels.size

    @classmethod
    def empty(cls, frame_index: int) -> "FrameEvents":
        return cls(frame_index, np.empty(0, np.int64), np.empty(0, np.float64))

    @classmethod
    def from_dense(cls, frame_index: int, toa_map: np.ndarray) -> "FrameEvents":
        """Build from a map holding a ToA per pixel and NaN where nothing was detected."""
        flat = np.asarray(toa_map, dtype=np.float64).reshape(-1)
        idx = np.flatnonzero(~np.isnan(flat))
        return cls(frame_index, idx, flat[idx])

    def validate(self, n_pixels: int, rep_period: float) -> None:
        if self.pixels.size:
            if np.any(np.diff(self.pixels) <= 0):
                raise InvalidInputError(f"frame {self.frame_index}: pixel indices must be strictly increasing")
            if self.pixels[0] < 0 or self.pixels[-1] >= n_pixels:
                raise InvalidInputError(f"frame {self.frame_index}: pixel index out of range [0, {n_pixels})")
            if not np.all((self.toas >= 0) & (self.toas < rep_period)):
                raise InvalidInputError(f"frame {self.frame_index}: ToA outside [0, {rep_period})")

    def to_dense(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.full(shape[0] * shape[1], np.nan)
        out[self.pixels] = self.toas
        return out.reshape(shape)


@dataclass(frozen=True)
class BeliefGrid:
    """Per-pixel Gaussian range beliefs and signal-fraction estimates.

    ``mean``, ``variance`` and ``weights`` are read-only ``(height, width)``
    arrays; stepping the filter always builds a new grid.
    """

    mean: np.ndarray
    variance: np.ndarray
    weights: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        for name in ("mean", "variance", "weights"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise InvalidInputError(f"{name} must be a 2-D array, got shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.mean.shape == self.variance.shape == self.weights.shape):
            raise InvalidInputError("mean, variance and weights shapes differ")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape

    @property
    def height(self) -> int:
        return self.mean.shape[0]

    @property
    def width(self) -> int:
        return self.mean.shape[1]

    def belief(self, pixel: PixelIndex) -> GaussianBelief:
        r, c = _rowcol(pixel, self.shape)
        return GaussianBelief(float(self.mean[r, c]), float(self.variance[r, c]))


def _rowcol(pixel: PixelIndex, shape: tuple[int, int]) -> tuple[int, int]:
    h, w = shape
    if isinstance(pixel, tuple):
        r, c = pixel
    else:
        r, c = divmod(int(pixel), w)
    if not (0 <= r < h and 0 <= c < w):
        raise InvalidInputError(f"pixel {pixel} outside a {h}x{w} grid")
    return int(r), int(c)


def init_state(dims: tuple[int, int], sys: SystemConfig, params: FilterParams) -> BeliefGrid:
    h, w = dims
    if h <= 0 or w <= 0:
        raise InvalidInputError(f"grid dimensions must be positive, got {dims}")
    return BeliefGrid(
        mean=np.full((h, w), params.init_mean),
        variance=np.full((h, w), params.init_variance),
        weights=np.full((h, w), params.init_weight),
        frame_index=0,
    )


# ---------------------------------------------------------------------------
# scalar reference path


def predict_prior(grid: BeliefGrid, pixel: PixelIndex, params: FilterParams) -> MixtureBelief:
    """Prior mixture for ``pixel`` at the next frame, built from ``grid``."""
    r, c = _rowcol(pixel, grid.shape)
    h, w = grid.shape
    g2 = params.rw_variance
    if params.neighborhood == "self":
        raw = [(1.0, grid.mean[r, c], grid.variance[r, c] + g2)]
    else:
        nu = params.self_prob
        other = (1.0 - nu) / (params.neighborhood_size - 1)
        raw = []
        for dr, dc in _CROSS_OFFSETS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                u = nu if (dr, dc) == (0, 0) else other
                raw.append((u, grid.mean[rr, cc], grid.variance[rr, cc] + g2))
        on_border = r in (0, h - 1) or c in (0, w - 1)
        if on_border and params.edge_extra_weight > 0:
            raw.append((params.edge_extra_weight, grid.mean[r, c], params.edge_extra_variance))
    if params.occlusion_component_enabled and params.occlusion_weight > 0:
        m, v = _occlusion_component(grid, r, c, params)
        raw.append((params.occlusion_weight, m, v))
    total = math.fsum(u for u, _, _ in raw)
    return MixtureBelief(
        tuple(MixtureComponent(u / total, float(m), float(v)) for u, m, v in raw)
    )


def _occlusion_component(grid: BeliefGrid, r: int, c: int, params: FilterParams) -> tuple[float, float]:
    # missing neighbours are replaced by the pixel itself, as in the array path
    h, w = grid.shape
    means = []
    for dr, dc in _CROSS_OFFSETS:
        rr, cc = r + dr, c + dc
        means.append(grid.mean[rr, cc] if (0 <= rr < h and 0 <= cc < w) else grid.mean[r, c])
    means = np.asarray(means)
    spread = float(np.mean((means - np.mean(means)) ** 2))
    return float(np.median(means)), spread + grid.variance[r, c] + params.rw_variance


def update_pixel(
    prior: MixtureBelief, event: Optional[float], wbar: float, sys: SystemConfig
) -> tuple[MixtureBelief, float]:
    """Exact posterior of one pixel's range given its (optional) detection.

    Returns the posterior mixture and the posterior probability that the
    detection was a signal photon (``wbar`` when nothing was detected).
    Signal components come first, then the background components.
    """
    if not 0.0 <= wbar <= 1.0:
        raise InvalidInputError(f"wbar must lie in [0, 1], got {wbar}")
    if event is None or (isinstance(event, float) and math.isnan(event)):
        return prior, wbar
    irf = sys.irf
    sig, bkg = [], []
    for comp in prior:
        ev, upd = signal_component_update(comp, float(event), irf, sys.speed_scale)
        sig.append((comp.weight * wbar * ev, upd))
        bkg.append((comp.weight * (1.0 - wbar) / sys.rep_period, comp))
    post, _ = normalize_mixture(sig + bkg)
    what = math.fsum(c.weight for c in post.components[: len(sig)])
    return post, min(1.0, what)


# ---------------------------------------------------------------------------
# array path


def update_weights(wbar: np.ndarray, what: np.ndarray, params: FilterParams) -> np.ndarray:
    wbar = np.asarray(wbar, dtype=np.float64)
    what = np.asarray(what, dtype=np.float64)
    if wbar.shape != what.shape:
        raise InvalidInputError(f"shape mismatch {wbar.shape} vs {what.shape}")
    a = params.attenuation
    return np.clip((1.0 - a) * wbar + a * what, 0.0, 1.0)


def gaussian_kernel(std: float) -> np.ndarray:
    """Sampled Gaussian taps on ``[-ceil(3 std), ceil(3 std)]``, summing to 1."""
    radius = max(1, math.ceil(3.0 * std))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(over="ignore"):  # tiny std: off-centre taps underflow to 0
        k = np.exp(-0.5 * (x / std) ** 2)
    return k / k.sum()


def smooth_weights(wbar: np.ndarray, smooth_std: float) -> np.ndarray:
    """Separable Gaussian smoothing over the last two axes, replicate borders."""
    wbar = np.asarray(wbar, dtype=np.float64)
    if smooth_std == 0:
        return wbar.copy()
    if smooth_std < 0:
        raise InvalidInputError("smooth_std must be >= 0")
    k = gaussian_kernel(smooth_std)
    out = ndimage.correlate1d(wbar, k, axis=-1, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=-2, mode="nearest")
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class _Layout:
    """Geometry-only part of the prediction.

    ``weights`` has one normalized row of ``H*W`` weights per component, in
    the order neighbours, edge component, occlusion component.
    """

    offsets: tuple[tuple[int, int], ...]
    weights: np.ndarray
    has_edge: bool
    has_occlusion: bool


@lru_cache(maxsize=32)
def _layout(shape: tuple[int, int], neighborhood: str, nu: float, edge_w: float, occ_w: float) -> _Layout:
    h, w = shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    if neighborhood == "self":
        offsets = ((0, 0),)
        raw = [np.ones((h, w))]
    else:
        offsets = _CROSS_OFFSETS
        other = (1.0 - nu) / (len(offsets) - 1)
        raw = []
        for dr, dc in offsets:
            present = (rows + dr >= 0) & (rows + dr < h) & (cols + dc >= 0) & (cols + dc < w)
            raw.append(np.where(present, nu if (dr, dc) == (0, 0) else other, 0.0))
    has_edge = neighborhood != "self" and edge_w > 0
    if has_edge:
        border = (rows == 0) | (rows == h - 1) | (cols == 0) | (cols == w - 1)
        raw.append(np.where(border, edge_w, 0.0))
    has_occ = occ_w > 0
    if has_occ:
        raw.append(np.full((h, w), occ_w))
    # same accumulation order as the scalar path
    total = raw[0]
    for r in raw[1:]:
        total = total + r
    weights = np.stack([(r / total).reshape(-1) for r in raw])
    weights.setflags(write=False)
    return _Layout(offsets, weights, has_edge, has_occ)


def _layout_for(shape, params: FilterParams) -> _Layout:
    occ_w = params.occlusion_weight if params.occlusion_component_enabled else 0.0
    return _layout(tuple(shape), params.neighborhood, float(params.self_prob),
                   float(params.edge_extra_weight), float(occ_w))


def _neighbours(a: np.ndarray, offsets, out: np.ndarray) -> None:
    """``out[k, b, r*W + c] = a[b, r+dr, c+dc]`` with the border replicated outside the grid."""
    b, h, w = a.shape
    out = out.reshape(len(offsets), b, h, w)
    if offsets == ((0, 0),):
        out[0] = a
        return
    p = np.pad(a, ((0, 0), (1, 1), (1, 1)), mode="edge")
    for k, (dr, dc) in enumerate(offsets):
        out[k] = p[:, 1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]


def _prior_components(mean, var, params: FilterParams, layout: _Layout):
    """Stacked prior mixture: weights ``(K, P)``, means and variances ``(K, B, P)``.

    ``mean`` and ``var`` have shape ``(B, H, W)``.
    """
    b, h, w = mean.shape
    k_all = layout.weights.shape[0]
    n_nb = len(layout.offsets)
    ms = np.empty((k_all, b, h * w))
    vs = np.empty((k_all, b, h * w))
    _neighbours(mean, layout.offsets, ms[:n_nb])
    _neighbours(var, layout.offsets, vs[:n_nb])
    vs[:n_nb] += params.rw_variance
    k = n_nb
    if layout.has_edge:
        ms[k] = ms[0]
        vs[k] = params.edge_extra_variance
        k += 1
    if layout.has_occlusion:
        if n_nb == len(_CROSS_OFFSETS):
            stack = ms[:n_nb]
        else:
            stack = np.empty((len(_CROSS_OFFSETS), b, h * w))
            _neighbours(mean, _CROSS_OFFSETS, stack)
        centre = np.mean(stack, axis=0)
        spread = np.mean((stack - centre) ** 2, axis=0)
        ms[k] = np.median(stack, axis=0)
        vs[k] = spread + var.reshape(b, h * w) + params.rw_variance
    return layout.weights, ms, vs


def _moments(ws, ms, vs):
    """Mean and variance of stacked mixtures, reducing over the first axis."""
    mean = ws[0] * ms[0]
    for i in range(1, len(ms)):
        mean = mean + ws[i] * ms[i]
    d = ms - mean
    t = ws * (vs + d * d)
    var = t[0]
    for i in range(1, len(t)):
        var = var + t[i]
    return mean, var


def _chunk_update(ws, ms, vs, toa, wbar, sl: slice, sys: SystemConfig):
    """Posterior moments and signal probability for pixel columns ``sl`` of ``(B, P)`` arrays."""
    ws = ws[:, sl]
    ms = ms[:, :, sl]
    vs = vs[:, :, sl]
    toa = toa[:, sl]
    wb = wbar[:, sl]
    mean, var = _moments(ws[:, None, :], ms, vs)
    what = wb.copy()
    rows, cols = np.nonzero(~np.isnan(toa))
    if rows.size == 0:
        return mean, var, what

    y = toa[rows, cols]
    wd = wb[rows, cols]
    u = ws[:, cols]
    mu = ms[:, rows, cols]
    s = vs[:, rows, cols]
    s2 = sys.irf_variance
    k = sys.speed_scale
    tot = k * k * s + s2
    r = y - k * mu
    ev = np.exp(-0.5 * r * r / tot) / (_SQRT_2PI * np.sqrt(tot))
    pv = 1.0 / (1.0 / s + k * k / s2)
    n_comp = len(u)
    all_w = np.concatenate([u * wd * ev, u * ((1.0 - wd) / sys.rep_period)])
    all_m = np.concatenate([pv * (mu / s + k * y / s2), mu])
    all_v = np.concatenate([pv, s])
    z = all_w[0]
    for i in range(1, len(all_w)):
        z = z + all_w[i]
    if not np.all(z > MIN_POSTERIOR_MASS):
        i = int(np.argmin(z))
        raise DegeneratePosteriorError(
            f"posterior mass below {MIN_POSTERIOR_MASS} at image {rows[i]}, pixel {cols[i] + (sl.start or 0)}"
        )
    nw = all_w / z
    pm, pvar = _moments(nw, all_m, all_v)
    sig = nw[0]
    for i in range(1, n_comp):
        sig = sig + nw[i]
    mean[rows, cols] = pm
    var[rows, cols] = pvar
    what[rows, cols] = np.minimum(sig, 1.0)
    return mean, var, what


def advance(
    mean: np.ndarray,
    var: np.ndarray,
    wbar: np.ndarray,
    toa: np.ndarray,
    sys: SystemConfig,
    params: FilterParams,
    workers: int = 1,
    executor: Optional[ThreadPoolExecutor] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One filter step on dense arrays of shape ``(..., H, W)``.

    ``toa`` holds the detection time per pixel and NaN where nothing was
    recorded. Returns ``(mean, variance, next_wbar, what)``; inputs are not
    modified. With several workers the pixels are split into contiguous
    column blocks of the flattened image; results do not depend on the split.
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    wbar = np.asarray(wbar, dtype=np.float64)
    toa = np.asarray(toa, dtype=np.float64)
    shape = mean.shape
    if mean.ndim < 2 or not (shape == var.shape == wbar.shape == toa.shape):
        raise InvalidInputError("mean, var, wbar and toa must share a shape (..., H, W)")
    h, w = shape[-2:]
    p = h * w
    mean3 = mean.reshape(-1, h, w)
    var3 = var.reshape(-1, h, w)
    b = mean3.shape[0]

    layout = _layout_for((h, w), params)
    ws, ms, vs = _prior_components(mean3, var3, params, layout)
    toa2 = toa.reshape(b, p)
    wbar2 = wbar.reshape(b, p)

    n_split = executor._max_workers if executor is not None else workers
    if n_split <= 1:
        new_mean, new_var, what = _chunk_update(ws, ms, vs, toa2, wbar2, slice(0, p), sys)
    else:
        bounds = np.linspace(0, p, n_split + 1).astype(int)
        slices = [slice(int(a), int(c)) for a, c in zip(bounds[:-1], bounds[1:]) if c > a]
        new_mean = np.empty((b, p))
        new_var = np.empty((b, p))
        what = np.empty((b, p))

        def run(sl):
            new_mean[:, sl], new_var[:, sl], what[:, sl] = _chunk_update(ws, ms, vs, toa2, wbar2, sl, sys)

        if executor is None:
            with ThreadPoolExecutor(max_workers=len(slices)) as ex:
                list(ex.map(run, slices))
        else:
            list(executor.map(run, slices))

    if not (np.all(new_var > 0) and np.all(np.isfinite(new_mean))):
        raise DegenerateBeliefError("projected belief has a non-positive variance or non-finite mean")
    new_mean = new_mean.reshape(shape)
    new_var = new_var.reshape(shape)
    what = what.reshape(shape)
    next_w = update_weights(wbar, what, params)
    if params.smooth_std > 0:
        next_w = smooth_weights(next_w, params.smooth_std)
    return new_mean, new_var, next_w, what


def step_frame(
    grid: BeliefGrid,
    events: FrameEvents,
    sys: SystemConfig,
    params: FilterParams,
    workers: int = 1,
    executor: Optional[ThreadPoolExecutor] = None,
) -> BeliefGrid:
    """Advance ``grid`` by one frame of detections."""
    if events.frame_index != grid.frame_index + 1:
        raise InvalidInputError(
            f"events are for frame {events.frame_index}, grid expects frame {grid.frame_index + 1}"
        )
    events.validate(grid.height * grid.width, sys.rep_period)
    toa = events.to_dense(grid.shape)
    mean, var, wbar, _ = advance(grid.mean, grid.variance, grid.weights, toa, sys, params, workers, executor)
    return BeliefGrid(mean, var, wbar, grid.frame_index + 1)


def run_filter(
    grid: BeliefGrid,
    frames: Sequence[FrameEvents],
    sys: SystemConfig,
    params: FilterParams,
    workers: int = 1,
):
    """Yield the grid after each frame."""
    for ev in frames:
        grid = step_frame(grid, ev, sys, params, workers)
        yield grid
