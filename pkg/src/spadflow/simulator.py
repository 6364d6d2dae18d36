"""Photon detection simulator for a low-flux single-photon array.

Per pixel and frame: a detection happens with probability ``pi``; a detection
is a signal photon with probability ``w`` and then has a Gaussian ToA around
the target delay, otherwise it is a background photon uniform over the
repetition period. Gaussian ToAs falling outside ``[0, T_r)`` are redrawn.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import rng
from .belief import SystemConfig
from .engine import FrameEvents
from .errors import InvalidInputError
from .scenes import GroundTruthFrame, SceneSpec, scene_eval

# draw slots inside one (seed, frame, pixel) stream
_SLOT_DETECT, _SLOT_LABEL, _SLOT_BACKGROUND, _SLOT_GAUSS = 0, 1, 2, 3
MAX_REDRAWS = 64


@dataclass(frozen=True)
class FluxParams:
    """Per-repetition mean photon counts: signal ``r*S`` and background ``B = T_r*b``."""

    signal_rate: float
    background_rate: float
    reps: int = 1

    def __post_init__(self):
        if self.signal_rate < 0 or self.background_rate < 0:
            raise InvalidInputError("photon rates must be >= 0")
        if self.reps < 1:
            raise InvalidInputError("reps must be >= 1")
        total = self.signal_rate + self.background_rate
        if total > 1.0:
            raise InvalidInputError(f"total rate {total} per repetition is outside the low-flux regime")
        if total > 0.1:
            warnings.warn(f"total rate {total} per repetition is not small; low-flux approximation is loose")


def flux_to_probabilities(flux: FluxParams, rep_period: Optional[float] = None) -> tuple[float, float]:
    """Return ``(detect_prob, signal_frac)`` for one frame of ``flux.reps`` repetitions.

    ``rep_period`` is accepted for symmetry with the physical model; the rates
    are already integrated over one period.
    """
    lam = flux.signal_rate + flux.background_rate
    if lam <= 0:
        raise InvalidInputError("signal fraction undefined when the total rate is zero")
    return -math.expm1(-flux.reps * lam), flux.signal_rate / lam


def sample_toas(
    range_map,
    signal_frac_map,
    detect_prob_map,
    sys: SystemConfig,
    seed,
    frame: int,
    with_labels: bool = False,
):
    """Dense detection map (NaN = no detection) for arrays of shape ``(..., H, W)``.

    ``seed`` may be an array broadcasting against the leading axes, which is
    how several independent runs are simulated in one call. With
    ``with_labels`` also returns a boolean map flagging signal photons.
    """
    d = np.asarray(range_map, dtype=np.float64)
    w = np.asarray(signal_frac_map, dtype=np.float64)
    pi = np.asarray(detect_prob_map, dtype=np.float64)
    shape = np.broadcast_shapes(d.shape, w.shape, pi.shape, np.shape(seed) + (1, 1))
    h, wd = shape[-2:]
    rows = np.arange(h, dtype=np.uint64)[:, None]
    cols = np.arange(wd, dtype=np.uint64)[None, :]
    seed_arr = np.asarray(seed, dtype=np.uint64)
    if seed_arr.ndim:
        seed_arr = seed_arr[..., None, None]
    key = np.broadcast_to(rng.stream_key(seed_arr, frame, rows, cols), shape)

    t_r = sys.rep_period
    detected = rng.uniform(key, _SLOT_DETECT) < pi
    signal = detected & (rng.uniform(key, _SLOT_LABEL) < w)
    toa = np.full(shape, np.nan)
    bg = detected & ~signal
    toa[bg] = np.minimum(rng.uniform(key, _SLOT_BACKGROUND)[bg] * t_r, np.nextafter(t_r, 0.0))

    pending = np.flatnonzero(signal.reshape(-1))
    if pending.size:
        key_f = key.reshape(-1)
        delay = np.broadcast_to(sys.speed_scale * d, shape).reshape(-1)
        std = math.sqrt(sys.irf_variance)
        toa_f = toa.reshape(-1)
        for attempt in range(MAX_REDRAWS):
            k = key_f[pending]
            u1 = rng.uniform(k, _SLOT_GAUSS + 2 * attempt)
            u2 = rng.uniform(k, _SLOT_GAUSS + 2 * attempt + 1)
            z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
            y = delay[pending] + std * z
            ok = (y >= 0) & (y < t_r)
            toa_f[pending[ok]] = y[ok]
            pending = pending[~ok]
            if not pending.size:
                break
        else:
            raise InvalidInputError(
                f"{pending.size} signal ToAs still outside [0, {t_r}) after {MAX_REDRAWS} redraws; "
                "true ranges are too close to the interval ends"
            )
        toa = toa_f.reshape(shape)
    if with_labels:
        return toa, signal
    return toa


def sample_frame(
    truth: GroundTruthFrame, sys: SystemConfig, seed: int, frame_index: int, debug: bool = False
) -> FrameEvents:
    """Sparse detections of one frame. ``frame_index`` is 1-based (first frame = 1)."""
    toa, labels = sample_toas(
        truth.range_map, truth.signal_frac_map, truth.detect_prob_map, sys, seed, frame_index, with_labels=True
    )
    ev = FrameEvents.from_dense(frame_index, toa)
    if debug:
        ev = FrameEvents(ev.frame_index, ev.pixels, ev.toas, labels.reshape(-1)[ev.pixels])
    return ev


def simulate(spec: SceneSpec, sys: SystemConfig, seed: int, debug: bool = False) -> Iterator[tuple[GroundTruthFrame, FrameEvents]]:
    """Yield ``(truth, events)`` for every frame of ``spec``; events are numbered from 1."""
    for n in range(spec.frames):
        truth = scene_eval(spec, n)
        yield truth, sample_frame(truth, sys, seed, n + 1, debug)
