"""Ground-truth scene generators.

A scene maps a frame index ``n`` (0-based) to per-pixel true range, signal
fraction and detection probability. All scenes are deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class GroundTruthFrame:
    range_map: np.ndarray
    signal_frac_map: np.ndarray
    detect_prob_map: np.ndarray

    def __post_init__(self):
        maps = []
        for name in ("range_map", "signal_frac_map", "detect_prob_map"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            maps.append(arr)
        if not (maps[0].shape == maps[1].shape == maps[2].shape):
            raise InvalidInputError("ground-truth maps have different shapes")
        if not np.all(np.isfinite(self.range_map)):
            raise InvalidInputError("range map must be finite")
        for name in ("signal_frac_map", "detect_prob_map"):
            arr = getattr(self, name)
            if not np.all((arr >= 0) & (arr <= 1)):
                raise InvalidInputError(f"{name} values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.range_map.shape

    def check_range(self, rep_period: float) -> None:
        if not np.all((self.range_map >= 0) & (self.range_map < rep_period)):
            raise InvalidInputError(f"true ranges must lie in [0, {rep_period})")


@dataclass(frozen=True)
class SinglePixelSine:
    """One pixel whose range follows a sine and whose signal fraction is piecewise constant.

    ``w_schedule`` lists ``(first_frame, w)`` pairs in increasing frame order.
    With ``amplitude = 0`` this is a constant-range pixel.
    """

    center: float = 750.0
    amplitude: float = 250.0
    period: float = 1000.0
    w_schedule: tuple[tuple[int, float], ...] = ((0, 0.3), (600, 0.8), (1100, 0.3))
    detect_prob: float = 0.5
    frames: int = 2000

    @property
    def dims(self) -> tuple[int, int]:
        return (1, 1)

    def range_at(self, n: int) -> float:
        return self.center + self.amplitude * math.sin(2.0 * math.pi * n / self.period)

    def w_at(self, n: int) -> float:
        w = self.w_schedule[0][1]
        for start, value in self.w_schedule:
            if n >= start:
                w = value
        return w

    def eval(self, n: int) -> GroundTruthFrame:
        return GroundTruthFrame(
            np.array([[self.range_at(n)]]),
            np.array([[self.w_at(n)]]),
            np.array([[self.detect_prob]]),
        )


def constant_pixel(range_: float, w: float, detect_prob: float, frames: int) -> SinglePixelSine:
    return SinglePixelSine(center=range_, amplitude=0.0, period=1.0, w_schedule=((0, w),),
                           detect_prob=detect_prob, frames=frames)


@dataclass(frozen=True, eq=False)
class StaticMaps:
    range_map: np.ndarray
    signal_frac_map: np.ndarray
    detect_prob_map: np.ndarray
    frames: int = 5000

    def __post_init__(self):
        # validates and freezes the maps once
        gt = GroundTruthFrame(self.range_map, self.signal_frac_map, self.detect_prob_map)
        object.__setattr__(self, "_frame", gt)

    @property
    def dims(self) -> tuple[int, int]:
        return self._frame.shape

    def eval(self, n: int) -> GroundTruthFrame:
        return self._frame

    def scaled_detection(self, factor: float) -> "StaticMaps":
        return StaticMaps(self.range_map, self.signal_frac_map,
                          np.clip(self.detect_prob_map * factor, 0.0, 1.0), self.frames)

    @classmethod
    def from_files(cls, range_path, w_path, pi_path, frames: int) -> "StaticMaps":
        from .fileio import read_raster

        return cls(read_raster(range_path), read_raster(w_path), read_raster(pi_path), frames)


def static_standin(height: int = 64, width: int = 64, frames: int = 5000,
                   detect_scale: float = 1.0) -> StaticMaps:
    """Synthetic head-and-shoulders scene in front of a flat wall (period 2500).

    Mean detection probability is about 0.05; the head is a dome so its range
    varies smoothly, with sharp jumps at its outline.
    """
    rows = (np.arange(height)[:, None] + 0.5) / height
    cols = (np.arange(width)[None, :] + 0.5) / width
    rng_map = np.full((height, width), 2000.0)
    w_map = np.full((height, width), 0.3)
    pi_map = np.full((height, width), 0.045)

    neck = (rows > 0.62) & (np.abs(cols - 0.5) < 0.11)
    shoulders = (rows > 0.84) & (np.abs(cols - 0.5) < 0.36)
    body = neck | shoulders
    rng_map[body] = 1250.0
    w_map[body] = 0.5
    pi_map[body] = 0.05

    r2 = ((rows - 0.38) / 0.28) ** 2 + ((cols - 0.5) / 0.21) ** 2
    head = r2 < 1.0
    rng_map[head] = 1000.0 + 180.0 * (1.0 - np.sqrt(np.clip(1.0 - r2[head], 0.0, 1.0)))
    w_map[head] = 0.6
    pi_map[head] = 0.065
    return StaticMaps(rng_map, w_map, np.clip(pi_map * detect_scale, 0.0, 1.0), frames)


@dataclass(frozen=True)
class Rect:
    center_row: float
    center_col: float
    height: float
    width: float

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        r = np.arange(shape[0])[:, None] + 0.5
        c = np.arange(shape[1])[None, :] + 0.5
        return (np.abs(r - self.center_row) < self.height / 2) & (np.abs(c - self.center_col) < self.width / 2)


@dataclass(frozen=True)
class RectDance:
    """Flat rectangles moving in front of a backplane, in three phases.

    Phase 1 (``n < phase_frames``): a static object sits on the orbit of a
    second, closer object that circles the image centre counterclockwise and
    fully occludes the first one on its way. Phase 2: the first object is gone
    and the second keeps orbiting while its size oscillates. Phase 3: a third
    object enters from the left moving horizontally, while the first object is
    back and moves away from the backplane.
    """

    dims: tuple[int, int] = (100, 100)
    frames: int = 2400
    phase_frames: int = 800
    backplane_range: float = 2000.0
    backplane_w: float = 0.5
    object_w: float = 0.7
    detect_prob: float = 0.5
    orbit_radius: float = 28.0
    rotation_deg: float = 0.45
    start_angle_deg: float = 0.0
    obj1_angle_deg: float = 135.0
    obj1_size: float = 10.0
    obj1_range: float = 1400.0
    obj1_final_range: float = 1000.0
    obj2_size: float = 18.0
    obj2_size_amp: float = 6.0
    obj2_size_period: float = 400.0
    obj2_range: float = 900.0
    obj3_size: tuple[float, float] = (10.0, 14.0)
    obj3_range: float = 1200.0
    obj3_row: float = 82.0
    obj3_speed: float = 0.15

    @property
    def phase_bounds(self) -> tuple[int, int]:
        return self.phase_frames, 2 * self.phase_frames

    def _orbit(self, n: int) -> tuple[float, float]:
        h, w = self.dims
        a = math.radians(self.start_angle_deg + self.rotation_deg * n)
        return h / 2 - self.orbit_radius * math.sin(a), w / 2 + self.orbit_radius * math.cos(a)

    def objects(self, n: int) -> dict[str, tuple[Rect, float]]:
        """Objects present at frame ``n`` with their ranges."""
        h, w = self.dims
        p1, p2 = self.phase_bounds
        out: dict[str, tuple[Rect, float]] = {}
        a1 = math.radians(self.obj1_angle_deg)
        c1 = (h / 2 - self.orbit_radius * math.sin(a1), w / 2 + self.orbit_radius * math.cos(a1))
        if n < p1:
            out["obj1"] = (Rect(*c1, self.obj1_size, self.obj1_size), self.obj1_range)
        elif n >= p2:
            frac = (n - p2) / max(1, self.frames - p2)
            rng = self.obj1_range + frac * (self.obj1_final_range - self.obj1_range)
            out["obj1"] = (Rect(*c1, self.obj1_size, self.obj1_size), rng)
        size2 = self.obj2_size
        if p1 <= n < p2:
            size2 = self.obj2_size + self.obj2_size_amp * math.sin(2 * math.pi * (n - p1) / self.obj2_size_period)
        out["obj2"] = (Rect(*self._orbit(n), size2, size2), self.obj2_range)
        if n >= p2:
            oh, ow = self.obj3_size
            col = -ow / 2 + self.obj3_speed * (n - p2)
            out["obj3"] = (Rect(self.obj3_row, col, oh, ow), self.obj3_range)
        return out

    def masks(self, n: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Per object: (full footprint, visible part after occlusion)."""
        objs = self.objects(n)
        order = sorted(objs, key=lambda k: -objs[k][1])  # far to near
        foot = {k: objs[k][0].mask(self.dims) for k in objs}
        out = {}
        for i, k in enumerate(order):
            vis = foot[k].copy()
            for nearer in order[i + 1 :]:
                vis &= ~foot[nearer]
            out[k] = (foot[k], vis)
        return out

    def eval(self, n: int) -> GroundTruthFrame:
        rng = np.full(self.dims, self.backplane_range)
        w = np.full(self.dims, self.backplane_w)
        objs = self.objects(n)
        for k in sorted(objs, key=lambda k: -objs[k][1]):
            rect, d = objs[k]
            m = rect.mask(self.dims)
            rng[m] = d
            w[m] = self.object_w
        return GroundTruthFrame(rng, w, np.full(self.dims, self.detect_prob))


SceneSpec = Union[SinglePixelSine, StaticMaps, RectDance]


def scene_eval(spec: SceneSpec, n: int) -> GroundTruthFrame:
    if not 0 <= n < spec.frames:
        raise InvalidInputError(f"frame {n} outside [0, {spec.frames})")
    return spec.eval(n)


def is_static(spec: SceneSpec) -> bool:
    return isinstance(spec, StaticMaps) or (
        isinstance(spec, SinglePixelSine) and spec.amplitude == 0 and len(spec.w_schedule) == 1
    )
