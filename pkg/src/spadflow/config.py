"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments, blank lines are ignored, and unknown
keys are rejected so that typos never pass silently. Missing keys take the
defaults in :data:`DEFAULTS` (period-dependent ones are derived from ``t_r``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .belief import SystemConfig
from .engine import NEIGHBORHOODS, FilterParams
from .errors import ParseError
from .scenes import RectDance, SceneSpec, SinglePixelSine, StaticMaps, static_standin

SCENE_KINDS = ("flat", "sine", "standin", "static", "rect_dance")


def _float(lo: float = -math.inf, hi: float = math.inf, lo_open: bool = False) -> Callable[[str], float]:
    def conv(s: str) -> float:
        v = float(s)
        if not math.isfinite(v):
            raise ValueError(f"{s!r} is not finite")
        if v < lo or v > hi or (lo_open and v == lo):
            bracket = "(" if lo_open else "["
            raise ValueError(f"{v} outside {bracket}{lo}, {hi}]")
        return v

    return conv


def _int(lo: int = 0) -> Callable[[str], int]:
    def conv(s: str) -> int:
        v = int(s)
        if v < lo:
            raise ValueError(f"{v} < {lo}")
        return v

    return conv


def _choice(options) -> Callable[[str], str]:
    def conv(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} not one of {options}")
        return s

    return conv


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _schedule(s: str) -> tuple[tuple[int, float], ...]:
    out = []
    for part in s.split(","):
        start, w = part.split(":")
        w = float(w)
        if not 0 <= w <= 1:
            raise ValueError(f"signal fraction {w} outside [0, 1]")
        out.append((int(start), w))
    if not out or out[0][0] != 0 or any(b[0] <= a[0] for a, b in zip(out, out[1:])):
        raise ValueError("schedule must start at frame 0 with increasing frames")
    return tuple(out)


_prob = _float(0.0, 1.0)
_prob_open = _float(0.0, 1.0, lo_open=True)
_pos = _float(0.0, lo_open=True)
_nonneg = _float(0.0)

# key -> (converter, default); None defaults are derived from t_r
SCHEMA: dict[str, tuple[Callable[[str], object], object]] = {
    "t_r": (_pos, 1500.0),
    "s2": (_pos, 200.0),
    "n_r": (_int(1), 1),
    "speed_scale": (_pos, 1.0),
    "gamma2": (_nonneg, 100.0),
    "nu": (_prob_open, 0.99),
    "alpha": (_prob_open, 0.01),
    "neighborhood": (_choice(NEIGHBORHOODS), "cross5"),
    "smooth_std": (_nonneg, 0.0),
    "edge_weight": (_prob, 0.05),
    "edge_variance": (_pos, None),
    "init_w": (_prob_open, 0.5),
    "init_mean": (_float(), None),
    "init_variance": (_pos, None),
    "occlusion": (_bool, False),
    "occlusion_weight": (_prob, 0.05),
    "seed": (_int(0), 0),
    "workers": (_int(1), 1),
    "scene.kind": (_choice(SCENE_KINDS), "flat"),
    "scene.height": (_int(1), 16),
    "scene.width": (_int(1), 16),
    "scene.frames": (_int(1), 200),
    "scene.range": (_nonneg, None),
    "scene.w": (_prob, 0.5),
    "scene.pi": (_prob, 0.5),
    "scene.pi_scale": (_nonneg, 1.0),
    "scene.center": (_nonneg, None),
    "scene.amplitude": (_nonneg, 250.0),
    "scene.period": (_pos, 1000.0),
    "scene.w_schedule": (_schedule, ((0, 0.3), (600, 0.8), (1100, 0.3))),
    "scene.range_path": (str, None),
    "scene.w_path": (str, None),
    "scene.pi_path": (str, None),
}
DEFAULTS = {k: d for k, (_, d) in SCHEMA.items()}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    source: Optional[Path] = None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def system(self) -> SystemConfig:
        v = self.values
        return SystemConfig(v["t_r"], v["s2"], v["speed_scale"], v["n_r"])

    def filter_params(self, no_st: bool = False) -> FilterParams:
        v = self.values
        t_r = v["t_r"]
        p = FilterParams(
            rw_variance=v["gamma2"],
            self_prob=v["nu"],
            attenuation=v["alpha"],
            neighborhood=v["neighborhood"],
            smooth_std=v["smooth_std"],
            edge_extra_variance=v["edge_variance"] if v["edge_variance"] is not None else (t_r / 4) ** 2,
            edge_extra_weight=v["edge_weight"],
            init_weight=v["init_w"],
            init_mean=v["init_mean"] if v["init_mean"] is not None else t_r / 2,
            init_variance=v["init_variance"] if v["init_variance"] is not None else (t_r / 2) ** 2,
            occlusion_component_enabled=v["occlusion"],
            occlusion_weight=v["occlusion_weight"],
        )
        return p.without_st() if no_st else p

    def scene(self) -> SceneSpec:
        v = self.values
        kind = v["scene.kind"]
        h, w, n = v["scene.height"], v["scene.width"], v["scene.frames"]
        t_r = v["t_r"]
        if kind == "flat":
            d = v["scene.range"] if v["scene.range"] is not None else t_r / 3
            return StaticMaps(np.full((h, w), d), np.full((h, w), v["scene.w"]),
                              np.full((h, w), min(1.0, v["scene.pi"] * v["scene.pi_scale"])), n)
        if kind == "sine":
            center = v["scene.center"] if v["scene.center"] is not None else t_r / 2
            return SinglePixelSine(center, v["scene.amplitude"], v["scene.period"], v["scene.w_schedule"],
                                   min(1.0, v["scene.pi"] * v["scene.pi_scale"]), n)
        if kind == "standin":
            return static_standin(h, w, n, v["scene.pi_scale"])
        if kind == "static":
            paths = [v[f"scene.{k}_path"] for k in ("range", "w", "pi")]
            if any(p is None for p in paths):
                raise ParseError("scene.kind = static needs scene.range_path, scene.w_path and scene.pi_path")
            base = self.source.parent if self.source else Path(".")
            paths = [p if Path(p).is_absolute() else base / p for p in paths]
            maps = StaticMaps.from_files(*paths, frames=n)
            return maps.scaled_detection(v["scene.pi_scale"]) if v["scene.pi_scale"] != 1 else maps
        return RectDance(dims=(h, w), frames=n, detect_prob=min(1.0, v["scene.pi"] * v["scene.pi_scale"]))


def parse_config_text(text: str, source: Optional[Path] = None) -> RunConfig:
    values = dict(DEFAULTS)
    where = str(source) if source else "<config>"
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(f"{where}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(f"{where}:{lineno}: unknown key {key!r}")
        if not raw:
            raise ParseError(f"{where}:{lineno}: empty value for {key!r}")
        conv, _ = SCHEMA[key]
        try:
            values[key] = conv(raw)
        except ValueError as e:
            raise ParseError(f"{where}:{lineno}: bad value for {key!r}: {e}") from e
    return RunConfig(values, source)


def parse_config(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), path)
