"""Gaussian and Gaussian-mixture algebra for per-pixel range beliefs.

Everything here is scalar, pure and allocation-light. The grid engine in
:mod:`spadflow.engine` runs the same formulas on whole arrays; this module is
the readable reference it is tested against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DegenerateBeliefError, DegeneratePosteriorError, InvalidInputError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
MIN_POSTERIOR_MASS = 1e-300


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def gaussian_pdf(x: float, mean: float, variance: float) -> float:
    return math.exp(-0.5 * (x - mean) ** 2 / variance - _LOG_SQRT_2PI - 0.5 * math.log(variance))


@dataclass(frozen=True)
class SystemConfig:
    """Acquisition constants shared by the simulator and the filter.

    ``speed_scale`` maps a range to its ToA delay (``delay = speed_scale * d``);
    the default of 1 corresponds to working in units where c/2 = 1.
    """

    rep_period: float = 1500.0
    irf_variance: float = 200.0
    speed_scale: float = 1.0
    frame_reps: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.rep_period) and self.rep_period > 0):
            raise InvalidInputError(f"rep_period must be > 0, got {self.rep_period}")
        if not (math.isfinite(self.irf_variance) and self.irf_variance > 0):
            raise InvalidInputError(f"irf_variance must be > 0, got {self.irf_variance}")
        if not (math.isfinite(self.speed_scale) and self.speed_scale > 0):
            raise InvalidInputError(f"speed_scale must be > 0, got {self.speed_scale}")
        if int(self.frame_reps) != self.frame_reps or self.frame_reps < 1:
            raise InvalidInputError(f"frame_reps must be a positive integer, got {self.frame_reps}")

    @property
    def frame_duration(self) -> float:
        return self.frame_reps * self.rep_period

    @property
    def irf(self) -> "ImpulseResponse":
        return ImpulseResponse(self.irf_variance)


@dataclass(frozen=True)
class ImpulseResponse:
    """Normalized Gaussian system response with zero mean."""

    variance: float
    normalization: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise InvalidInputError(f"impulse response variance must be > 0, got {self.variance}")

    def density(self, t: float) -> float:
        return gaussian_pdf(t, 0.0, self.variance)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class GaussianBelief:
    mean: float
    variance: float

    def __post_init__(self):
        if not _finite(self.mean, self.variance):
            raise InvalidInputError(f"non-finite belief ({self.mean}, {self.variance})")
        if self.variance <= 0:
            raise DegenerateBeliefError(f"belief variance must be > 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: float
    variance: float

    def __post_init__(self):
        if not _finite(self.weight, self.mean, self.variance):
            raise InvalidInputError(f"non-finite mixture component {self}")
        if not 0.0 <= self.weight <= 1.0:
            raise InvalidInputError(f"component weight must lie in [0, 1], got {self.weight}")
        if self.variance <= 0:
            raise InvalidInputError(f"component variance must be > 0, got {self.variance}")


@dataclass(frozen=True)
class MixtureBelief:
    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise InvalidInputError("a mixture needs at least one component")
        total = math.fsum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise InvalidInputError(f"mixture weights sum to {total!r}, expected 1")

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def weights(self) -> list[float]:
        return [c.weight for c in self.components]

    @classmethod
    def single(cls, mean: float, variance: float) -> "MixtureBelief":
        return cls((MixtureComponent(1.0, mean, variance),))

    def pdf(self, x: float) -> float:
        return sum(c.weight * gaussian_pdf(x, c.mean, c.variance) for c in self.components)


def signal_component_update(
    comp: MixtureComponent, toa: float, irf: ImpulseResponse, speed_scale: float = 1.0
) -> tuple[float, MixtureComponent]:
    """Condition one Gaussian range component on a signal photon at ``toa``.

    Returns the evidence ``N(toa; k*mu, k^2*var + s^2)`` and the conjugate
    posterior component (weight untouched, the caller rescales it).
    """
    if not _finite(comp.mean, comp.variance, toa, irf.variance, speed_scale):
        raise InvalidInputError("non-finite input to signal_component_update")
    k = speed_scale
    mu, var, s2 = comp.mean, comp.variance, irf.variance
    evidence = gaussian_pdf(toa, k * mu, k * k * var + s2)
    post_var = 1.0 / (1.0 / var + k * k / s2)
    post_mean = post_var * (mu / var + k * toa / s2)
    return evidence, MixtureComponent(comp.weight, post_mean, post_var)


def normalize_mixture(
    raw: Iterable[tuple[float, MixtureComponent]],
) -> tuple[MixtureBelief, float]:
    """Turn ``(unnormalized weight, component)`` pairs into a mixture.

    The incoming component weights are ignored; the returned normalizing
    constant is the sum of the raw weights.
    """
    raw = list(raw)
    if not raw:
        raise DegeneratePosteriorError("no components to normalize")
    weights = [float(w) for w, _ in raw]
    if not all(math.isfinite(w) and w >= 0 for w in weights):
        raise DegeneratePosteriorError(f"invalid unnormalized weights {weights}")
    total = math.fsum(weights)
    if not total > MIN_POSTERIOR_MASS:
        raise DegeneratePosteriorError(f"posterior mass {total!r} below {MIN_POSTERIOR_MASS}")
    norm = [w / total for w in weights]
    comps = tuple(MixtureComponent(w, c.mean, c.variance) for w, (_, c) in zip(norm, raw))
    return MixtureBelief(comps), total


def mixture_moments(mix: MixtureBelief | Sequence[MixtureComponent]) -> tuple[float, float]:
    """Mean and variance of a Gaussian mixture.

    The variance is accumulated in centered form, ``sum c_k (var_k + (mu_k - m)^2)``,
    which equals ``sum c_k (var_k + mu_k^2) - m^2`` but does not cancel when
    the means are large compared to the spread.
    """
    comps = mix.components if isinstance(mix, MixtureBelief) else tuple(mix)
    if not comps:
        raise InvalidInputError("empty mixture")
    mean = 0.0
    for c in comps:
        mean += c.weight * c.mean
    var = 0.0
    for c in comps:
        dev = c.mean - mean
        var += c.weight * (c.variance + dev * dev)
    return mean, var


def adf_project(mix: MixtureBelief) -> GaussianBelief:
    """KL(mix || q)-optimal Gaussian ``q``: match the first two moments."""
    mean, var = mixture_moments(mix)
    if not (math.isfinite(var) and var > 0):
        raise DegenerateBeliefError(f"projected variance {var!r} is not positive")
    return GaussianBelief(mean, var)
