"""Scalar noise laws used for stochastic forcing and observation error.

Every law is applied iid per coordinate. Each variant can draw samples,
evaluate its log-density and CDF, and report its first two moments (the
UKF moment-matches whatever law it is handed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy import special

__all__ = [
    "NoiseSpec",
    "Gaussian",
    "Uniform",
    "Mixture",
    "SignedExponential",
    "Laplace",
    "PointMass",
    "sample",
    "log_density",
    "noise_from_dict",
    "noise_to_dict",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class NoiseSpec:
    """Base class of the closed family of noise laws."""

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def log_density(self, v):
        raise NotImplementedError

    def cdf(self, v):
        raise NotImplementedError

    def expectation(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        """Interval holding all (or all but ~1e-15) of the mass."""
        raise NotImplementedError

    @property
    def is_degenerate(self) -> bool:
        return False


def _out(x, size):
    return float(x) if size is None else x


@dataclass(frozen=True)
class Gaussian(NoiseSpec):
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mean) and self.sd > 0 and math.isfinite(self.sd)):
            raise ValueError(f"invalid Gaussian parameters: mean={self.mean}, sd={self.sd}")

    def sample(self, rng, size=None):
        return _out(rng.normal(self.mean, self.sd, size), size)

    def log_density(self, v):
        z = (np.asarray(v, dtype=float) - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - _LOG_SQRT_2PI

    def cdf(self, v):
        return special.ndtr((np.asarray(v, dtype=float) - self.mean) / self.sd)

    def expectation(self):
        return self.mean

    def variance(self):
        return self.sd**2

    def support(self):
        return (self.mean - 9.0 * self.sd, self.mean + 9.0 * self.sd)


@dataclass(frozen=True)
class Uniform(NoiseSpec):
    a: float = -0.5
    b: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise ValueError(f"invalid Uniform bounds: [{self.a}, {self.b}]")

    def sample(self, rng, size=None):
        return _out(rng.uniform(self.a, self.b, size), size)

    def log_density(self, v):
        v = np.asarray(v, dtype=float)
        inside = (v >= self.a) & (v <= self.b)
        return np.where(inside, -math.log(self.b - self.a), -np.inf)

    def cdf(self, v):
        return np.clip((np.asarray(v, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def expectation(self):
        return 0.5 * (self.a + self.b)

    def variance(self):
        return (self.b - self.a) ** 2 / 12.0

    def support(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class SignedExponential(NoiseSpec):
    """``sign * scale * E`` with ``E ~ Exp(rate)``."""

    rate: float = 1.0
    scale: float = 1.0
    sign: int = 1

    def __post_init__(self):
        if not (self.rate > 0 and self.scale > 0 and math.isfinite(self.rate) and math.isfinite(self.scale)):
            raise ValueError(f"invalid SignedExponential: rate={self.rate}, scale={self.scale}")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def _meanabs(self) -> float:
        return self.scale / self.rate

    def sample(self, rng, size=None):
        return _out(self.sign * self.scale * rng.exponential(1.0 / self.rate, size), size)

    def log_density(self, v):
        # at the origin take the midpoint of the one-sided limits, so that the
        # symmetric +/- mixture is exactly the Laplace density there too
        u = self.sign * np.asarray(v, dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.where(u >= 0, -u / self._meanabs - math.log(self._meanabs), -np.inf)
        return np.where(u == 0, out - math.log(2.0), out)

    def cdf(self, v):
        u = np.asarray(v, dtype=float)
        tail = -np.expm1(-np.abs(u) / self._meanabs)
        if self.sign > 0:
            return np.where(u >= 0, tail, 0.0)
        return np.where(u <= 0, 1.0 - tail, 1.0)

    def expectation(self):
        return self.sign * self._meanabs

    def variance(self):
        return self._meanabs**2

    def support(self):
        edge = 40.0 * self._meanabs
        return (0.0, edge) if self.sign > 0 else (-edge, 0.0)


@dataclass(frozen=True)
class Laplace(NoiseSpec):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.loc) and self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"invalid Laplace: loc={self.loc}, scale={self.scale}")

    def sample(self, rng, size=None):
        return _out(rng.laplace(self.loc, self.scale, size), size)

    def log_density(self, v):
        return -np.abs(np.asarray(v, dtype=float) - self.loc) / self.scale - math.log(2.0 * self.scale)

    def cdf(self, v):
        u = (np.asarray(v, dtype=float) - self.loc) / self.scale
        return np.where(u < 0, 0.5 * np.exp(np.minimum(u, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(u, 0.0)))

    def expectation(self):
        return self.loc

    def variance(self):
        return 2.0 * self.scale**2

    def support(self):
        return (self.loc - 40.0 * self.scale, self.loc + 40.0 * self.scale)


@dataclass(frozen=True)
class PointMass(NoiseSpec):
    """All mass at ``value``.

    ``log_density`` is taken with respect to counting measure: 0 at the atom
    and -inf elsewhere.
    """

    value: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"PointMass value must be finite, got {self.value}")

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    def log_density(self, v):
        return np.where(np.asarray(v, dtype=float) == self.value, 0.0, -np.inf)

    def cdf(self, v):
        return np.where(np.asarray(v, dtype=float) >= self.value, 1.0, 0.0)

    def expectation(self):
        return self.value

    def variance(self):
        return 0.0

    def support(self):
        return (self.value, self.value)

    @property
    def is_degenerate(self):
        return True


@dataclass(frozen=True)
class Mixture(NoiseSpec):
    weights: tuple[float, ...]
    components: tuple[NoiseSpec, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.components) or len(self.weights) == 0:
            raise ValueError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must be nonnegative and sum to 1, got {self.weights}")
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        object.__setattr__(self, "components", tuple(self.components))

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        labels = rng.choice(len(self.components), size=n, p=np.asarray(self.weights))
        out = np.empty(n)
        for k, comp in enumerate(self.components):
            hit = labels == k
            if hit.any():
                out[hit] = comp.sample(rng, int(hit.sum()))
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def log_density(self, v):
        v = np.asarray(v, dtype=float)
        terms = []
        for w, comp in zip(self.weights, self.components):
            if w > 0:
                terms.append(math.log(w) + comp.log_density(v))
        return special.logsumexp(np.stack(terms), axis=0)

    def cdf(self, v):
        return sum(w * c.cdf(v) for w, c in zip(self.weights, self.components))

    def expectation(self):
        return sum(w * c.expectation() for w, c in zip(self.weights, self.components))

    def variance(self):
        second = sum(w * (c.variance() + c.expectation() ** 2) for w, c in zip(self.weights, self.components))
        return second - self.expectation() ** 2

    def support(self):
        lo = min(c.support()[0] for c in self.components)
        hi = max(c.support()[1] for c in self.components)
        return (lo, hi)

    @property
    def is_degenerate(self):
        return all(c.is_degenerate for c in self.components)


def sample(spec: NoiseSpec, rng: np.random.Generator, size=None):
    return spec.sample(rng, size)


def log_density(spec: NoiseSpec, v):
    return spec.log_density(v)


def noise_from_dict(d: Mapping[str, Any] | None) -> NoiseSpec | None:
    """Build a spec from a tagged record such as ``{"type": "gaussian", "mean": 0, "sd": 0.8}``.

    ``None`` and ``{"type": "none"}`` both mean "no noise" and return None.
    """
    if d is None:
        return None
    kind = str(d["type"]).lower()
    if kind == "none":
        return None
    if kind == "gaussian":
        return Gaussian(float(d.get("mean", 0.0)), float(d["sd"]))
    if kind == "uniform":
        return Uniform(float(d["a"]), float(d["b"]))
    if kind == "laplace":
        return Laplace(float(d.get("loc", 0.0)), float(d["scale"]))
    if kind in ("signed_exponential", "signedexponential"):
        return SignedExponential(float(d.get("rate", 1.0)), float(d.get("scale", 1.0)), int(d.get("sign", 1)))
    if kind in ("point_mass", "pointmass"):
        return PointMass(float(d.get("value", 0.0)))
    if kind == "mixture":
        comps = tuple(noise_from_dict(c) for c in d["components"])
        if any(c is None for c in comps):
            raise ValueError("mixture components cannot be 'none'")
        return Mixture(tuple(float(w) for w in d["weights"]), comps)
    raise ValueError(f"unknown noise type {d['type']!r}")


def noise_to_dict(spec: NoiseSpec | None) -> dict[str, Any]:
    if spec is None:
        return {"type": "none"}
    if isinstance(spec, Gaussian):
        return {"type": "gaussian", "mean": spec.mean, "sd": spec.sd}
    if isinstance(spec, Uniform):
        return {"type": "uniform", "a": spec.a, "b": spec.b}
    if isinstance(spec, Laplace):
        return {"type": "laplace", "loc": spec.loc, "scale": spec.scale}
    if isinstance(spec, SignedExponential):
        return {"type": "signed_exponential", "rate": spec.rate, "scale": spec.scale, "sign": spec.sign}
    if isinstance(spec, PointMass):
        return {"type": "point_mass", "value": spec.value}
    if isinstance(spec, Mixture):
        return {
            "type": "mixture",
            "weights": list(spec.weights),
            "components": [noise_to_dict(c) for c in spec.components],
        }
    raise TypeError(f"not a noise spec: {spec!r}")


def as_noise(spec: NoiseSpec | None) -> NoiseSpec:
    """Treat ``None`` as a point mass at zero."""
    return PointMass(0.0) if spec is None else spec


def component_labels(spec: Mixture, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw component labels the same way :meth:`Mixture.sample` does (used by tests)."""
    return rng.choice(len(spec.components), size=n, p=np.asarray(spec.weights))
