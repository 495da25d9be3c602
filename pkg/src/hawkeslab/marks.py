"""Mark distributions for offspring sizes ``x`` and durations ``y``.

Each law lives on ``[0, inf)`` and exposes analytic moments, the survival
function ``S(z) = P(Y > z)`` and its first two integrals

    G(u) = int_0^u S(z) dz,        H(u) = int_0^u z S(z) dz,

which the renewal solver and the remainder diagnostics consume.  Moments
that do not exist are reported as ``math.inf`` rather than raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import gammainc, gammaincc


@dataclass(frozen=True)
class Deterministic:
    """Point mass at ``value >= 0``."""

    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("point mass must be nonnegative")

    def mean(self) -> float:
        return self.value

    def second_moment(self) -> float:
        return self.value ** 2

    def fourth_moment(self) -> float:
        return self.value ** 4

    def survival(self, z):
        return np.where(np.asarray(z, dtype=float) < self.value, 1.0, 0.0)

    def integrated_survival(self, u):
        return np.minimum(np.asarray(u, dtype=float), self.value)

    def integrated_t_survival(self, u):
        return np.minimum(np.asarray(u, dtype=float), self.value) ** 2 / 2.0

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def to_dict(self):
        return {"kind": "deterministic", "value": self.value}


@dataclass(frozen=True)
class Exponential:
    """Exponential law with ``rate > 0`` (mean ``1/rate``)."""

    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def mean(self) -> float:
        return 1.0 / self.rate

    def second_moment(self) -> float:
        return 2.0 / self.rate ** 2

    def fourth_moment(self) -> float:
        return 24.0 / self.rate ** 4

    def survival(self, z):
        return np.exp(-self.rate * np.asarray(z, dtype=float))

    def integrated_survival(self, u):
        return (1.0 - np.exp(-self.rate * np.asarray(u, dtype=float))) / self.rate

    def integrated_t_survival(self, u):
        ru = self.rate * np.asarray(u, dtype=float)
        return (1.0 - (1.0 + ru) * np.exp(-ru)) / self.rate ** 2

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Gamma:
    """Gamma law with ``shape, rate > 0`` (mean ``shape/rate``)."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")

    def mean(self) -> float:
        return self.shape / self.rate

    def second_moment(self) -> float:
        return self.shape * (self.shape + 1.0) / self.rate ** 2

    def fourth_moment(self) -> float:
        k = self.shape
        return k * (k + 1.0) * (k + 2.0) * (k + 3.0) / self.rate ** 4

    def survival(self, z):
        return gammaincc(self.shape, self.rate * np.asarray(z, dtype=float))

    def integrated_survival(self, u):
        # int_0^u Q(k, r z) dz = u Q(k, r u) + (k / r) P(k + 1, r u)
        u = np.asarray(u, dtype=float)
        ru = self.rate * u
        return u * gammaincc(self.shape, ru) + (self.shape / self.rate) * gammainc(self.shape + 1.0, ru)

    def integrated_t_survival(self, u):
        u = np.asarray(u, dtype=float)
        ru = self.rate * u
        k, r = self.shape, self.rate
        return (u ** 2 / 2.0) * gammaincc(k, ru) + (k * (k + 1.0) / (2.0 * r ** 2)) * gammainc(k + 2.0, ru)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def to_dict(self):
        return {"kind": "gamma", "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class Uniform:
    """Uniform law on ``[lo, hi]`` with ``0 <= lo < hi``."""

    lo: float
    hi: float

    def __post_init__(self):
        if self.lo < 0 or self.hi <= self.lo:
            raise ValueError("need 0 <= lo < hi")

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def second_moment(self) -> float:
        return (self.hi ** 3 - self.lo ** 3) / (3.0 * (self.hi - self.lo))

    def fourth_moment(self) -> float:
        return (self.hi ** 5 - self.lo ** 5) / (5.0 * (self.hi - self.lo))

    def survival(self, z):
        z = np.asarray(z, dtype=float)
        return np.clip((self.hi - z) / (self.hi - self.lo), 0.0, 1.0)

    def integrated_survival(self, u):
        u = np.asarray(u, dtype=float)
        w = self.hi - self.lo
        uc = np.clip(u, self.lo, self.hi)
        mid = self.lo + (w ** 2 - (self.hi - uc) ** 2) / (2.0 * w)
        return np.where(u <= self.lo, u, mid)

    def integrated_t_survival(self, u):
        u = np.asarray(u, dtype=float)
        w = self.hi - self.lo
        uc = np.clip(u, self.lo, self.hi)
        mid = self.lo ** 2 / 2.0 + (self.hi * (uc ** 2 - self.lo ** 2) / 2.0 - (uc ** 3 - self.lo ** 3) / 3.0) / w
        return np.where(u <= self.lo, u ** 2 / 2.0, mid)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lo, self.hi, size)

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ParetoTail:
    """Lomax law whose density is regularly varying with index ``-3 - tail_index``.

    ``survival(z) = (scale / (scale + z)) ** (2 + tail_index)``; any
    ``tail_index > 0`` gives a finite second moment, while the fourth
    moment is finite only for ``tail_index > 2``.
    """

    tail_index: float
    scale: float

    def __post_init__(self):
        if self.tail_index <= 0 or self.scale <= 0:
            raise ValueError("tail_index and scale must be positive")

    @property
    def _alpha(self) -> float:
        return 2.0 + self.tail_index

    def _raw_moment(self, n: int) -> float:
        a = self._alpha
        if a <= n:
            return math.inf
        out = math.factorial(n) * self.scale ** n
        for i in range(1, n + 1):
            out /= a - i
        return out

    def mean(self) -> float:
        return self._raw_moment(1)

    def second_moment(self) -> float:
        return self._raw_moment(2)

    def fourth_moment(self) -> float:
        return self._raw_moment(4)

    def survival(self, z):
        z = np.asarray(z, dtype=float)
        return (self.scale / (self.scale + z)) ** self._alpha

    def integrated_survival(self, u):
        u = np.asarray(u, dtype=float)
        a, s = self._alpha, self.scale
        return (s / (a - 1.0)) * (1.0 - (s / (s + u)) ** (a - 1.0))

    def integrated_t_survival(self, u):
        u = np.asarray(u, dtype=float)
        a, s = self._alpha, self.scale
        term1 = ((s + u) ** (2.0 - a) - s ** (2.0 - a)) / (2.0 - a)
        term2 = s * ((s + u) ** (1.0 - a) - s ** (1.0 - a)) / (1.0 - a)
        return s ** a * (term1 - term2)

    def sample(self, rng: np.random.Generator, size=None):
        return self.scale * rng.pareto(self._alpha, size)

    def to_dict(self):
        return {"kind": "pareto_tail", "tail_index": self.tail_index, "scale": self.scale}


MarkDistribution = Union[Deterministic, Exponential, Gamma, Uniform, ParetoTail]

_KINDS = {
    "deterministic": Deterministic,
    "exponential": Exponential,
    "gamma": Gamma,
    "uniform": Uniform,
    "pareto_tail": ParetoTail,
}


def distribution_from_dict(spec: dict) -> MarkDistribution:
    """Build a distribution from a tagged record, e.g. ``{"kind": "exponential", "rate": 1.0}``."""
    spec = dict(spec)
    try:
        kind = spec.pop("kind")
        cls = _KINDS[kind]
    except KeyError as exc:
        raise ValueError(f"unknown distribution kind: {exc}") from None
    return cls(**spec)


def moments(dist: MarkDistribution) -> tuple[float, float, float]:
    """``(mean, E Z^2, E Z^4)``; infinite moments come back as ``math.inf``."""
    return dist.mean(), dist.second_moment(), dist.fourth_moment()


def sample(dist: MarkDistribution, rng: np.random.Generator, size=None):
    """Draw from ``dist``; a pure function of the generator state."""
    return dist.sample(rng, size)


def truncated_mean(dist: MarkDistribution, cap: float) -> float:
    """``E(Z 1_{Z <= cap})``, from the survival-function identity ``G(c) - c S(c)``."""
    return float(dist.integrated_survival(cap) - cap * dist.survival(cap))


def duration_scale(y_dist: MarkDistribution) -> float:
    """``m = E(Y^2) / 2``, the scale constant of the limit kernel."""
    m2 = y_dist.second_moment()
    if not math.isfinite(m2):
        raise ValueError("duration law must have a finite second moment")
    return 0.5 * m2


@dataclass(frozen=True)
class MarkPairConfig:
    """The mark laws of one arrival stream: offspring size ``x`` and duration ``y``."""

    x_dist: MarkDistribution
    y_dist: MarkDistribution

    def to_dict(self):
        return {"x": self.x_dist.to_dict(), "y": self.y_dist.to_dict()}

    @classmethod
    def from_dict(cls, spec: dict) -> "MarkPairConfig":
        return cls(distribution_from_dict(spec["x"]), distribution_from_dict(spec["y"]))


@dataclass(frozen=True)
class ValidationResult:
    passed: bool
    reasons: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.passed


_MEAN_TOL = 1e-12


def validate_assumption_a(cfg: MarkPairConfig) -> ValidationResult:
    """Single-stream normalization: ``E(X) = E(Y) = 1`` and finite second moments."""
    reasons = []
    mx, m2x, _ = moments(cfg.x_dist)
    my, m2y, _ = moments(cfg.y_dist)
    if abs(mx - 1.0) > _MEAN_TOL:
        reasons.append(f"E(X)={mx:.12g} != 1")
    if abs(my - 1.0) > _MEAN_TOL:
        reasons.append(f"E(Y)={my:.12g} != 1")
    if not math.isfinite(m2x):
        reasons.append("E(X^2) is infinite")
    if not math.isfinite(m2y):
        reasons.append("E(Y^2) is infinite")
    return ValidationResult(not reasons, tuple(reasons))


def _tail_note(y_dist: MarkDistribution, label: str) -> str:
    if isinstance(y_dist, ParetoTail):
        return f"{label}: regularly varying duration density (index {-3.0 - y_dist.tail_index:g})"
    return f"{label}: {type(y_dist).__name__} duration tail is lighter than regularly varying; accepted"


def validate_assumption_bc(cfgs: list[MarkPairConfig]) -> ValidationResult:
    """Four-stream market conditions: equal ``E(X_i)``, identical ``Y`` laws, finite variances.

    The duration-tail shape condition is reported, never enforced: lighter
    tails only shrink the truncation remainders it controls.
    """
    if len(cfgs) != 4:
        raise ValueError("exactly four stream configurations required")
    reasons = []
    x_means = [cfg.x_dist.mean() for cfg in cfgs]
    if max(x_means) - min(x_means) > _MEAN_TOL:
        reasons.append(f"E(X_i) differ: {x_means}")
    y0 = cfgs[0].y_dist
    for i, cfg in enumerate(cfgs[1:], start=2):
        if cfg.y_dist != y0:
            reasons.append(f"Y laws differ: stream 1 is {y0}, stream {i} is {cfg.y_dist}")
    for i, cfg in enumerate(cfgs, start=1):
        if not math.isfinite(cfg.x_dist.second_moment()):
            reasons.append(f"Var(X_{i}) is infinite")
    if not math.isfinite(y0.second_moment()):
        reasons.append("Var(Y_1) is infinite")
    notes = tuple(_tail_note(cfg.y_dist, f"stream {i}") for i, cfg in enumerate(cfgs, start=1))
    return ValidationResult(not reasons, tuple(reasons), notes)
