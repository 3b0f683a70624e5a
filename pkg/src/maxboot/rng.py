"""Keyed random streams and the bootstrap multiplier laws.

Every unit of parallel work gets its own ``numpy.random.Generator`` built
from a Philox (counter-based) bit generator whose key is derived from
``(seed, trial, purpose, *extra)`` through ``SeedSequence``.  Results
therefore never depend on which thread ran which trial.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from math import comb, exp, prod, sqrt

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError


class Purpose(enum.IntEnum):
    DATA = 0
    LEVEL1 = 1
    LEVEL2 = 2
    GAUSSIAN_REF = 3


@dataclass(frozen=True)
class StreamKey:
    seed: int
    trial: int
    purpose: Purpose

    def generator(self, *extra: int) -> np.random.Generator:
        """Fresh generator for this key; ``extra`` selects a nested substream."""
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.trial), int(self.purpose), *(int(e) for e in extra)),
        )
        return np.random.Generator(np.random.Philox(ss))


def std_beta_params(nu: float) -> tuple[float, float]:
    """Beta shapes (a, b) with a + b = nu whose standardized law has E[w^3] = 1."""
    if not nu > 0:
        raise ValidationError(f"nu must be positive, got {nu!r}")
    c = nu * nu + 20.0 * nu + 20.0
    root = (2.0 + nu) * sqrt(c)
    return nu * (c - root) / (2.0 * c), nu * (c + root) / (2.0 * c)


def beta_skewness(a: float, b: float) -> float:
    return 2.0 * (b - a) * sqrt(a + b + 1.0) / ((a + b + 2.0) * sqrt(a * b))


def beta_raw_moment(a: float, b: float, k: int) -> float:
    """E[eta^k] for eta ~ Beta(a, b)."""
    out = 1.0
    for i in range(k):
        out *= (a + i) / (a + b + i)
    return out


_GOLDEN = (sqrt(5.0) + 1.0) / 2.0
_MAMMEN_HI = _GOLDEN
_MAMMEN_LO = -(sqrt(5.0) - 1.0) / 2.0
_MAMMEN_P = (sqrt(5.0) - 1.0) / (2.0 * sqrt(5.0))


@dataclass(frozen=True)
class WeightLaw:
    """Multiplier law with mean 0 and variance 1.

    ``kind`` is one of ``gaussian``, ``mammen``, ``rademacher`` or ``beta``;
    the latter is the standardized Beta(a, b) law with a + b = ``nu`` and
    third moment one.
    """

    kind: str
    nu: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "mammen", "rademacher", "beta"):
            raise ValidationError(f"unknown weight law {self.kind!r}")
        if self.kind == "beta":
            if self.nu is None or not self.nu > 0:
                raise ValidationError("standardized beta weights need nu > 0")
        elif self.nu is not None:
            raise ValidationError(f"{self.kind} weights take no parameter")

    @classmethod
    def gaussian(cls) -> WeightLaw:
        return cls("gaussian")

    @classmethod
    def mammen(cls) -> WeightLaw:
        return cls("mammen")

    @classmethod
    def rademacher(cls) -> WeightLaw:
        return cls("rademacher")

    @classmethod
    def std_beta(cls, nu: float) -> WeightLaw:
        return cls("beta", float(nu))

    @classmethod
    def parse(cls, text: str) -> WeightLaw:
        name, _, arg = text.strip().lower().partition(":")
        if name == "beta":
            try:
                return cls.std_beta(float(arg))
            except ValueError:
                raise ValidationError(f"bad beta weight spec {text!r}") from None
        if arg:
            raise ValidationError(f"bad weight spec {text!r}")
        return cls(name)

    @property
    def label(self) -> str:
        return f"beta:{self.nu:g}" if self.kind == "beta" else self.kind

    @cached_property
    def beta_shapes(self) -> tuple[float, float]:
        if self.kind != "beta":
            raise ValidationError(f"{self.kind} weights have no beta shapes")
        return std_beta_params(self.nu)

    @cached_property
    def _beta_loc_scale(self) -> tuple[float, float]:
        a, b = self.beta_shapes
        mu = a / (a + b)
        var = a * b / ((a + b) ** 2 * (a + b + 1.0))
        return mu, sqrt(var)

    @property
    def gamma(self) -> float:
        """Third moment E[w^3]."""
        return weight_moments(self)[2]


def weight_raw_moment(law: WeightLaw, k: int) -> float:
    """Exact E[w^k]."""
    if k == 0:
        return 1.0
    if law.kind == "gaussian":
        return 0.0 if k % 2 else float(prod(range(k - 1, 0, -2)))
    if law.kind == "rademacher":
        return 0.0 if k % 2 else 1.0
    if law.kind == "mammen":
        return _MAMMEN_P * _MAMMEN_HI**k + (1.0 - _MAMMEN_P) * _MAMMEN_LO**k
    a, b = law.beta_shapes
    mu, sd = law._beta_loc_scale
    # E[((eta - mu)/sd)^k] by binomial expansion of raw beta moments
    s = sum(comb(k, i) * beta_raw_moment(a, b, i) * (-mu) ** (k - i) for i in range(k + 1))
    return s / sd**k


def weight_moments(law: WeightLaw) -> tuple[float, float, float]:
    """Exact first three moments (m1, m2, m3); m1 = 0 and m2 = 1 by construction."""
    if law.kind in ("gaussian", "rademacher"):
        return 0.0, 1.0, 0.0
    if law.kind == "mammen":
        return 0.0, 1.0, 1.0
    a, b = law.beta_shapes
    return 0.0, 1.0, beta_skewness(a, b)


def _log_gamma_draws(shape: float, gen: np.random.Generator, size) -> np.ndarray:
    # shape < 1: G(shape) = G(shape + 1) * U**(1/shape), kept in log space so
    # tiny shapes cannot underflow to zero
    if shape < 1.0:
        return np.log(gen.standard_gamma(shape + 1.0, size)) + np.log(gen.random(size)) / shape
    return np.log(gen.standard_gamma(shape, size))


def sample_gamma(shape: float, scale: float, gen: np.random.Generator, size=None):
    """Gamma(shape, scale) draws; valid for every positive shape."""
    if not (shape > 0 and scale > 0):
        raise ValidationError(f"gamma parameters must be positive, got shape={shape!r}, scale={scale!r}")
    return scale * gen.standard_gamma(shape, size)


def _johnk_beta(a: float, b: float, gen: np.random.Generator, size) -> np.ndarray:
    # Johnk: U^(1/a) / (U^(1/a) + V^(1/b)) given U^(1/a) + V^(1/b) <= 1, in log space;
    # acceptance is Gamma(a+1) Gamma(b+1) / Gamma(a+b+1) >= pi/4 when a + b <= 1
    total = int(np.prod(size, dtype=np.int64))
    out = np.empty(total)
    accept = exp(gammaln(a + 1.0) + gammaln(b + 1.0) - gammaln(a + b + 1.0))
    filled = 0
    while filled < total:
        m = int((total - filled) / accept * 1.01) + 16
        x = np.log(gen.random(m))
        x /= a
        y = np.log(gen.random(m))
        y /= b
        s = np.logaddexp(x, y)
        keep = s <= 0.0
        v = np.exp(x[keep] - s[keep])
        k = min(v.size, total - filled)
        out[filled : filled + k] = v[:k]
        filled += k
    return out.reshape(size)


def sample_beta(a: float, b: float, gen: np.random.Generator, size) -> np.ndarray:
    """Beta(a, b) draws.

    Small shapes (a + b <= 1) use Johnk's rejection method; otherwise
    G_a / (G_a + G_b) evaluated in log space.
    """
    if a + b <= 1.0:
        return _johnk_beta(a, b, gen, size)
    la = _log_gamma_draws(a, gen, size)
    lb = _log_gamma_draws(b, gen, size)
    return 1.0 / (1.0 + np.exp(lb - la))


def sample_weights(law: WeightLaw, gen: np.random.Generator, size) -> np.ndarray:
    """Array of i.i.d. multiplier draws."""
    if law.kind == "gaussian":
        return gen.standard_normal(size)
    if law.kind == "rademacher":
        return gen.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0
    if law.kind == "mammen":
        return np.where(gen.random(size) < _MAMMEN_P, _MAMMEN_HI, _MAMMEN_LO)
    a, b = law.beta_shapes
    mu, sd = law._beta_loc_scale
    eta = sample_beta(a, b, gen, size)
    eta -= mu
    eta /= sd
    return eta


def sample_weight(law: WeightLaw, gen: np.random.Generator) -> float:
    return float(sample_weights(law, gen, 1)[0])
