"""Data-generating processes: Gaussian copulas with gamma marginals and the one-factor model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.signal import lfilter

from .errors import ValidationError
from .model import CovarianceSpec, DataSet
from .rng import sample_gamma


@dataclass(frozen=True)
class CopulaConfig:
    corr: CovarianceSpec
    n: int
    marginal_shape: float = 1.0
    marginal_scale: float = 1.0
    symmetrize: bool = False

    def __post_init__(self) -> None:
        if not self.corr.unit_diagonal:
            raise ValidationError("copula parameter matrix must have a unit diagonal")
        if self.n < 1:
            raise ValidationError(f"n must be positive, got {self.n}")
        if not (self.marginal_shape > 0 and self.marginal_scale > 0):
            raise ValidationError("gamma marginal parameters must be positive")

    @property
    def d(self) -> int:
        return self.corr.d


SCALAR_LAWS = ("gaussian", "exp", "rademacher")


def _standardized_scalar(law: str, gen: np.random.Generator, size) -> np.ndarray:
    if law == "gaussian":
        return gen.standard_normal(size)
    if law == "exp":
        return gen.standard_exponential(size) - 1.0
    if law == "rademacher":
        return gen.integers(0, 2, size=size) * 2.0 - 1.0
    raise ValidationError(f"unknown scalar law {law!r}")


def scalar_third_moment(law: str) -> float:
    return {"gaussian": 0.0, "exp": 2.0, "rademacher": 0.0}[law]


@dataclass(frozen=True)
class FactorConfig:
    """Rows distributed as sqrt(rho) U 1_d + sqrt(1 - rho) V."""

    rho: float
    d: int
    n: int
    u_law: str = "exp"
    v_law: str = "gaussian"

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"factor loading rho must lie in [0, 1), got {self.rho}")
        if self.d < 1 or self.n < 1:
            raise ValidationError("n and d must be positive")
        for law in (self.u_law, self.v_law):
            if law not in SCALAR_LAWS:
                raise ValidationError(f"unknown scalar law {law!r}")


def sample_corr_gaussian(corr: CovarianceSpec, gen: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draws of Z ~ N(0, R); shape (d,) when ``size`` is None else (size, d).

    Equicorrelation and AR(1) use O(d) constructions per draw.
    """
    m = 1 if size is None else int(size)
    d = corr.d
    if corr.kind == "identity":
        z = corr.sigma * gen.standard_normal((m, d))
    elif corr.kind == "equicorrelation":
        zeta = gen.standard_normal((m, 1))
        eps = gen.standard_normal((m, d))
        z = corr.sigma * (np.sqrt(corr.rho) * zeta + np.sqrt(1.0 - corr.rho) * eps)
    elif corr.kind == "ar1":
        eps = gen.standard_normal((m, d))
        eps[:, 1:] *= np.sqrt(1.0 - corr.rho**2)
        z = lfilter([1.0], [1.0, -corr.rho], eps, axis=1)
    else:
        eps = gen.standard_normal((m, d))
        z = eps @ corr.cholesky.T
    return z[0] if size is None else z


def gamma_quantile(shape: float, p):
    """Quantile function of Gamma(shape, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValidationError("gamma quantile needs p in (0, 1)")
    if shape == 1.0:
        out = -np.log1p(-p)
    elif shape == 0.5:
        # P(G <= x) = erf(sqrt(x)) for shape 1/2
        out = special.erfinv(p) ** 2
    else:
        out = special.gammaincinv(shape, p)
    return out if out.ndim else float(out)


def gamma_quantile_of_normal(shape: float, z: np.ndarray) -> np.ndarray:
    """F^{-1}(Phi(z)) for Gamma(shape, 1), accurate in both tails."""
    z = np.asarray(z, dtype=np.float64)
    if shape == 1.0:
        # -log(1 - Phi(z)) = -log Phi(-z)
        return -special.log_ndtr(-z)
    if shape == 0.5:
        # erf(sqrt(x)) = Phi(z); invert through erfc on the upper side
        upper = z > 0
        return np.where(upper, special.erfcinv(special.ndtr(-np.abs(z))), special.erfinv(special.ndtr(-np.abs(z)))) ** 2
    upper = z > 0
    out = np.empty_like(z)
    out[~upper] = special.gammaincinv(shape, special.ndtr(z[~upper]))
    out[upper] = special.gammainccinv(shape, special.ndtr(-z[upper]))
    return out


def _copula_marginals(cfg: CopulaConfig, z: np.ndarray) -> np.ndarray:
    return cfg.marginal_scale * gamma_quantile_of_normal(cfg.marginal_shape, z)


def gen_copula(
    cfg: CopulaConfig,
    gen: np.random.Generator,
    latent: np.ndarray | None = None,
    latent_copy: np.ndarray | None = None,
) -> DataSet:
    """Sample n centered rows from the Gaussian copula model.

    ``latent`` (and ``latent_copy`` in symmetric mode) inject the Gaussian
    draws directly instead of sampling them.
    """
    shape_ = (cfg.n, cfg.d)
    direct = latent is None and cfg.corr.kind == "identity"

    def draw_u(z):
        if z is not None:
            return _copula_marginals(cfg, np.broadcast_to(z, shape_))
        if direct:
            # independent coordinates: the quantile transform is only a detour
            return sample_gamma(cfg.marginal_shape, cfg.marginal_scale, gen, shape_)
        return _copula_marginals(cfg, sample_corr_gaussian(cfg.corr, gen, cfg.n))

    u = draw_u(latent)
    if cfg.symmetrize:
        x = u - draw_u(latent_copy)
    else:
        x = u - cfg.marginal_shape * cfg.marginal_scale
    return DataSet(x)


def gen_factor(cfg: FactorConfig, gen: np.random.Generator) -> DataSet:
    u = _standardized_scalar(cfg.u_law, gen, (cfg.n, 1))
    v = _standardized_scalar(cfg.v_law, gen, (cfg.n, cfg.d))
    return DataSet(np.sqrt(cfg.rho) * u + np.sqrt(1.0 - cfg.rho) * v)
