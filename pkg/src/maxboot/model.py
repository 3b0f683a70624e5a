"""Core domain types: covariance structures, data sets and third-moment sums."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
from scipy.linalg import lapack

from .errors import ValidationError

CovKind = Literal["identity", "equicorrelation", "ar1", "dense"]

PD_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Structured covariance matrix.

    Structured kinds keep enough information for closed-form or O(d) code
    paths; ``dense`` carries an explicit validated matrix.  Use the
    classmethod constructors rather than the raw initializer.
    """

    kind: CovKind
    d: int
    rho: float = 0.0
    sigma: float = 1.0
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError(f"dimension must be a positive integer, got {self.d!r}")
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma!r}")
        if self.kind == "identity":
            pass
        elif self.kind == "equicorrelation":
            if not 0.0 <= self.rho < 1.0:
                raise ValidationError(f"equicorrelation rho must lie in [0, 1), got {self.rho!r}")
        elif self.kind == "ar1":
            if not -1.0 < self.rho < 1.0:
                raise ValidationError(f"AR(1) rho must lie in (-1, 1), got {self.rho!r}")
        elif self.kind == "dense":
            m = self.matrix
            if m is None or m.shape != (self.d, self.d):
                raise ValidationError("dense covariance needs a d x d matrix")
            if not np.all(np.isfinite(m)):
                raise ValidationError("dense covariance has non-finite entries")
            if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(m).max())):
                raise ValidationError("dense covariance is not symmetric")
            if np.any(np.diag(m) <= 0):
                raise ValidationError("dense covariance needs a positive diagonal")
            _check_positive_definite(m)
        else:
            raise ValidationError(f"unknown covariance kind {self.kind!r}")

    # constructors -------------------------------------------------------
    @classmethod
    def identity(cls, d: int, sigma: float = 1.0) -> CovarianceSpec:
        return cls("identity", int(d), 0.0, float(sigma))

    @classmethod
    def equicorrelation(cls, d: int, rho: float, sigma: float = 1.0) -> CovarianceSpec:
        return cls("equicorrelation", int(d), float(rho), float(sigma))

    @classmethod
    def ar1(cls, d: int, rho: float) -> CovarianceSpec:
        return cls("ar1", int(d), float(rho), 1.0)

    @classmethod
    def dense(cls, matrix) -> CovarianceSpec:
        m = np.array(matrix, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"dense covariance must be square, got shape {m.shape}")
        return cls("dense", m.shape[0], 0.0, 1.0, _readonly(m))

    # derived quantities -------------------------------------------------
    @property
    def is_exchangeable(self) -> bool:
        return self.kind in ("identity", "equicorrelation") or self.d == 1

    @property
    def unit_diagonal(self) -> bool:
        if self.kind == "dense":
            return bool(np.allclose(np.diag(self.matrix), 1.0))
        return self.sigma == 1.0

    @property
    def scale(self) -> float:
        """Common marginal standard deviation (structured kinds only)."""
        if self.kind == "dense":
            raise ValidationError("dense covariance has no common scale")
        return self.sigma

    @property
    def factor_rho(self) -> float:
        """Common correlation of an exchangeable spec (0 for identity)."""
        if self.kind == "identity" or self.d == 1:
            return 0.0
        if self.kind == "equicorrelation":
            return self.rho
        raise ValidationError(f"{self.kind} covariance is not exchangeable")

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        d, s2 = self.d, self.sigma**2
        if self.kind == "identity":
            return np.full(d, s2)
        if self.kind == "equicorrelation":
            ev = np.full(d, s2 * (1.0 - self.rho))
            ev[-1] = s2 * (1.0 + (d - 1) * self.rho)
            return np.sort(ev)
        return np.linalg.eigvalsh(materialize_cov(self))

    @property
    def sigma_star(self) -> float:
        """Square root of the smallest eigenvalue."""
        if self.kind == "identity":
            return self.sigma
        if self.kind == "equicorrelation":
            if self.d == 1:
                return self.sigma
            return self.sigma * np.sqrt(1.0 - self.rho)
        return float(np.sqrt(self.eigenvalues[0]))

    @cached_property
    def cholesky(self) -> np.ndarray:
        return _readonly(np.linalg.cholesky(materialize_cov(self)))

    @cached_property
    def precision(self) -> np.ndarray:
        return _readonly(np.linalg.inv(materialize_cov(self)))

    def scaled(self, c: float) -> CovarianceSpec:
        """Covariance of ``c * Z`` when this spec is the covariance of ``Z``."""
        c = float(c)
        if self.kind == "identity":
            return CovarianceSpec.identity(self.d, abs(c) * self.sigma)
        if self.kind == "equicorrelation":
            return CovarianceSpec.equicorrelation(self.d, self.rho, abs(c) * self.sigma)
        return CovarianceSpec.dense(c * c * materialize_cov(self))


def _check_positive_definite(m: np.ndarray) -> None:
    # pivoted Cholesky; the smallest pivot bounds the smallest eigenvalue from above
    c, piv, rank, info = lapack.dpstrf(np.array(m, order="F"), tol=-1.0)
    diag = np.diag(c)[:rank]
    if info != 0 or rank < m.shape[0] or diag.min() ** 2 <= PD_TOL * max(1.0, np.abs(m).max()):
        raise ValidationError("dense covariance is not positive definite")


def materialize_cov(spec: CovarianceSpec) -> np.ndarray:
    """Return the full d x d covariance matrix."""
    d, s2 = spec.d, spec.sigma**2
    if spec.kind == "identity":
        return s2 * np.eye(d)
    if spec.kind == "equicorrelation":
        m = np.full((d, d), spec.rho)
        np.fill_diagonal(m, 1.0)
        return s2 * m
    if spec.kind == "ar1":
        idx = np.arange(d)
        return spec.rho ** np.abs(idx[:, None] - idx[None, :]).astype(np.float64)
    return np.array(spec.matrix, copy=True)


@dataclass(frozen=True, eq=False)
class DataSet:
    """An n x d matrix of observations, one row per observation."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"data must be a non-empty n x d matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("data contains non-finite entries")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @cached_property
    def col_means(self) -> np.ndarray:
        return _readonly(self.values.mean(axis=0))

    @cached_property
    def centered(self) -> np.ndarray:
        return _readonly(self.values - self.col_means)


@dataclass(frozen=True)
class ThirdMomentSummary:
    """Index-pattern sums of an (average) third-moment tensor.

    ``s1`` sums E[X_j^3], ``s2`` sums E[X_j^2 X_k] over j != k and ``s3``
    sums E[X_j X_k X_l] over pairwise distinct indices.
    """

    s1: float
    s2: float
    s3: float
    n: int
    d: int

    @property
    def total(self) -> float:
        """Contraction with the all-ones tensor, E[(sum_j X_j)^3]."""
        return self.s1 + 3.0 * self.s2 + self.s3

    def is_zero(self) -> bool:
        return self.s1 == 0.0 and self.s2 == 0.0 and self.s3 == 0.0


def third_moment_summary(data: DataSet) -> ThirdMomentSummary:
    """Empirical pattern sums in O(nd) via row-sum identities."""
    x = data.values
    rs = x.sum(axis=1)
    s1 = float(np.mean(np.sum(x**3, axis=1)))
    s2 = float(np.mean(np.sum(x * x, axis=1) * rs)) - s1
    s3 = float(np.mean(rs**3)) - 3.0 * s2 - s1
    return ThirdMomentSummary(s1, s2, s3, data.n, data.d)
