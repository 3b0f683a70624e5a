"""Second-order coverage expansions for max-statistic bootstrap tests.

The predicted rejection probability of the wild bootstrap test
T_n >= c_hat_{1-alpha} is

    alpha - (1 - gamma) Q_n(c) - R_n(alpha),    c = c^G_{1-alpha},

with Q_n the rectangle integral of the Edgeworth correction and R_n the
bootstrap-estimation term built from Psi_alpha, the rectangle integral of
the Hessian of phi_Sigma at c.  Third moments enter either as a
``ThirdMomentSummary`` (exchangeable Sigma), an explicit d^3 array (small
d) or a ``DataSet`` whose rows are contracted on the fly.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log, sqrt

import numpy as np
from scipy import special

from . import gaussnum
from .dgp import gamma_quantile_of_normal
from .errors import CapabilityError, ValidationError
from .gaussnum import RectGradTensor, phi
from .model import CovarianceSpec, DataSet, ThirdMomentSummary, materialize_cov, third_moment_summary
from .rng import StreamKey

DEFAULT_EPS = 0.01

ThirdMoments = ThirdMomentSummary | np.ndarray | DataSet


@dataclass(frozen=True, eq=False)
class ExpansionInputs:
    sigma: CovarianceSpec
    n: int
    gamma: float
    third: ThirdMoments

    def __post_init__(self) -> None:
        if not -2.0 <= self.gamma <= 2.0:
            raise ValidationError(f"weight third moment {self.gamma} outside the sanity window [-2, 2]")
        if self.n < 1:
            raise ValidationError("n must be positive")
        d = self.sigma.d
        t = self.third
        if isinstance(t, ThirdMomentSummary) and t.d != d:
            raise ValidationError("third-moment summary dimension does not match Sigma")
        if isinstance(t, DataSet) and t.d != d:
            raise ValidationError("data dimension does not match Sigma")
        if isinstance(t, np.ndarray) and t.shape != (d, d, d):
            raise ValidationError(f"third-moment tensor must have shape {(d, d, d)}")


@dataclass(frozen=True)
class CoveragePrediction:
    alpha: float
    predicted: float
    q_term: float
    r_term: float
    c_g: float


def _check_level(alpha: float, eps: float) -> None:
    if not eps < alpha < 1.0 - eps:
        raise ValidationError(f"level {alpha} outside ({eps}, {1 - eps})")


def _third_dense(third: ThirdMoments) -> np.ndarray:
    if isinstance(third, np.ndarray):
        return third
    if isinstance(third, DataSet):
        x = third.values
        return np.einsum("ij,ik,il->jkl", x, x, x) / third.n
    raise CapabilityError("pattern third-moment sums cannot be contracted with a non-exchangeable tensor")


def contract_third(third: ThirdMoments, tensor: RectGradTensor) -> float:
    """<T, tensor> for an order-3 rectangle integral."""
    if tensor.order != 3:
        raise ValidationError("contract_third needs an order-3 tensor")
    if tensor.is_pattern and not isinstance(third, np.ndarray):
        s = third if isinstance(third, ThirdMomentSummary) else third_moment_summary(third)
        v = tensor.values
        return float(v[0] * s.s1 + 3.0 * v[1] * s.s2 + v[2] * s.s3)
    return float(np.tensordot(_third_dense(third), tensor.to_dense(), axes=3))


def contract_psi_squared(third: ThirdMoments, psi: RectGradTensor) -> float:
    """<T (x) 1_d, Psi (x) Psi> = sum_{jkl} T_jkl Psi_jk (Psi 1)_l."""
    if psi.order != 2:
        raise ValidationError("Psi must be an order-2 tensor")
    if psi.is_pattern:
        a, b = psi.values
        c = psi.row_sum()
        if isinstance(third, DataSet):
            x = third.values
            sq = np.einsum("ij,ij->i", x, x)
            rs = x.sum(axis=1)
            # per-row <x x^T, Psi> <x, Psi 1>, averaged over rows
            return float(np.mean((a * sq + b * (rs * rs - sq)) * c * rs))
        if isinstance(third, ThirdMomentSummary):
            return float(c * (a * (third.s1 + third.s2) + b * (2.0 * third.s2 + third.s3)))
    p = psi.to_dense()
    ones = p.sum(axis=1)
    if isinstance(third, DataSet):
        x = third.values
        quad = np.einsum("ij,jk,ik->i", x, p, x)
        return float(np.mean(quad * (x @ ones)))
    if isinstance(third, ThirdMomentSummary):
        raise CapabilityError("pattern third-moment sums need an exchangeable Psi")
    return float(np.einsum("jkl,jk,l->", third, p, ones))


def _rect(spec: CovarianceSpec, t: float, r: int, method: str) -> RectGradTensor:
    return gaussnum.rect_grad_integral(spec, t, r, method="auto" if method in ("auto", "mc") else method)


def q_n(inputs: ExpansionInputs, t: float, method: str = "auto") -> float:
    """Q_n(t) = -(1/(6 sqrt n)) <E[X^3], int_{A(t)} grad^3 phi_Sigma>."""
    third = inputs.third
    if isinstance(third, ThirdMomentSummary) and third.is_zero():
        return 0.0
    tensor = _rect(inputs.sigma, t, 3, method)
    return -contract_third(third, tensor) / (6.0 * sqrt(inputs.n))


def psi_alpha(
    sigma: CovarianceSpec,
    alpha: float,
    method: str = "auto",
    draws: int = 20_000,
    stream: StreamKey | None = None,
) -> RectGradTensor:
    """Rectangle integral of the Hessian of phi_Sigma at c^G_{1-alpha}.

    ``method``: ``auto`` (pattern, then dense quadrature, then conditional
    Monte Carlo), ``pattern``, ``dense`` or ``mc``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    t = gaussnum.gmax_quantile(sigma, 1.0 - alpha, stream=stream)
    if method == "mc":
        return gaussnum.conditional_mc_psi(sigma, t, draws, stream)
    try:
        return gaussnum.rect_grad_integral(sigma, t, 2, method=method)
    except CapabilityError:
        if method != "auto":
            raise
    return gaussnum.conditional_mc_psi(sigma, t, draws, stream)


def r_n(
    inputs: ExpansionInputs,
    alpha: float,
    method: str = "auto",
    psi: RectGradTensor | None = None,
    stream: StreamKey | None = None,
) -> float:
    """R_n(alpha) = <T (x) 1, Psi^{(x)2}> / (2 sqrt(n) f_Sigma(c^G_{1-alpha}))."""
    third = inputs.third
    if isinstance(third, ThirdMomentSummary) and third.is_zero():
        return 0.0
    if psi is None:
        psi = psi_alpha(inputs.sigma, alpha, method, stream=stream)
    num = contract_psi_squared(third, psi)
    dens = gaussnum.gmax_density(inputs.sigma, psi.t, stream=stream)
    return num / (2.0 * sqrt(inputs.n) * dens)


def predicted_rejection(
    inputs: ExpansionInputs,
    alpha: float,
    method: str = "auto",
    eps: float = DEFAULT_EPS,
    stream: StreamKey | None = None,
) -> CoveragePrediction:
    """Predicted P(T_n >= c_hat_{1-alpha}) from the second-order expansion."""
    _check_level(alpha, eps)
    psi = psi_alpha(inputs.sigma, alpha, method, stream=stream)
    c = psi.t
    q = 0.0 if inputs.gamma == 1.0 else (1.0 - inputs.gamma) * q_n(inputs, c, method)
    r = r_n(inputs, alpha, method, psi=psi, stream=stream)
    return CoveragePrediction(alpha, alpha - q - r, q, r, c)


def _second_moment_contraction(sample: DataSet, sigma: CovarianceSpec, psi: RectGradTensor) -> float:
    """<mean(X_i X_i^T) - Sigma, psi>."""
    x = sample.values
    if psi.is_pattern:
        a, b = psi.values
        sq = np.einsum("ij,ij->i", x, x)
        rs = x.sum(axis=1)
        tr = sq.mean()
        tot = np.mean(rs * rs)
        cov = materialize_cov(sigma) if sigma.d <= 2000 else None
        if cov is not None:
            tr_s, tot_s = np.trace(cov), cov.sum()
        else:
            s2 = sigma.sigma**2
            tr_s = sigma.d * s2
            tot_s = sigma.d * s2 * (1.0 + (sigma.d - 1) * sigma.factor_rho)
        return float(a * (tr - tr_s) + b * ((tot - tr) - (tot_s - tr_s)))
    m = x.T @ x / sample.n - materialize_cov(sigma)
    return float(np.sum(m * psi.to_dense()))


def cornish_fisher_terms(inputs: ExpansionInputs, sample: DataSet, p: float, method: str = "auto"):
    """(c^G_p, Q_hat_{n,gamma}(c^G_p), f_Sigma(c^G_p)) for the bootstrap quantile expansion."""
    sigma = inputs.sigma
    c = gaussnum.gmax_quantile(sigma, p)
    psi = _rect(sigma, c, 2, method)
    q2 = 0.5 * _second_moment_contraction(sample, sigma, psi)
    q3 = 0.0
    if inputs.gamma != 0.0:
        t3 = _rect(sigma, c, 3, method)
        q3 = -inputs.gamma / (6.0 * sqrt(sample.n)) * contract_third(sample, t3)
    return c, q2 + q3, gaussnum.gmax_density(sigma, c)


def cornish_fisher_quantile(
    inputs: ExpansionInputs, sample: DataSet, p: float, method: str = "auto", eps: float = DEFAULT_EPS
) -> float:
    """c^G_p - Q_hat_{n,gamma}(c^G_p) / f_Sigma(c^G_p) with sample moments of ``sample``."""
    _check_level(p, eps)
    c, qhat, f = cornish_fisher_terms(inputs, sample, p, method)
    return c - qhat / f


def spherical_limit(gamma_x: float, alpha: float, w3: float) -> float:
    """Limit of sqrt(n / log^3 d) (rejection - alpha) for spherical Sigma."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    return -(1.0 - w3) * sqrt(2.0) / 3.0 * gamma_x * log(1.0 - alpha)


def factor_expansion_leading(eu3: float, gamma: float, alpha: float, n: int) -> float:
    """Leading n^{-1/2} term of the rejection error in the one-factor model."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise ValidationError("n must be positive")
    z = float(special.ndtri(alpha))
    return eu3 / sqrt(n) * ((gamma - 1.0) / 6.0 * (z * z - 1.0) + 0.5 * z * z) * phi(z)


# ---------------------------------------------------------------------------
# population moments of the simulation designs
# ---------------------------------------------------------------------------


def spherical_moments(d: int, gamma_x: float) -> ThirdMomentSummary:
    """Independent coordinates with common third moment gamma_x."""
    return ThirdMomentSummary(d * gamma_x, 0.0, 0.0, 0, d)


def factor_moments(d: int, rho: float, eu3: float, ev3: float = 0.0) -> ThirdMomentSummary:
    """sqrt(rho) U 1 + sqrt(1 - rho) V with independent standardized V coordinates."""
    common = rho**1.5 * eu3
    return ThirdMomentSummary(
        d * (common + (1.0 - rho) ** 1.5 * ev3),
        d * (d - 1) * common,
        d * (d - 1) * (d - 2) * common,
        0,
        d,
    )


_HE_X, _HE_W = special.roots_hermitenorm(160)
_HE_W = _HE_W / np.sqrt(2.0 * np.pi)


def copula_equicorrelation_moments(
    d: int, rho: float, shape: float, scale: float = 1.0, symmetrize: bool = False
) -> tuple[CovarianceSpec, ThirdMomentSummary]:
    """Exact covariance and third-moment sums of the equicorrelated gamma copula.

    Conditional on the common factor the coordinates are independent, so
    every mixed moment is a one-dimensional integral of products of
    conditional moments m_p(zeta) = E[X_j^p | zeta].
    """
    r, s = sqrt(rho), sqrt(1.0 - rho)
    mean = shape * scale
    z = r * _HE_X[:, None] + s * _HE_X[None, :]  # (factor, idiosyncratic)
    g = scale * gamma_quantile_of_normal(shape, z) - mean
    m1 = g @ _HE_W
    m2 = (g * g) @ _HE_W
    m3 = (g**3) @ _HE_W
    var = float(_HE_W @ m2)
    cov = float(_HE_W @ (m1 * m1))
    if symmetrize:
        # U - U': variances and covariances double, odd moments vanish
        spec = CovarianceSpec.equicorrelation(d, cov / var, sqrt(2.0 * var))
        return spec, ThirdMomentSummary(0.0, 0.0, 0.0, 0, d)
    summary = ThirdMomentSummary(
        d * float(_HE_W @ m3),
        d * (d - 1) * float(_HE_W @ (m2 * m1)),
        d * (d - 1) * (d - 2) * float(_HE_W @ m1**3),
        0,
        d,
    )
    return CovarianceSpec.equicorrelation(d, cov / var, sqrt(var)), summary
