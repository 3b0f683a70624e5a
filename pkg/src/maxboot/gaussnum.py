"""Gaussian analytics for the coordinatewise maximum of Z ~ N(0, Sigma).

Rectangle integrals of derivatives of the Gaussian density over
A(t) = (-inf, t]^d, and the CDF, density, quantile and diagnostics of
max_j Z_j.  Three computational paths exist:

* exchangeable specs (identity, equicorrelation) use a one-dimensional
  integral over the common factor and return pattern-compressed tensors;
* small dense specs use tensor-product Gauss-Legendre quadrature;
* large dense specs use (conditional) Monte Carlo where a formula exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import sqrt

import numpy as np
from scipy import optimize, special

from .dgp import sample_corr_gaussian
from .errors import CapabilityError, ValidationError
from .model import CovarianceSpec, materialize_cov
from .rng import Purpose, StreamKey

HERMITE_MAX_ORDER = 20
DENSE_QUAD_MAX_D = 4
TAIL_CUTOFF = 40.0
DEFAULT_MC_DRAWS = 200_000
_MC_CHUNK = 20_000

_SQRT2PI = sqrt(2.0 * np.pi)


def hermite(m: int, t):
    """Probabilists' Hermite polynomial He_m(t) by the three-term recurrence."""
    if m < 0 or m > HERMITE_MAX_ORDER:
        raise CapabilityError(f"Hermite order {m} outside supported range 0..{HERMITE_MAX_ORDER}")
    t = np.asarray(t, dtype=np.float64)
    h_prev, h = np.ones_like(t), t.copy()
    if m == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for k in range(1, m):
        h_prev, h = h, t * h - k * h_prev
    return h if h.ndim else float(h)


def phi(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.exp(-0.5 * t * t) / _SQRT2PI
    return out if out.ndim else float(out)


def phi_derivative(m: int, t):
    """m-th derivative of the standard normal density: (-1)^m He_m(t) phi(t)."""
    return (-1) ** m * hermite(m, t) * phi(t)


# ---------------------------------------------------------------------------
# rectangle-integral tensors
# ---------------------------------------------------------------------------

# multiplicity patterns per order, e.g. order 3: (3,), (2, 1), (1, 1, 1)
PATTERNS = {
    1: ((1,),),
    2: ((2,), (1, 1)),
    3: ((3,), (2, 1), (1, 1, 1)),
}


def pattern_counts(d: int, r: int) -> tuple[int, ...]:
    """Number of ordered index tuples of length r in each multiplicity pattern."""
    if r == 1:
        return (d,)
    if r == 2:
        return (d, d * (d - 1))
    return (d, 3 * d * (d - 1), d * (d - 1) * (d - 2))


@dataclass(frozen=True, eq=False)
class RectGradTensor:
    """Integral of the r-th derivative tensor of phi_Sigma over A(t).

    ``kind == "pattern"`` stores one value per index-multiplicity pattern
    (see ``PATTERNS``); ``kind == "dense"`` stores the full d^r array.
    ``se`` holds Monte Carlo standard errors for estimated dense tensors.
    """

    order: int
    t: float
    d: int
    kind: str
    values: np.ndarray
    se: np.ndarray | None = None

    @property
    def is_pattern(self) -> bool:
        return self.kind == "pattern"

    @property
    def diag(self) -> float:
        return float(self.values[0]) if self.is_pattern else float(np.diag(self.values)[0])

    @property
    def off(self) -> float:
        if self.order != 2:
            raise ValidationError("off-diagonal pattern only defined for order 2")
        return float(self.values[1]) if self.is_pattern else float(self.values[0, 1])

    def to_dense(self) -> np.ndarray:
        if not self.is_pattern:
            return np.array(self.values)
        d, r = self.d, self.order
        if d**r > 5_000_000:
            raise CapabilityError(f"refusing to materialize a {d}^{r} tensor")
        idx = np.indices((d,) * r).reshape(r, -1)
        n_distinct = np.array([len(set(col)) for col in idx.T])
        # multiplicity pattern is fixed by the number of distinct indices
        out = np.empty(idx.shape[1])
        for p, pat in enumerate(PATTERNS[r]):
            out[n_distinct == len(pat)] = self.values[p]
        return out.reshape((d,) * r)

    def contract_ones(self) -> float:
        """Sum of all entries, <1^{(x)r}, tensor>."""
        if self.is_pattern:
            return float(np.dot(pattern_counts(self.d, self.order), self.values))
        return float(self.values.sum())

    def row_sum(self) -> float | np.ndarray:
        """Order 2: Psi 1 (a scalar for patterns, a vector for dense)."""
        if self.order != 2:
            raise ValidationError("row_sum needs an order-2 tensor")
        if self.is_pattern:
            return float(self.values[0] + (self.d - 1) * self.values[1])
        return self.values.sum(axis=1)

    def scaled(self, c: float) -> RectGradTensor:
        se = None if self.se is None else self.se * abs(c)
        return RectGradTensor(self.order, self.t, self.d, self.kind, self.values * c, se)


def _log_cdf_pow(u: np.ndarray, k: int) -> np.ndarray:
    return np.exp(k * special.log_ndtr(u)) if k > 0 else np.ones_like(u)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _composite_gl(breaks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    x = (0.5 * (a + b) + half * _GL_NODES).ravel()
    w = (half * _GL_WEIGHTS).ravel()
    return x, w


_FACTOR_RANGE = 12.0
_FACTOR_COARSE = 0.25
_FACTOR_FINE_PANELS = 160


@lru_cache(maxsize=4096)
def _factor_grid(rho: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes u_i and weights for E_zeta[g(u)], u = (t - sqrt(rho) zeta) / sqrt(1 - rho).

    Composite Gauss-Legendre in zeta with the window where u is moderate
    resolved on the scale sqrt((1 - rho)/rho), so the grid stays accurate
    for rho near one and for large d.
    """
    r, s = sqrt(rho), sqrt(1.0 - rho)
    L = _FACTOR_RANGE
    coarse = np.arange(-L, L + 0.5 * _FACTOR_COARSE, _FACTOR_COARSE)
    lo, hi = (t - L * s) / r, (t + L * s) / r
    lo, hi = max(lo, -L), min(hi, L)
    if lo < hi:
        fine = np.linspace(lo, hi, _FACTOR_FINE_PANELS + 1)
        breaks = np.union1d(coarse[(coarse < lo) | (coarse > hi)], fine)
    else:
        breaks = coarse
    zeta, w = _composite_gl(breaks)
    w = w * np.exp(-0.5 * zeta * zeta) / _SQRT2PI
    u = (t - r * zeta) / s
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


def _factor_expect(rho: float, t: float, fn) -> float:
    if rho == 0.0:
        return float(fn(np.array([t]))[0])
    u, w = _factor_grid(float(rho), float(t))
    return float(np.dot(w, fn(u)))


def _exchangeable_pattern(d: int, rho: float, t: float, r: int) -> np.ndarray:
    """Pattern values for unit-variance exchangeable Sigma (sigma = 1)."""
    s = sqrt(1.0 - rho)
    vals = []
    for pat in PATTERNS[r]:
        k = len(pat)
        if k > d:
            vals.append(0.0)
            continue

        def g(u, pat=pat, k=k):
            prod = _log_cdf_pow(u, d - k)
            for m in pat:
                prod = prod * phi_derivative(m - 1, u)
            return prod

        vals.append(_factor_expect(rho, t, g) / s**r)
    return np.array(vals)


def _dense_quadrature(cov: np.ndarray, t: float) -> dict[int, np.ndarray]:
    """Integrals of grad^r phi_Sigma over A(t), r = 0..3, by tensor-product quadrature."""
    d = cov.shape[0]
    prec = np.linalg.inv(cov)
    sd = np.sqrt(np.diag(cov))
    cond_sd = 1.0 / np.sqrt(np.diag(prec))
    out = {0: np.zeros(()), 1: np.zeros(d), 2: np.zeros((d, d)), 3: np.zeros((d, d, d))}
    axes = []
    for j in range(d):
        lo = -10.0 * sd[j]
        if t <= lo:
            return out
        h = 1.5 * cond_sd[j]
        panels = max(4, int(np.ceil((t - lo) / h)))
        axes.append(_composite_gl(np.linspace(lo, t, panels + 1)))
    logdet = np.linalg.slogdet(cov)[1]
    norm = -0.5 * (d * np.log(2 * np.pi) + logdet)
    m0 = 0.0
    m1 = np.zeros(d)
    m2 = np.zeros((d, d))
    m3 = np.zeros((d, d, d))
    # iterate over the first axis in slabs to bound memory
    x0, w0 = axes[0]
    rest = [a[0] for a in axes[1:]]
    wrest = [a[1] for a in axes[1:]]
    if d > 1:
        grid_rest = np.stack(np.meshgrid(*rest, indexing="ij"), axis=-1).reshape(-1, d - 1)
        wgrid = np.ones(1)
        for w in wrest:
            wgrid = np.multiply.outer(wgrid, w).ravel()
    else:
        grid_rest = np.zeros((1, 0))
        wgrid = np.ones(1)
    for xi, wi in zip(x0, w0):
        z = np.concatenate([np.full((grid_rest.shape[0], 1), xi), grid_rest], axis=1)
        y = z @ prec
        dens = np.exp(norm - 0.5 * np.einsum("ij,ij->i", y, z))
        ww = wi * wgrid * dens
        m0 += ww.sum()
        wy = ww[:, None] * y
        m1 += wy.sum(axis=0)
        m2 += wy.T @ y
        m3 += np.einsum("ij,ik,il->jkl", wy, y, y, optimize=True)
    out[0] = np.array(m0)
    out[1] = -m1
    out[2] = m2 - prec * m0
    out[3] = (
        -m3
        + np.einsum("jk,l->jkl", prec, m1)
        + np.einsum("jl,k->jkl", prec, m1)
        + np.einsum("kl,j->jkl", prec, m1)
    )
    return out


@lru_cache(maxsize=256)
def _dense_quadrature_cached(key: bytes, d: int, t: float) -> dict[int, np.ndarray]:
    cov = np.frombuffer(key, dtype=np.float64).reshape(d, d)
    return _dense_quadrature(cov, t)


def dense_rect_grad(cov: np.ndarray, t: float, r: int) -> np.ndarray:
    """Dense-path quadrature oracle; available for d <= DENSE_QUAD_MAX_D."""
    cov = np.ascontiguousarray(cov, dtype=np.float64)
    d = cov.shape[0]
    if d > DENSE_QUAD_MAX_D:
        raise CapabilityError(f"dense quadrature supports d <= {DENSE_QUAD_MAX_D}, got d={d}")
    return _dense_quadrature_cached(cov.tobytes(), d, float(t))[r].copy()


def rect_grad_integral(spec: CovarianceSpec, t: float, r: int, method: str = "auto") -> RectGradTensor:
    """Integral of the r-th derivative tensor of phi_Sigma over (-inf, t]^d.

    ``method`` is ``auto``, ``pattern`` or ``dense``; ``auto`` prefers the
    exchangeable pattern path and falls back to dense quadrature.
    """
    if r not in (1, 2, 3):
        raise CapabilityError(f"rectangle integrals only for r in 1..3, got {r}")
    t = float(t)
    if method not in ("auto", "pattern", "dense"):
        raise ValidationError(f"unknown method {method!r}")
    use_pattern = _structured(spec) and method != "dense"
    if method == "pattern" and not use_pattern:
        raise CapabilityError(f"no pattern representation for {spec.kind} covariance")
    if use_pattern:
        sigma = spec.sigma
        rho = _rho(spec)
        if abs(t) / sigma > TAIL_CUTOFF:
            vals = np.zeros(len(PATTERNS[r]))
        else:
            vals = _exchangeable_pattern(spec.d, rho, t / sigma, r) / sigma**r
        return RectGradTensor(r, t, spec.d, "pattern", vals)
    if spec.d > DENSE_QUAD_MAX_D:
        raise CapabilityError(
            f"no rectangle-integral path for {spec.kind} covariance with d={spec.d} "
            f"(dense quadrature needs d <= {DENSE_QUAD_MAX_D})"
        )
    return RectGradTensor(r, t, spec.d, "dense", dense_rect_grad(materialize_cov(spec), t, r))


# ---------------------------------------------------------------------------
# distribution of the maximum
# ---------------------------------------------------------------------------


def _mc_stream(stream: StreamKey | None) -> np.random.Generator:
    return (stream or StreamKey(0, 0, Purpose.GAUSSIAN_REF)).generator()


def sample_gmax(spec: CovarianceSpec, draws: int, stream: StreamKey | None = None) -> np.ndarray:
    """Monte Carlo draws of max_j Z_j."""
    gen = _mc_stream(stream)
    out = np.empty(draws)
    for start in range(0, draws, _MC_CHUNK):
        m = min(_MC_CHUNK, draws - start)
        out[start : start + m] = sample_corr_gaussian(spec, gen, m).max(axis=1)
    return out


def _structured(spec: CovarianceSpec) -> bool:
    return spec.kind in ("identity", "equicorrelation") or (spec.kind == "ar1" and spec.d == 1)


def _rho(spec: CovarianceSpec) -> float:
    return spec.rho if spec.kind == "equicorrelation" else 0.0


def gmax_cdf(
    spec: CovarianceSpec,
    t: float,
    draws: int = DEFAULT_MC_DRAWS,
    stream: StreamKey | None = None,
    return_se: bool = False,
):
    """P(max_j Z_j <= t); Monte Carlo (with standard error) for non-exchangeable specs."""
    t = float(t)
    se = 0.0
    if _structured(spec):
        sigma = spec.sigma
        x = t / sigma
        if x < -TAIL_CUTOFF:
            val = 0.0
        elif x > TAIL_CUTOFF:
            val = 1.0
        else:
            d = spec.d
            val = _factor_expect(_rho(spec), x, lambda u: _log_cdf_pow(u, d))
            val = min(max(val, 0.0), 1.0)
    else:
        sd_max = float(np.sqrt(np.diag(materialize_cov(spec)).max()))
        if t < -TAIL_CUTOFF * sd_max:
            val = 0.0
        else:
            m = sample_gmax(spec, draws, stream)
            val = float(np.mean(m <= t))
            se = sqrt(val * (1.0 - val) / draws)
    return (val, se) if return_se else val


def gmax_quantile(
    spec: CovarianceSpec,
    p: float,
    draws: int = DEFAULT_MC_DRAWS,
    stream: StreamKey | None = None,
    return_se: bool = False,
):
    """p-quantile c^G_p of max_j Z_j."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"quantile level must lie in (0, 1), got {p!r}")
    se = 0.0
    if spec.kind == "identity" or (_structured(spec) and spec.d == 1):
        # Phi^{-1}(p^{1/d}) = -Phi^{-1}(1 - p^{1/d})
        val = -spec.sigma * float(special.ndtri(-np.expm1(np.log(p) / spec.d)))
    elif spec.kind == "equicorrelation":
        sigma, d = spec.sigma, spec.d
        lo = sigma * float(special.ndtri(p)) - 1e-6
        hi = -sigma * float(special.ndtri(-np.expm1(np.log(p) / d))) + 1e-6
        val = optimize.brentq(lambda x: gmax_cdf(spec, x) - p, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    else:
        m = np.sort(sample_gmax(spec, draws, stream))
        val = float(np.quantile(m, p, method="inverted_cdf"))
        # distribution-free band from order statistics at p +- one binomial sd
        band = sqrt(p * (1.0 - p) / draws)
        lo, hi = np.quantile(m, [max(p - band, 0.0), min(p + band, 1.0)], method="inverted_cdf")
        se = 0.5 * float(hi - lo)
    return (val, se) if return_se else val


def _exchangeable_density(d: int, rho: float, x: float, order: int) -> float:
    s = sqrt(1.0 - rho)
    if order == 0:
        return d * _factor_expect(rho, x, lambda u: phi(u) * _log_cdf_pow(u, d - 1)) / s
    # order 1: sum of all order-2 pattern integrals
    vals = _exchangeable_pattern(d, rho, x, 2)
    return float(np.dot(pattern_counts(d, 2), vals))


def gmax_density(
    spec: CovarianceSpec,
    t: float,
    order: int = 0,
    draws: int = DEFAULT_MC_DRAWS,
    stream: StreamKey | None = None,
    return_se: bool = False,
):
    """Density f_Sigma(t) of max_j Z_j (order 0) or its derivative (order 1)."""
    if order not in (0, 1):
        raise CapabilityError(f"density order must be 0 or 1, got {order}")
    t = float(t)
    se = 0.0
    if _structured(spec):
        sigma = spec.sigma
        x = t / sigma
        if abs(x) > TAIL_CUTOFF:
            val = 0.0
        else:
            val = _exchangeable_density(spec.d, _rho(spec), x, order) / sigma ** (order + 1)
    elif spec.d <= DENSE_QUAD_MAX_D:
        val = rect_grad_integral(spec, t, order + 1).contract_ones()
    elif order == 0:
        val, se = _conditional_mc_density(spec, t, draws, stream)
    else:
        raise CapabilityError(f"no density-derivative path for {spec.kind} covariance with d={spec.d}")
    return (val, se) if return_se else val


def _conditional_mc_density(spec: CovarianceSpec, t: float, draws: int, stream) -> tuple[float, float]:
    # f(t) = sum_j f_{Z_j}(t) P(max_{k != j} Z_k <= t | Z_j = t); the conditional
    # draws come from Z + Sigma[:, j]/Sigma_jj (t - Z_j)
    cov = materialize_cov(spec)
    d = spec.d
    var = np.diag(cov)
    dens_j = np.exp(-0.5 * t * t / var) / np.sqrt(2 * np.pi * var)
    gen = _mc_stream(stream)
    acc = np.zeros(draws)
    for start in range(0, draws, _MC_CHUNK):
        m = min(_MC_CHUNK, draws - start)
        z = sample_corr_gaussian(spec, gen, m)
        for j in range(d):
            zc = z + np.outer(t - z[:, j], cov[:, j] / var[j])
            zc[:, j] = -np.inf
            acc[start : start + m] += dens_j[j] * (zc.max(axis=1) <= t)
    return float(acc.mean()), float(acc.std(ddof=1) / sqrt(draws))


def conditional_mc_psi(
    spec: CovarianceSpec, t: float, draws: int = 20_000, stream: StreamKey | None = None
) -> RectGradTensor:
    """Order-2 rectangle integral at t by conditional Monte Carlo.

    Diagonal: -phi_jj(t) E[(Sigma^{-1} Z)_j 1{Z <= t} | Z_j = t].
    Off-diagonal: phi_{jl}(t, t) P(Z_{-jl} <= t | Z_j = Z_l = t).
    Cost is O(draws * d^3).
    """
    cov = materialize_cov(spec)
    prec = np.linalg.inv(cov)
    d = spec.d
    var = np.diag(cov)
    gen = _mc_stream(stream)
    z = sample_corr_gaussian(spec, gen, draws)
    vals = np.zeros((d, d))
    ses = np.zeros((d, d))
    for j in range(d):
        zc = z + np.outer(t - z[:, j], cov[:, j] / var[j])
        zc[:, j] = t  # exact, so rounding cannot push it past the threshold
        inside = zc.max(axis=1) <= t
        g = -(zc @ prec[:, j]) * inside
        dens = np.exp(-0.5 * t * t / var[j]) / np.sqrt(2 * np.pi * var[j])
        vals[j, j] = dens * g.mean()
        ses[j, j] = dens * g.std(ddof=1) / sqrt(draws)
        for l in range(j + 1, d):
            idx = [j, l]
            c2 = cov[np.ix_(idx, idx)]
            gain = np.linalg.solve(c2, cov[idx, :]).T  # d x 2
            zc2 = z + (t - z[:, idx]) @ gain.T
            zc2[:, idx] = -np.inf
            ind = zc2.max(axis=1) <= t
            det = np.linalg.det(c2)
            q = t * t * np.linalg.solve(c2, np.ones(2)).sum()
            dens2 = np.exp(-0.5 * q) / (2 * np.pi * sqrt(det))
            pr = ind.mean()
            vals[j, l] = vals[l, j] = dens2 * pr
            ses[j, l] = ses[l, j] = dens2 * sqrt(max(pr * (1 - pr), 0.0) / draws)
    return RectGradTensor(2, t, d, "dense", vals, ses)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GmaxDiagnostics:
    sigma_star: float
    var_max: float
    var_max_se: float
    varsigma_d: float
    sigma_bar: float
    sigma_under: float
    d: int

    def density_floor(self, p):
        """Lower bound on f(F^{-1}(p)) from the isoperimetric-type inequality."""
        p = np.asarray(p, dtype=np.float64)
        out = np.minimum(p / sqrt(2.0), (1.0 - p) ** 1.5) / (4.0 * np.sqrt(self.var_max))
        return out if out.ndim else float(out)

    def condition_lhs(self, n: int) -> float:
        """(varsigma_d / sigma_*)^3 log^3(dn) / n * log n, an advisory size check."""
        return (self.varsigma_d / self.sigma_star) ** 3 * np.log(self.d * n) ** 3 / n * np.log(n)


def gmax_diagnostics(
    spec: CovarianceSpec, draws: int = DEFAULT_MC_DRAWS, stream: StreamKey | None = None
) -> GmaxDiagnostics:
    m = sample_gmax(spec, draws, stream)
    var = float(m.var(ddof=1))
    c = m - m.mean()
    var_se = float(np.sqrt(max(np.mean(c**4) - var**2, 0.0) / draws))
    diag = np.diag(materialize_cov(spec)) if spec.kind == "dense" else np.full(spec.d, spec.sigma**2)
    varsigma = sqrt(var * np.log(spec.d)) if spec.d > 1 else 0.0
    return GmaxDiagnostics(
        sigma_star=float(spec.sigma_star),
        var_max=var,
        var_max_se=var_se,
        varsigma_d=varsigma,
        sigma_bar=float(np.sqrt(diag.max())),
        sigma_under=float(np.sqrt(diag.min())),
        d=spec.d,
    )
