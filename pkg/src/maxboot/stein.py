"""Univariate Stein kernels of multiplier laws and checks of the Stein identity.

For a density f with mean mu, tau(x) f(x) = int_x^sup (u - mu) f(u) du, and
the kernel satisfies E[(xi - mu) h'(xi)] = E[tau(xi) h''(xi)] for smooth h.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import inf, isfinite, sqrt
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate, optimize, special

from .errors import CapabilityError, ValidationError
from .rng import WeightLaw, weight_raw_moment

QUAD_EPSABS = 1e-12
DENSITY_FLOOR = 1e-16
GRID_POINTS = 20_001


@dataclass(frozen=True)
class UnivariateKernel:
    """A Stein kernel tau on ``support``.

    ``poly`` holds increasing-order coefficients when tau is a polynomial
    (enabling exact-moment identity checks); ``density``, ``mean`` and
    ``end_exponents`` are kept for quadrature checks.
    """

    evaluator: Callable[[float], float]
    support: tuple[float, float]
    bound: float | None = None
    poly: np.ndarray | None = None
    density: Callable[[float], float] | None = None
    mean: float = 0.0
    end_exponents: tuple[float, float] | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0:
            return float(self.evaluator(float(x)))
        return np.array([self.evaluator(float(v)) for v in x.ravel()]).reshape(x.shape)


def _truncate(density, mean: float, lo: float, hi: float) -> tuple[float, float]:
    # push infinite ends inwards to where the density drops below the floor
    def edge(direction: float) -> float:
        step = 1.0
        x = mean + direction * step
        while density(x) >= DENSITY_FLOOR and step < 1e6:
            step *= 2.0
            x = mean + direction * step
        return x

    return (lo if isfinite(lo) else edge(-1.0)), (hi if isfinite(hi) else edge(1.0))


def kernel_from_density(
    density, mean: float, support: tuple[float, float], end_exponents: tuple[float, float] | None = None
) -> UnivariateKernel:
    """Stein kernel tau(x) = [int_x^sup (u - mean) f(u) du] / f(x) by adaptive quadrature.

    Because the full integral of (u - mean) f vanishes, the lower tail
    -int_inf^x is used for x below the mean, so each evaluation integrates
    over the side carrying less mass.  ``end_exponents = (p, q)`` declares
    f(u) = g(u) (u - lo)^p (hi - u)^q with g smooth; the algebraic end
    factors are then handled by weighted (QAWS) quadrature.
    """
    lo, hi = float(support[0]), float(support[1])
    if not lo < hi:
        raise ValidationError("support must be a nonempty interval")
    integral = _weighted_integral(density, mean, lo, hi, end_exponents)

    def tau(x: float) -> float:
        if not lo <= x <= hi:
            raise ValidationError(f"x={x} outside the support [{lo}, {hi}]")
        fx = density(x)
        if not fx > 0:
            raise ValidationError(f"density vanishes at x={x}; the kernel is singular there")
        g = lambda u: u - mean  # noqa: E731
        val = integral(g, x, hi) if x >= mean else -integral(g, lo, x)
        return val / fx

    bound = None
    if isfinite(lo) and isfinite(hi):
        bound = _grid_sup(np.vectorize(tau), lo, hi, points=401, interior=True)
    return UnivariateKernel(tau, (lo, hi), bound, None, density, float(mean), end_exponents)


def _weighted_integral(density, mean: float, lo: float, hi: float, end_exponents):
    """Return I(g, a, b) = int_a^b g(u) f(u) du for lo <= a <= b <= hi."""
    if end_exponents is None:
        tlo, thi = _truncate(density, mean, lo, hi)

        def plain(g, a, b):
            a, b = max(a, tlo), min(b, thi)
            if a >= b:
                return 0.0
            return integrate.quad(lambda u: g(u) * density(u), a, b, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=500)[0]

        return plain
    if not (isfinite(lo) and isfinite(hi)):
        raise ValidationError("end exponents need a compact support")
    p, q = end_exponents

    guard = 1e-12 * (hi - lo)

    def smooth(u: float) -> float:
        # the weighted rule samples the end points themselves; g is smooth there,
        # so evaluating a hair inside gives its limit
        u = min(max(u, lo + guard), hi - guard)
        return density(u) / ((u - lo) ** p * (hi - u) ** q)

    def weighted(g, a, b):
        if a >= b:
            return 0.0
        # keep only the singular factors that touch [a, b] in the quadrature weight
        wl = p if a == lo else 0.0
        wr = q if b == hi else 0.0

        def body(u: float) -> float:
            extra = 1.0
            if wl == 0.0:
                extra *= (u - lo) ** p
            if wr == 0.0:
                extra *= (hi - u) ** q
            return g(u) * smooth(u) * extra

        with warnings.catch_warnings():
            # slivers next to a singular end trip QUADPACK's roundoff detector
            # although the returned value is accurate
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            return integrate.quad(
                body, a, b, weight="alg", wvar=(wl, wr), epsabs=QUAD_EPSABS, epsrel=1e-12, limit=500
            )[0]

    return weighted


def normal_kernel() -> UnivariateKernel:
    return UnivariateKernel(
        lambda x: 1.0,
        (-inf, inf),
        1.0,
        np.array([1.0]),
        lambda x: float(np.exp(-0.5 * x * x) / sqrt(2.0 * np.pi)),
        0.0,
    )


def _std_beta_pieces(law: WeightLaw):
    a, b = law.beta_shapes
    nu = a + b
    mu, sd = law._beta_loc_scale
    lo, hi = -mu / sd, (1.0 - mu) / sd
    log_beta = special.betaln(a, b)

    def density(w: float) -> float:
        # eta and 1 - eta measured from the nearer end point to avoid cancellation
        eta, rest = sd * (w - lo), sd * (hi - w)
        if not (eta > 0.0 and rest > 0.0):
            return 0.0
        return float(sd * np.exp((a - 1) * np.log(eta) + (b - 1) * np.log(rest) - log_beta))

    # tau*(w) = eta (1 - eta) / (nu sd^2) with eta = mu + sd w
    eta = np.array([mu, sd])
    poly = P.polymul(eta, P.polysub([1.0], eta)) / (nu * sd * sd)
    return lo, hi, density, poly


def std_beta_kernel(law: WeightLaw) -> UnivariateKernel:
    """Closed-form kernel of a standardized beta multiplier law."""
    if law.kind != "beta":
        raise ValidationError("std_beta_kernel needs a standardized beta law")
    lo, hi, density, poly = _std_beta_pieces(law)
    a, b = law.beta_shapes
    tau_sup = _grid_sup(lambda x: P.polyval(x, poly), lo, hi)
    return UnivariateKernel(
        lambda x: float(P.polyval(x, poly)), (lo, hi), tau_sup, poly, density, 0.0, (a - 1.0, b - 1.0)
    )


def kernel_for_law(law: WeightLaw) -> UnivariateKernel:
    if law.kind == "gaussian":
        return normal_kernel()
    if law.kind == "beta":
        return std_beta_kernel(law)
    raise CapabilityError(f"{law.kind} weights form a two-point law, which admits no Stein kernel")


def _moment_fn(law) -> Callable[[int], float]:
    if isinstance(law, WeightLaw):
        return lambda k: weight_raw_moment(law, k)
    if callable(law):
        return law
    raise ValidationError("expected a WeightLaw or a raw-moment function k -> E[xi^k]")


def stein_identity_residual(law, kernel: UnivariateKernel, h) -> float:
    """|E[(xi - mu) h'(xi)] - E[tau(xi) h''(xi)]| for a polynomial h of degree <= 6.

    ``h`` lists coefficients in increasing order.  With a polynomial kernel
    and exact raw moments the residual is computed exactly; otherwise the
    expectation is integrated against ``kernel.density``.
    """
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    if h.size > 7:
        raise ValidationError("test functions are limited to degree 6")
    d1, d2 = P.polyder(h), P.polyder(h, 2)
    lhs = P.polymul([-kernel.mean, 1.0], d1)
    if kernel.poly is not None and law is not None:
        moment = _moment_fn(law)
        diff = P.polysub(lhs, P.polymul(kernel.poly, d2))
        return abs(float(sum(c * moment(k) for k, c in enumerate(diff))))
    if kernel.density is None:
        raise CapabilityError("kernel carries neither a polynomial form nor a density")
    integral = _weighted_integral(kernel.density, kernel.mean, *kernel.support, kernel.end_exponents)
    lo, hi = kernel.support

    guard = 1e-12 * (hi - lo) if isfinite(hi - lo) else 0.0

    def integrand(x: float) -> float:
        # weighted rules also sample the end points, where tau is only a limit
        x = min(max(x, lo + guard), hi - guard)
        return P.polyval(x, lhs) - kernel.evaluator(x) * P.polyval(x, d2)

    if kernel.mean <= lo or kernel.mean >= hi:
        return abs(integral(integrand, lo, hi))
    # split at the mean, where the kernel switches integration side
    return abs(integral(integrand, lo, kernel.mean) + integral(integrand, kernel.mean, hi))


def _grid_sup(fn, lo: float, hi: float, points: int = GRID_POINTS, interior: bool = False) -> float:
    grid = np.linspace(lo, hi, points)
    if interior:
        grid = grid[1:-1]
    vals = np.abs(fn(grid))
    i = int(np.argmax(vals))
    # polish the grid maximum with a bounded scalar search
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda x: -abs(fn(x)), bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return float(max(vals[i], -res.fun))


@dataclass(frozen=True)
class KernelBound:
    b_w: float
    ok: bool
    support_radius: float
    tau_sup: float


def kernel_bound_check(law: WeightLaw) -> KernelBound:
    """Smallest b_w with |w| <= b_w and |tau*(w)| <= b_w^2 on the support."""
    if law.kind == "gaussian":
        raise CapabilityError(
            "Gaussian weights are unbounded; the Gaussian-weight case of the coverage bound "
            "applies instead (w_1 ~ N(0,1) with b_w = 1)"
        )
    if law.kind in ("rademacher", "mammen"):
        raise CapabilityError(f"{law.kind} weights form a two-point law, which admits no Stein kernel")
    kernel = std_beta_kernel(law)
    lo, hi = kernel.support
    radius = max(abs(lo), abs(hi))
    b_w = max(radius, sqrt(kernel.bound))
    return KernelBound(b_w, bool(isfinite(b_w)), radius, kernel.bound)
