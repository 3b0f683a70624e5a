from __future__ import annotations

from math import sqrt

import numpy as np
import pytest
from numpy.polynomial import hermite_e
from scipy import integrate, stats

from maxboot.errors import CapabilityError, ValidationError
from maxboot.gaussnum import (
    DENSE_QUAD_MAX_D,
    conditional_mc_psi,
    gmax_cdf,
    gmax_density,
    gmax_diagnostics,
    gmax_quantile,
    hermite,
    pattern_counts,
    phi,
    phi_derivative,
    rect_grad_integral,
)
from maxboot.model import CovarianceSpec
from maxboot.rng import Purpose, StreamKey

C90 = stats.norm.ppf(0.9)


@pytest.mark.parametrize("m", range(0, 21))
def test_hermite_matches_numpy(m):
    t = np.linspace(-4, 4, 17)
    coef = np.zeros(m + 1)
    coef[m] = 1.0
    np.testing.assert_allclose(hermite(m, t), hermite_e.hermeval(t, coef), rtol=1e-10, atol=1e-10)


def test_hermite_examples_and_cap():
    assert hermite(0, 3.7) == 1.0
    assert hermite(2, 0.0) == -1.0
    assert hermite(3, 2.0) == 2.0
    with pytest.raises(CapabilityError):
        hermite(21, 0.0)


def test_phi_derivative_examples():
    assert phi_derivative(0, 0.0) == pytest.approx(0.3989423, abs=1e-7)
    assert phi_derivative(1, 0.0) == 0.0
    assert phi_derivative(2, 0.0) == pytest.approx(-0.3989423, abs=1e-7)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_phi_derivative_finite_difference(m):
    t, h = 0.7, 1e-4
    fd = (phi_derivative(m - 1, t + h) - phi_derivative(m - 1, t - h)) / (2 * h)
    assert phi_derivative(m, t) == pytest.approx(fd, abs=1e-7)


def test_identity_pattern_closed_form():
    d, t = 5, 1.1
    Phi, f = stats.norm.cdf(t), stats.norm.pdf(t)
    r3 = rect_grad_integral(CovarianceSpec.identity(d), t, 3)
    np.testing.assert_allclose(
        r3.values,
        [phi_derivative(2, t) * Phi ** (d - 1), -t * f * f * Phi ** (d - 2), f**3 * Phi ** (d - 3)],
        rtol=1e-9,
    )
    r2 = rect_grad_integral(CovarianceSpec.identity(d), t, 2)
    np.testing.assert_allclose(r2.values, [-t * f * Phi ** (d - 1), f * f * Phi ** (d - 2)], rtol=1e-9)


def test_identity_scaling():
    s, t = 2.5, 1.7
    base = rect_grad_integral(CovarianceSpec.identity(3), t / s, 3)
    scaled = rect_grad_integral(CovarianceSpec.identity(3, s), t, 3)
    np.testing.assert_allclose(scaled.values, base.values / s**3, rtol=1e-10)


def test_univariate_psi_reference():
    v = rect_grad_integral(CovarianceSpec.identity(1), 1.2816, 2)
    assert v.to_dense()[0, 0] == pytest.approx(-1.2816 * stats.norm.pdf(1.2816), rel=1e-12)
    # the published -0.224942 carries a 3e-5 rounding slip; exact is -0.2249047 here
    assert v.to_dense()[0, 0] == pytest.approx(-0.224942, abs=5e-5)
    # 1-d quadrature oracle of phi'' over (-inf, t]
    ref = integrate.quad(lambda z: phi_derivative(2, z), -np.inf, 1.2816)[0]
    assert v.to_dense()[0, 0] == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize(
    "spec",
    [CovarianceSpec.identity(3), CovarianceSpec.equicorrelation(3, 0.6), CovarianceSpec.ar1(3, 0.5)],
)
def test_far_tail_vanishes(spec):
    for r in (2, 3):
        v = rect_grad_integral(spec, 12.0, r).to_dense()
        assert np.all(np.abs(v) <= 1e-10)


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("rho", [0.0, 0.2, 0.7])
@pytest.mark.parametrize("r", [2, 3])
def test_pattern_matches_dense(d, rho, r):
    spec = CovarianceSpec.equicorrelation(d, rho) if rho else CovarianceSpec.identity(d)
    for t in (-0.5, 1.0, 2.2):
        pat = rect_grad_integral(spec, t, r, method="pattern").to_dense()
        den = rect_grad_integral(spec, t, r, method="dense").to_dense()
        np.testing.assert_allclose(pat, den, atol=1e-6)


@pytest.mark.parametrize("r", [2, 3])
def test_pattern_matches_dense_at_cap(r):
    # four-dimensional quadrature is slow, so a single point at the cap
    spec = CovarianceSpec.equicorrelation(4, 0.2)
    for t in (1.0,):
        pat = rect_grad_integral(spec, t, r, method="pattern").to_dense()
        den = rect_grad_integral(spec, t, r, method="dense").to_dense()
        np.testing.assert_allclose(pat, den, atol=1e-6)


def test_dense_tensor_is_symmetric():
    spec = CovarianceSpec.dense([[1.0, 0.3, -0.2], [0.3, 1.5, 0.1], [-0.2, 0.1, 0.8]])
    v = rect_grad_integral(spec, 0.8, 3).to_dense()
    for perm in ((1, 0, 2), (2, 1, 0), (0, 2, 1), (1, 2, 0)):
        np.testing.assert_allclose(v, v.transpose(perm), atol=1e-12)
    assert np.all(np.isfinite(v))


def test_capability_errors():
    with pytest.raises(CapabilityError):
        rect_grad_integral(CovarianceSpec.ar1(DENSE_QUAD_MAX_D + 1, 0.3), 1.0, 2)
    with pytest.raises(CapabilityError):
        rect_grad_integral(CovarianceSpec.ar1(3, 0.3), 1.0, 2, method="pattern")
    with pytest.raises(ValidationError):
        rect_grad_integral(CovarianceSpec.identity(3), 1.0, 2, method="fast")


def test_pattern_counts_sum_to_power():
    for d in (1, 2, 5, 9):
        assert sum(pattern_counts(d, 2)) == d**2
        assert sum(pattern_counts(d, 3)) == d**3


def test_cdf_examples():
    # Phi(t)^400 = 0.9 at t = 3.46678; the published t = 3.4738 is a slip (it gives 0.90245)
    assert gmax_cdf(CovarianceSpec.identity(400), 3.4667798) == pytest.approx(0.9, abs=5e-4)
    assert gmax_cdf(CovarianceSpec.identity(400), 3.4738) == pytest.approx(stats.norm.cdf(3.4738) ** 400, rel=1e-10)
    for spec in (CovarianceSpec.identity(5), CovarianceSpec.equicorrelation(5, 0.3), CovarianceSpec.ar1(5, 0.4)):
        assert gmax_cdf(spec, -50.0) <= 1e-12
    assert gmax_cdf(CovarianceSpec.equicorrelation(50, 0.9999), 1.2816) == pytest.approx(0.9, abs=0.005)


def test_cdf_identity_is_power():
    for t in (-1.0, 0.3, 2.5):
        assert gmax_cdf(CovarianceSpec.identity(7), t) == pytest.approx(stats.norm.cdf(t) ** 7, rel=1e-10)


def test_cdf_equicorrelation_matches_mvn():
    spec = CovarianceSpec.equicorrelation(3, 0.4)
    cov = np.full((3, 3), 0.4) + 0.6 * np.eye(3)
    ref = stats.multivariate_normal(np.zeros(3), cov).cdf(np.full(3, 0.9))
    assert gmax_cdf(spec, 0.9) == pytest.approx(ref, abs=1e-5)


def test_quantile_examples():
    assert gmax_quantile(CovarianceSpec.identity(1), 0.9) == pytest.approx(1.281552, abs=1e-6)
    ref = stats.norm.ppf(0.9 ** (1 / 400))
    assert gmax_quantile(CovarianceSpec.identity(400), 0.9) == pytest.approx(ref, abs=1e-10)
    assert ref == pytest.approx(3.47, abs=0.01)
    with pytest.raises(ValidationError):
        gmax_quantile(CovarianceSpec.identity(3), 1.0)


@pytest.mark.parametrize(
    "spec",
    [CovarianceSpec.identity(6, 1.3), CovarianceSpec.equicorrelation(6, 0.5), CovarianceSpec.equicorrelation(40, 0.1)],
)
def test_quantile_cdf_round_trip(spec):
    for p in (0.05, 0.5, 0.9, 0.99):
        assert gmax_cdf(spec, gmax_quantile(spec, p)) == pytest.approx(p, abs=1e-8)
    assert gmax_quantile(spec, 0.5) < gmax_quantile(spec, 0.9)


def test_quantile_round_trip_dense_mc():
    spec = CovarianceSpec.ar1(8, 0.5)
    q, se = gmax_quantile(spec, 0.9, draws=100_000, stream=StreamKey(1, 0, Purpose.GAUSSIAN_REF), return_se=True)
    p, pse = gmax_cdf(spec, q, draws=100_000, stream=StreamKey(2, 0, Purpose.GAUSSIAN_REF), return_se=True)
    assert abs(p - 0.9) <= 3 * pse + 1e-5
    assert se > 0


def test_density_examples():
    assert gmax_density(CovarianceSpec.identity(2), 0.0) == pytest.approx(0.398942, abs=1e-6)
    t = np.linspace(-4, 4, 33)
    got = [gmax_density(CovarianceSpec.identity(1), x) for x in t]
    np.testing.assert_allclose(got, phi_derivative(0, t), rtol=1e-10)


@pytest.mark.parametrize("spec", [CovarianceSpec.identity(20), CovarianceSpec.equicorrelation(10, 0.3)])
def test_density_integrates_to_one(spec):
    hi = gmax_quantile(spec, 0.999999) + 10
    t = np.linspace(-10, hi, 4001)
    f = np.array([gmax_density(spec, x) for x in t])
    assert integrate.trapezoid(f, t) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("spec", [CovarianceSpec.identity(5), CovarianceSpec.equicorrelation(5, 0.4)])
def test_density_is_cdf_derivative(spec):
    h = 1e-4
    for t in (0.0, 1.3, 2.4):
        fd = (gmax_cdf(spec, t + h) - gmax_cdf(spec, t - h)) / (2 * h)
        assert gmax_density(spec, t) == pytest.approx(fd, abs=1e-6)
        fd1 = (gmax_density(spec, t + h) - gmax_density(spec, t - h)) / (2 * h)
        assert gmax_density(spec, t, order=1) == pytest.approx(fd1, abs=1e-6)


def test_dense_density_small_d_matches_conditional_formula():
    # oracle: f(t) = sum_j phi(t) P(Z_{-j} <= t | Z_j = t), each term a bivariate normal cdf
    cov = np.array([[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1.0]])
    t = 1.0
    ref = 0.0
    for j in range(3):
        rest = [k for k in range(3) if k != j]
        mean = cov[rest, j] * t
        ccov = cov[np.ix_(rest, rest)] - np.outer(cov[rest, j], cov[j, rest])
        ref += stats.norm.pdf(t) * stats.multivariate_normal(mean, ccov).cdf(np.full(2, t))
    assert gmax_density(CovarianceSpec.ar1(3, 0.5), t) == pytest.approx(ref, abs=1e-6)


def test_conditional_mc_density_matches_quadrature():
    # d above the dense cap forces the conditional Monte Carlo path
    spec = CovarianceSpec.dense(np.full((6, 6), 0.3) + 0.7 * np.eye(6))
    val, se = gmax_density(spec, 1.5, draws=100_000, stream=StreamKey(3, 0, Purpose.GAUSSIAN_REF), return_se=True)
    ref = gmax_density(CovarianceSpec.equicorrelation(6, 0.3), 1.5)
    assert abs(val - ref) <= 4 * se


def test_conditional_mc_psi_matches_pattern():
    rho, d, t = 0.3, 5, 1.6
    spec = CovarianceSpec.dense(np.full((d, d), rho) + (1 - rho) * np.eye(d))
    mc = conditional_mc_psi(spec, t, draws=60_000, stream=StreamKey(4, 0, Purpose.GAUSSIAN_REF))
    ref = rect_grad_integral(CovarianceSpec.equicorrelation(d, rho), t, 2).to_dense()
    assert np.all(np.abs(mc.values - ref) <= 4.5 * mc.se + 1e-12)
    assert np.all(mc.values[~np.eye(d, dtype=bool)] >= 0)


@pytest.mark.parametrize(
    "spec", [CovarianceSpec.identity(10), CovarianceSpec.equicorrelation(10, 0.5), CovarianceSpec.ar1(10, 0.6)]
)
def test_density_floor_holds(spec):
    diag = gmax_diagnostics(spec, draws=100_000, stream=StreamKey(5, 0, Purpose.GAUSSIAN_REF))
    for p in (0.02, 0.1, 0.5, 0.9, 0.98):
        q = gmax_quantile(spec, p, draws=100_000, stream=StreamKey(6, 0, Purpose.GAUSSIAN_REF))
        f = gmax_density(spec, q, draws=50_000, stream=StreamKey(7, 0, Purpose.GAUSSIAN_REF))
        assert f >= diag.density_floor(p) > 0


def test_diagnostics_examples():
    assert gmax_diagnostics(CovarianceSpec.identity(4, 1.7), draws=2000).sigma_star == pytest.approx(1.7)
    eq = gmax_diagnostics(CovarianceSpec.equicorrelation(9, 0.8), draws=2000)
    assert eq.sigma_star == pytest.approx(sqrt(0.2), abs=1e-12)
    big = gmax_diagnostics(CovarianceSpec.identity(400), draws=50_000, stream=StreamKey(8, 0, Purpose.GAUSSIAN_REF))
    assert big.var_max + 3 * big.var_max_se < 1.05
    assert big.varsigma_d == pytest.approx(sqrt(big.var_max * np.log(400)))
    assert big.condition_lhs(1000) > 0
    floor = big.density_floor(np.array([0.1, 0.9]))
    np.testing.assert_allclose(floor, [0.1 / sqrt(2), 0.1**1.5] / (4 * np.sqrt(big.var_max)))
