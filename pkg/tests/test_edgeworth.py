from __future__ import annotations

from math import log, sqrt

import numpy as np
import pytest
from scipy import stats

from maxboot.dgp import CopulaConfig, gen_copula
from maxboot.edgeworth import (
    ExpansionInputs,
    contract_psi_squared,
    contract_third,
    copula_equicorrelation_moments,
    cornish_fisher_quantile,
    cornish_fisher_terms,
    factor_expansion_leading,
    factor_moments,
    predicted_rejection,
    psi_alpha,
    q_n,
    r_n,
    spherical_limit,
    spherical_moments,
)
from maxboot.errors import CapabilityError, ValidationError
from maxboot.gaussnum import gmax_density, gmax_diagnostics, gmax_quantile, rect_grad_integral
from maxboot.model import CovarianceSpec, DataSet, ThirdMomentSummary, third_moment_summary
from maxboot.rng import Purpose, StreamKey

C = stats.norm.ppf(0.9)
PHI_C = stats.norm.pdf(C)


def _uni(gamma, third=2.0, n=100):
    return ExpansionInputs(CovarianceSpec.identity(1), n, gamma, ThirdMomentSummary(third, 0.0, 0.0, 0, 1))


def _closed_form_rate(alpha, gamma, m3=2.0, n=100):
    # univariate closed forms of the expansion for gamma = 1 and gamma = 0
    c = stats.norm.ppf(1 - alpha)
    f = stats.norm.pdf(c)
    if gamma == 1:
        return alpha - m3 / (2 * sqrt(n)) * c * c * f
    return alpha - m3 / (6 * sqrt(n)) * (2 * c * c + 1) * f


def test_inputs_validation():
    with pytest.raises(ValidationError):
        _uni(2.5)
    with pytest.raises(ValidationError):
        ExpansionInputs(CovarianceSpec.identity(2), 10, 1.0, ThirdMomentSummary(1.0, 0, 0, 0, 3))
    with pytest.raises(ValidationError):
        ExpansionInputs(CovarianceSpec.identity(2), 10, 1.0, np.zeros((3, 3, 3)))
    with pytest.raises(ValidationError):
        ExpansionInputs(CovarianceSpec.identity(2), 0, 1.0, ThirdMomentSummary(0, 0, 0, 0, 2))


def test_q_n_examples():
    assert q_n(_uni(0.0), 0.0) == pytest.approx(0.0132981, abs=1e-7)
    zero = ExpansionInputs(CovarianceSpec.equicorrelation(5, 0.3), 50, 0.0, ThirdMomentSummary(0.0, 0.0, 0.0, 0, 5))
    assert all(q_n(zero, t) == 0.0 for t in (-2.0, 0.0, 1.7))
    for t in (-12.0, 12.0):
        assert abs(q_n(_uni(0.0), t)) <= 1e-10


def test_psi_examples():
    psi = psi_alpha(CovarianceSpec.identity(1), 0.1)
    assert psi.to_dense()[0, 0] == pytest.approx(-C * PHI_C, rel=1e-12)
    c2 = stats.norm.ppf(sqrt(0.9))
    v = psi_alpha(CovarianceSpec.identity(2), 0.1).to_dense()
    diag, off = -c2 * stats.norm.pdf(c2) * sqrt(0.9), stats.norm.pdf(c2) ** 2
    np.testing.assert_allclose(v, [[diag, off], [off, diag]], rtol=1e-9)
    dense = psi_alpha(CovarianceSpec.equicorrelation(3, 0.2), 0.1, method="dense").to_dense()
    pat = psi_alpha(CovarianceSpec.equicorrelation(3, 0.2), 0.1, method="pattern").to_dense()
    np.testing.assert_allclose(pat, dense, atol=1e-5)
    with pytest.raises(ValidationError):
        psi_alpha(CovarianceSpec.identity(2), 1.0)


def test_psi_mc_fallback_for_large_dense():
    spec = CovarianceSpec.ar1(8, 0.4)
    with pytest.raises(CapabilityError):
        psi_alpha(spec, 0.1, method="dense")
    psi = psi_alpha(spec, 0.1, draws=5000, stream=StreamKey(1, 0, Purpose.GAUSSIAN_REF))
    assert psi.kind == "dense" and psi.se is not None
    off = psi.values[~np.eye(8, dtype=bool)]
    assert np.all(off >= 0)


def test_r_n_examples():
    assert r_n(_uni(1.0), 0.1) == pytest.approx(2 * (C * PHI_C) ** 2 / (2 * 10 * PHI_C), rel=1e-12)
    assert r_n(_uni(1.0), 0.1) == pytest.approx(0.028829, abs=1e-5)
    assert r_n(_uni(1.0, third=0.0), 0.3) == 0.0


def test_r_n_symmetric_data_is_near_zero():
    cfg = CopulaConfig(CovarianceSpec.equicorrelation(6, 0.3), 200_000, 0.5, symmetrize=True)
    x = gen_copula(cfg, np.random.default_rng(11))
    sigma, _ = copula_equicorrelation_moments(6, 0.3, 0.5, symmetrize=True)
    inputs = ExpansionInputs(sigma, 100, 1.0, x)
    psi = psi_alpha(sigma, 0.1)
    # per-row terms give an MC standard error for the streamed mean
    a, b = psi.values
    xv = x.values
    sq = np.einsum("ij,ij->i", xv, xv)
    rs = xv.sum(axis=1)
    terms = (a * sq + b * (rs * rs - sq)) * psi.row_sum() * rs
    scale = 2 * sqrt(100) * gmax_density(sigma, psi.t)
    se = terms.std(ddof=1) / sqrt(xv.shape[0]) / scale
    assert abs(r_n(inputs, 0.1, psi=psi)) <= 3 * se


def test_predicted_rejection_examples():
    p1 = predicted_rejection(_uni(1.0), 0.1)
    assert p1.predicted == pytest.approx(0.071171, abs=1e-5)
    assert p1.q_term == 0.0
    p0 = predicted_rejection(_uni(0.0), 0.1)
    assert p0.predicted == pytest.approx(0.074936, abs=1e-5)
    for p in (p0, p1):
        assert p.predicted == p.alpha - p.q_term - p.r_term
        assert p.c_g == pytest.approx(C, abs=1e-12)
    for g in (0.0, 1.0):
        assert predicted_rejection(_uni(g, third=0.0), 0.1).predicted == 0.1
    with pytest.raises(ValidationError):
        predicted_rejection(_uni(1.0), 0.005)


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_univariate_reduction_on_grid(gamma):
    for alpha in np.arange(0.05, 0.951, 0.05):
        got = predicted_rejection(_uni(gamma), float(alpha)).predicted
        assert got == pytest.approx(_closed_form_rate(float(alpha), gamma), abs=1e-10)


@pytest.mark.parametrize("rho", [0.0, 0.1, 0.5, 0.9])
def test_psi_off_diagonal_nonnegative(rho):
    spec = CovarianceSpec.equicorrelation(30, rho) if rho else CovarianceSpec.identity(30)
    for alpha in (0.02, 0.1, 0.5, 0.9):
        assert psi_alpha(spec, alpha).values[1] >= 0


@pytest.mark.parametrize("spec", [CovarianceSpec.identity(10), CovarianceSpec.equicorrelation(10, 0.4)])
def test_tail_vanishing(spec):
    inputs = ExpansionInputs(spec, 100, 0.0, factor_moments(10, 0.4, 2.0))
    psi = psi_alpha(spec, 1e-9)
    assert np.all(np.abs(psi.values) <= 1e-8)
    assert abs(q_n(inputs, psi.t)) <= 1e-8


def _random_data(d, n=40, seed=0):
    g = np.random.default_rng(seed)
    return DataSet(g.exponential(size=(n, d)) - 1.0 + 0.3 * g.standard_normal((n, 1)))


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_streaming_contraction_equals_dense(d):
    x = _random_data(d, seed=d)
    tensor = np.einsum("ij,ik,il->jkl", x.values, x.values, x.values) / x.n
    for spec in (CovarianceSpec.equicorrelation(d, 0.3), CovarianceSpec.ar1(d, 0.5)):
        psi = rect_grad_integral(spec, 1.2, 2)
        p = psi.to_dense()
        explicit = np.einsum("jkl,jk,lm->", tensor, p, p)  # <T (x) 1, Psi (x) Psi>
        assert contract_psi_squared(x, psi) == pytest.approx(explicit, rel=1e-9)
        assert contract_psi_squared(tensor, psi) == pytest.approx(explicit, rel=1e-9)
    # pattern sums agree with the dense tensor on the exchangeable path
    spec = CovarianceSpec.equicorrelation(d, 0.3)
    psi = rect_grad_integral(spec, 1.2, 2)
    summ = third_moment_summary(x)
    assert contract_psi_squared(summ, psi) == pytest.approx(contract_psi_squared(tensor, psi), rel=1e-9)
    t3 = rect_grad_integral(spec, 1.2, 3)
    assert contract_third(summ, t3) == pytest.approx(contract_third(tensor, t3), rel=1e-9)


@pytest.mark.parametrize("d", [2, 4])
@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_scale_invariance(d, gamma):
    x = _random_data(d, seed=10 + d)
    for spec in (CovarianceSpec.equicorrelation(d, 0.3), CovarianceSpec.identity(d)):
        base = predicted_rejection(ExpansionInputs(spec, 80, gamma, x), 0.1)
        for c in (0.5, 3.0):
            scaled = predicted_rejection(ExpansionInputs(spec.scaled(c), 80, gamma, DataSet(c * x.values)), 0.1)
            assert scaled.predicted == pytest.approx(base.predicted, abs=1e-10)


def test_pattern_summary_needs_exchangeable_psi():
    psi = rect_grad_integral(CovarianceSpec.ar1(3, 0.5), 1.0, 2)
    with pytest.raises(CapabilityError):
        contract_psi_squared(ThirdMomentSummary(1.0, 0.0, 0.0, 0, 3), psi)


def test_cornish_fisher_trivial_case():
    # rows +-e_j scaled by sqrt(d): second moment exactly I, third moments exactly 0
    d = 3
    rows = np.vstack([sqrt(d) * np.eye(d), -sqrt(d) * np.eye(d)])
    sample = DataSet(rows)
    for gamma in (0.0, 1.0):
        inputs = ExpansionInputs(CovarianceSpec.identity(d), sample.n, gamma, sample)
        got = cornish_fisher_quantile(inputs, sample, 0.9)
        assert got == pytest.approx(gmax_quantile(CovarianceSpec.identity(d), 0.9), abs=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_cornish_fisher_univariate_reduction(gamma):
    x = DataSet(np.random.default_rng(4).exponential(size=(50, 1)) - 1.0)
    n = x.n
    m2, m3 = float(np.mean(x.values**2)), float(np.mean(x.values**3))
    for p in (0.1, 0.5, 0.9):
        c = stats.norm.ppf(p)
        f = stats.norm.pdf(c)
        correction = -((m2 - 1) / 2 * (-c * f) - gamma * m3 / (6 * sqrt(n)) * (c * c - 1) * f) / f
        inputs = ExpansionInputs(CovarianceSpec.identity(1), n, gamma, x)
        assert cornish_fisher_quantile(inputs, x, p) == pytest.approx(c + correction, abs=1e-12)


@pytest.mark.parametrize("spec", [CovarianceSpec.identity(5), CovarianceSpec.equicorrelation(5, 0.4)])
def test_cornish_fisher_bounded_by_density_floor(spec):
    x = _random_data(5, n=60, seed=21)
    inputs = ExpansionInputs(spec, x.n, 1.0, x)
    diag = gmax_diagnostics(spec, draws=100_000, stream=StreamKey(2, 0, Purpose.GAUSSIAN_REF))
    for p in (0.05, 0.5, 0.95):
        c, qhat, _ = cornish_fisher_terms(inputs, x, p)
        out = cornish_fisher_quantile(inputs, x, p)
        assert np.isfinite(out)
        assert abs(out - c) <= abs(qhat) / diag.density_floor(p)


def test_spherical_limit_examples():
    exact = -sqrt(2) / 3 * 2 * log(0.9)
    assert spherical_limit(2.0, 0.1, 0.0) == pytest.approx(exact, rel=1e-14)
    # published value 0.099327 is rounded from 0.0993348
    assert spherical_limit(2.0, 0.1, 0.0) == pytest.approx(0.099327, abs=1e-5)
    assert spherical_limit(3.0, 0.2, 1.0) == 0.0
    assert spherical_limit(0.0, 0.3, 0.5) == 0.0


def test_factor_leading_examples():
    z = stats.norm.ppf(0.1)
    assert factor_expansion_leading(2.0, 1.0, 0.1, 100) == pytest.approx(0.2 * z * z / 2 * stats.norm.pdf(z), rel=1e-12)
    assert factor_expansion_leading(2.0, 1.0, 0.1, 100) == pytest.approx(0.028829, abs=1e-5)
    assert factor_expansion_leading(0.0, 0.0, 0.1, 100) == 0.0
    a = stats.norm.cdf(-1.0)
    assert factor_expansion_leading(2.0, 1.0, a, 50) == pytest.approx(factor_expansion_leading(2.0, 0.0, a, 50))
    # d = 1 reduction: equals R_n of the univariate case
    assert factor_expansion_leading(2.0, 1.0, 0.1, 100) == pytest.approx(r_n(_uni(1.0), 0.1), rel=1e-10)


def test_spherical_moments_shape():
    s = spherical_moments(7, 2.0)
    assert (s.s1, s.s2, s.s3) == (14.0, 0.0, 0.0)


@pytest.mark.parametrize("shape,sym", [(1.0, False), (0.5, True)])
def test_copula_moments_match_monte_carlo(shape, sym):
    d, rho = 4, 0.3
    sigma, summ = copula_equicorrelation_moments(d, rho, shape, symmetrize=sym)
    x = gen_copula(CopulaConfig(CovarianceSpec.equicorrelation(d, rho), 400_000, shape, symmetrize=sym), np.random.default_rng(7))
    xv = x.values  # marginals are already centered
    emp_cov = np.cov(xv.T)
    cov = sigma.sigma**2 * (np.full((d, d), sigma.rho) + (1 - sigma.rho) * np.eye(d))
    np.testing.assert_allclose(emp_cov, cov, atol=0.03 * cov[0, 0])
    emp = third_moment_summary(DataSet(xv))
    for a, b, k in ((emp.s1, summ.s1, d), (emp.s2, summ.s2, d * d), (emp.s3, summ.s3, d**3)):
        assert a == pytest.approx(b, abs=0.05 * k)
