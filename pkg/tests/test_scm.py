import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from hiddenconf.detector import DetectorConfig, detect
from hiddenconf.errors import ConfigurationError, DomainError
from hiddenconf.scm import (
    BinaryScmSpec,
    GaussScmSpec,
    analytic_cross_covariances,
    analytic_partial_correlation,
    exact_regression_bias,
    faithfulness_locus,
    omitted_variable_bias,
    partial_correlation_asymptote,
    sample_binary_scm,
    sample_gauss_scm,
    spec_from_json,
)

HETERO = GaussScmSpec(sigma_t=2 / 3, sigma_u=1.0, sigma_theta_t=1.0, sigma_theta_y=1.0, sigma_theta_u=5.0)


def sem_covariance(spec):
    """Covariance of (t_j, y_i, t_i) from the structural loadings on independent sources."""
    # sources: theta_u, theta_t, theta_y, then (e_u, e_t, e_y) for i and for j
    sd = np.array([spec.sigma_theta_u, spec.sigma_theta_t, spec.sigma_theta_y,
                   spec.sigma_u, spec.sigma_t, spec.sigma_y, spec.sigma_u, spec.sigma_t, spec.sigma_y])

    def unit(*pairs):
        v = np.zeros(9)
        for idx, w in pairs:
            v[idx] += w
        return v

    g, l, b = spec.gamma, spec.lam, spec.beta
    u_i, u_j = unit((0, 1), (3, 1)), unit((0, 1), (6, 1))
    t_i = g * u_i + unit((1, 1), (4, 1))
    t_j = g * u_j + unit((1, 1), (7, 1))
    y_i = l * u_i + b * t_i + unit((2, 1), (5, 1))
    a = np.vstack([t_j, y_i, t_i]) * sd
    return a @ a.T


def sem_partial_correlation(spec):
    prec = np.linalg.inv(sem_covariance(spec))
    return -prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1])


def pair_arrays(data):
    tj = np.array([b.t[0] for b in data.blocks])
    yi = np.array([b.y[1] for b in data.blocks])
    ti = np.array([b.t[1] for b in data.blocks])
    return tj, yi, ti


# --- samplers ---------------------------------------------------------------------

def test_seed_determinism():
    a = sample_gauss_scm(HETERO, 20, 3, seed=7)
    b = sample_gauss_scm(HETERO, 20, 3, seed=7)
    c = sample_gauss_scm(HETERO, 20, 3, seed=8)
    assert all(np.array_equal(x.t, y.t) and np.array_equal(x.y, y.y) for x, y in zip(a.blocks, b.blocks))
    assert not np.array_equal(a.blocks[0].t, c.blocks[0].t)
    d1 = sample_binary_scm(BinaryScmSpec(lam=2), 20, 3, seed=7)
    d2 = sample_binary_scm(BinaryScmSpec(lam=2), 20, 3, seed=7)
    assert all(np.array_equal(x.y, y.y) for x, y in zip(d1.blocks, d2.blocks))


def test_environments_stable_when_K_grows():
    small = sample_gauss_scm(HETERO, 5, 4, seed=1)
    large = sample_gauss_scm(HETERO, 50, 4, seed=1)
    for x, y in zip(small.blocks, large.blocks):
        assert np.array_equal(x.t, y.t)


def test_binary_kinds_and_hidden_u():
    data = sample_binary_scm(BinaryScmSpec(), 30, [1, 2, 3] * 10, seed=0)
    assert data.kinds == {"t": "binary", "y": "binary"} and data.p == 0
    assert data.sizes == [1, 2, 3] * 10
    assert not data.ground_truth
    dbg = sample_binary_scm(BinaryScmSpec(), 30, 2, seed=0, debug=True)
    assert len(dbg.ground_truth["u"]) == 30


def test_binary_treatment_marginal_symmetric():
    data = sample_binary_scm(BinaryScmSpec(lam=0.0), 20000, 2, seed=1)
    # observations within an environment are dependent, so the SE uses environment means
    t = np.array([b.t.mean() for b in data.blocks])
    assert abs(t.mean() - 0.5) < 3 * t.std() / math.sqrt(len(t))


def test_mechanism_independence():
    data = sample_gauss_scm(HETERO, 10000, 1, seed=2, debug=True)
    th_t, th_u = np.array(data.ground_truth["theta_t"]), np.array(data.ground_truth["theta_u"])
    assert abs(np.corrcoef(th_t, th_u)[0, 1]) < 3 / math.sqrt(10000)


def test_degenerate_mechanisms_are_constant():
    data = sample_gauss_scm(HETERO, 50, 2, seed=0, degenerate=["Y", "U"], debug=True)
    assert set(data.ground_truth["theta_u"]) == {0.0} and set(data.ground_truth["theta_y"]) == {0.0}
    with pytest.raises(ConfigurationError):
        sample_gauss_scm(HETERO, 5, 2, degenerate=["Z"])
    with pytest.raises(ConfigurationError):
        sample_gauss_scm(HETERO, 5, 2, degenerate=["T", "U"])


def test_spec_validation_and_json():
    with pytest.raises(ConfigurationError):
        GaussScmSpec(sigma_theta_t=0, sigma_theta_u=0)
    with pytest.raises(ConfigurationError):
        BinaryScmSpec(sigma_theta_y=-1)
    with pytest.raises(ConfigurationError):
        sample_binary_scm(BinaryScmSpec(), 0, 2)
    assert spec_from_json(HETERO.to_json()) == HETERO
    assert spec_from_json({"model": "binary", "lambda": 3}) == BinaryScmSpec(lam=3)
    with pytest.raises(ConfigurationError):
        spec_from_json({"model": "poisson"})


def test_no_cross_channel_without_confounding():
    spec = GaussScmSpec(gamma=0.0, lam=0.0, sigma_theta_t=0.0, sigma_theta_u=1.0)
    tj, yi, _ = pair_arrays(sample_gauss_scm(spec, 20000, 2, seed=3))
    prod = (tj - tj.mean()) * (yi - yi.mean())
    assert abs(prod.mean()) < 3 * prod.std() / math.sqrt(len(prod))


# --- analytic moments -----------------------------------------------------------------

def test_moments_decoupled_model():
    m = analytic_cross_covariances(GaussScmSpec(beta=0, gamma=0, lam=0, sigma_theta_t=2.0, sigma_t=0.5))
    assert (m.cov_tj_yi, m.cov_ti_yi) == (0.0, 0.0)
    assert m.cov_tj_ti == pytest.approx(4.0) and m.var_t == pytest.approx(4.25)


def test_moments_unit_example():
    m = analytic_cross_covariances(GaussScmSpec(sigma_theta_u=1.0))
    assert m.cov_tj_yi == pytest.approx(3.0)


@pytest.mark.parametrize("spec", [GaussScmSpec(), HETERO, GaussScmSpec(beta=-0.5, gamma=2, lam=0.3, sigma_y=2)])
def test_moments_match_structural_oracle(spec):
    m = analytic_cross_covariances(spec)
    c = sem_covariance(spec)
    assert m.cov_tj_yi == pytest.approx(c[0, 1]) and m.cov_tj_ti == pytest.approx(c[0, 2])
    assert m.cov_ti_yi == pytest.approx(c[1, 2]) and m.var_t == pytest.approx(c[2, 2])
    assert m.var_y == pytest.approx(c[1, 1])


def test_moments_match_monte_carlo():
    K = 200_000
    data = sample_gauss_scm(HETERO, K, 2, seed=11)
    tj, yi, ti = pair_arrays(data)
    m = analytic_cross_covariances(HETERO)
    for (a, b), want in [((tj, yi), m.cov_tj_yi), ((tj, ti), m.cov_tj_ti), ((ti, yi), m.cov_ti_yi),
                         ((ti, ti), m.var_t), ((yi, yi), m.var_y)]:
        prod = (a - a.mean()) * (b - b.mean())
        assert abs(prod.mean() - want) < 3 * prod.std() / math.sqrt(K)


@pytest.mark.parametrize("spec", [GaussScmSpec(), HETERO, GaussScmSpec(gamma=-1.5, lam=2.0, sigma_theta_t=0.3)])
def test_partial_correlation_matches_precision_oracle(spec):
    assert analytic_partial_correlation(spec) == pytest.approx(sem_partial_correlation(spec), abs=1e-12)


def test_partial_correlation_matches_monte_carlo():
    K = 200_000
    tj, yi, ti = pair_arrays(sample_gauss_scm(HETERO, K, 2, seed=12))
    r = np.corrcoef([tj, yi, ti])
    sample = (r[0, 1] - r[0, 2] * r[1, 2]) / math.sqrt((1 - r[0, 2] ** 2) * (1 - r[1, 2] ** 2))
    rho = analytic_partial_correlation(HETERO)
    assert rho != 0
    assert abs(sample - rho) < 3 * (1 - rho ** 2) / math.sqrt(K - 4)


def test_partial_correlation_zero_structure_and_sign():
    assert analytic_partial_correlation(replace(HETERO, gamma=0.0)) == 0.0
    assert analytic_partial_correlation(replace(HETERO, lam=0.0)) == 0.0
    for s_u, s_t, s_tt, g, lam in itertools.product((0.5, 1, 2), (0.5, 2 / 3, 1.5), (0.5, 1, 3), (-2, 0.7), (0.4, 3)):
        base = GaussScmSpec(gamma=g, lam=lam, sigma_u=s_u, sigma_t=s_t, sigma_theta_t=s_tt)
        locus = replace(base, sigma_theta_u=faithfulness_locus(s_u, s_t, s_tt))
        assert abs(analytic_partial_correlation(locus)) < 1e-12
        off = replace(base, sigma_theta_u=2.5)
        assert analytic_partial_correlation(replace(off, lam=-lam)) == pytest.approx(
            -analytic_partial_correlation(off), abs=1e-14)


def test_partial_correlation_domain_errors():
    with pytest.raises(DomainError, match="T is constant"):
        analytic_partial_correlation(GaussScmSpec(gamma=0, sigma_t=0, sigma_theta_u=1))
    with pytest.raises(DomainError, match="exact linear function"):
        analytic_partial_correlation(GaussScmSpec(lam=0, sigma_y=0, sigma_theta_y=0))


def test_asymptotes():
    base = GaussScmSpec(sigma_theta_u=1.0)
    assert abs(partial_correlation_asymptote(base, "lambda", 1e2)
               - partial_correlation_asymptote(base, "lambda", 1e4)) < 1e-3
    assert abs(partial_correlation_asymptote(base, "gamma", 1e6)) < 1e-15
    with pytest.raises(DomainError):
        partial_correlation_asymptote(base, "gamma", 0.0)
    with pytest.raises(ConfigurationError):
        partial_correlation_asymptote(base, "beta", 2.0)


def test_large_gamma_decay_matches_oracle():
    # the decay rate is read from the exact moments; the acceptance suite checks the claimed rate
    base = GaussScmSpec(sigma_theta_u=1.0)
    vals = [partial_correlation_asymptote(base, "gamma", g) for g in (10, 100, 1000)]
    oracle = [sem_partial_correlation(replace(base, gamma=g)) for g in (10, 100, 1000)]
    assert vals == pytest.approx(oracle, rel=1e-9)


# --- bias and locus -------------------------------------------------------------------

def test_omitted_variable_bias_examples():
    assert omitted_variable_bias(GaussScmSpec(lam=0.0)) == 0.0
    assert omitted_variable_bias(GaussScmSpec()) == -1.0
    assert omitted_variable_bias(GaussScmSpec(gamma=2.0)) == -0.5
    with pytest.raises(DomainError):
        omitted_variable_bias(GaussScmSpec(gamma=0.0))


def ols_slope(data):
    t = np.concatenate([b.t for b in data.blocks])
    y = np.concatenate([b.y for b in data.blocks])
    x = np.column_stack([np.ones_like(t), t])
    coef, res, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    se = math.sqrt(resid.var() / (len(t) * t.var()))
    return coef[1], se


def test_omitted_variable_bias_matches_ols_when_t_noise_free():
    spec = GaussScmSpec(gamma=2.0, lam=1.0, sigma_t=0.0, sigma_theta_t=0.0, sigma_theta_u=1.0)
    slope, se = ols_slope(sample_gauss_scm(spec, 100_000, 1, seed=4))
    # the regression of y on t absorbs +lambda/gamma; the bias is beta minus that slope
    assert abs((spec.beta - slope) - omitted_variable_bias(spec)) < 3 * se


def test_exact_regression_bias_matches_ols():
    spec = GaussScmSpec(gamma=2.0, lam=1.0)
    slope, se = ols_slope(sample_gauss_scm(spec, 100_000, 1, seed=5))
    assert abs((spec.beta - slope) - exact_regression_bias(spec)) < 3 * se
    assert exact_regression_bias(replace(spec, sigma_t=0, sigma_theta_t=0)) == pytest.approx(-0.5)


def test_faithfulness_locus_examples():
    assert faithfulness_locus(1.0, 2 / 3, 1.0) == pytest.approx(1.5)
    assert faithfulness_locus(0.8, 0.8, 2.5) == 2.5
    with pytest.raises(DomainError):
        faithfulness_locus(1.0, 0.0, 1.0)


def test_strong_heterogeneity_detected():
    hits = [detect(sample_gauss_scm(GaussScmSpec(), 1000, 2, seed=s), DetectorConfig(test="partial_corr")).rejected
            for s in range(20)]
    assert np.mean(hits) >= 0.9
