from __future__ import annotations

import numpy as np
import pytest
from conftest import binary_configs, empirical_pmf, within_binomial_band
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from btvtvar.ising import (
    ChainField,
    IsingParams,
    NdarmaParams,
    cftp_field_sample,
    cftp_ising_sample,
    exact_chain_sample,
    interior_field,
    ising_field,
    ising_log_pmf,
    ising_log_pmf_unnorm,
    ndarma_joint_pmf,
    ndarma_sample_path,
    p_to_theta_kappa,
    theta_kappa_to_p,
    transfer_matrix_normalizer,
)

open_unit = st.floats(1e-6, 1 - 1e-6)


def brute_log_normalizer(f: ChainField) -> float:
    configs = binary_configs(f.L)
    return float(np.logaddexp.reduce(ising_log_pmf_unnorm(configs, f)))


def exact_pmf(f: ChainField) -> np.ndarray:
    return np.exp(ising_log_pmf(binary_configs(f.L), f))


def tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


# --- unnormalized mass


def test_unnorm_all_zero():
    f = ChainField([0.3, -1.0, 2.0], 1.5)
    assert ising_log_pmf_unnorm([0, 0, 0], f) == 0.0


def test_unnorm_single_site():
    assert ising_log_pmf_unnorm([1], ChainField([0.7], 0.0)) == 0.7


def test_unnorm_three_sites_closed_form():
    th, ka = 0.5, 1.0
    th_star = np.log(np.exp(0.5) * (np.exp(0.5) + 1.0) / (np.exp(1.5) + 1.0))
    f = ising_field(IsingParams(th, ka), 3)
    assert ising_log_pmf_unnorm([1, 1, 0], f) == pytest.approx(th + th_star + ka, abs=1e-14)


def test_theta_star_identity_and_ordering():
    th = np.linspace(-4, 4, 100)[:, None]
    ka = np.linspace(0, 4, 100)[None, :]
    ts = interior_field(th, ka)
    np.testing.assert_allclose(np.exp(ts), np.exp(th) * (np.exp(th) + 1) / (np.exp(th + ka) + 1), rtol=1e-12)
    assert np.all(ts <= th + 1e-15)


def test_params_validation():
    with pytest.raises(ValueError):
        IsingParams(0.0, -0.1)
    with pytest.raises(ValueError):
        ChainField([], 0.0)
    with pytest.raises(ValueError):
        ChainField([0.0], -1.0)


# --- parameter bijection


def test_forward_independent_case():
    p = theta_kappa_to_p(IsingParams(0.0, 0.0))
    assert p.p1 == pytest.approx(0.0, abs=1e-15)
    assert p.p2 == pytest.approx(0.5, abs=1e-15)


def test_forward_box_corner_round_trips():
    p = theta_kappa_to_p(IsingParams(-4.0, 4.0))
    assert 0 < p.p1 < 1 and 0 < p.p2 < 1
    back = p_to_theta_kappa(p)
    assert back.theta == pytest.approx(-4.0, abs=1e-10)
    assert back.kappa == pytest.approx(4.0, abs=1e-10)


def _solve_forward_by_bisection(theta: float, kappa: float) -> tuple[float, float]:
    """Solve the two defining equations for (p1, p2) by nested bisection."""

    def theta_eq(p1, p2):
        return np.log(p2 * (1 - p1) / (p1 + (1 - p2) * (1 - p1))) - theta

    def p2_of(p1):
        return optimize.bisect(lambda p2: theta_eq(p1, p2), 1e-14, 1 - 1e-14, xtol=1e-15, rtol=1e-15, maxiter=500)

    def kappa_eq(p1):
        p2 = p2_of(p1)
        q = p2 * (1 - p2) * (1 - p1) ** 2
        return np.log((p1 + q) / q) - kappa

    # the theta equation has a root in p2 only while p1 < 1 / (1 + e^theta)
    p1 = optimize.bisect(kappa_eq, 1e-14, 1.0 / (1.0 + np.exp(theta)) - 1e-12, xtol=1e-15, rtol=1e-15, maxiter=500)
    return p1, p2_of(p1)


def test_forward_matches_root_finding_oracle():
    p1, p2 = _solve_forward_by_bisection(2.0, 2.0)
    got = theta_kappa_to_p(IsingParams(2.0, 2.0))
    assert got.p1 == pytest.approx(p1, abs=1e-10)
    assert got.p2 == pytest.approx(p2, abs=1e-10)


def test_inverse_independent_case():
    ip = p_to_theta_kappa(NdarmaParams(0.0, 0.5))
    assert ip.theta == pytest.approx(0.0, abs=1e-15)
    assert ip.kappa == pytest.approx(0.0, abs=1e-15)
    assert ip.theta_star == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(p2=open_unit)
def test_inverse_without_copying_is_logit(p2):
    ip = p_to_theta_kappa(NdarmaParams(0.0, p2))
    logit = np.log(p2 / (1 - p2))
    assert ip.kappa == pytest.approx(0.0, abs=1e-15)
    assert ip.theta == pytest.approx(logit, abs=1e-12)
    assert ip.theta_star == pytest.approx(logit, abs=1e-12)


def test_inverse_round_trip_1000_pairs(rng):
    for p1, p2 in rng.uniform(0, 1, (1000, 2)):
        back = theta_kappa_to_p(p_to_theta_kappa(NdarmaParams(p1, p2)))
        assert back.p1 == pytest.approx(p1, abs=1e-10)
        assert back.p2 == pytest.approx(p2, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(theta=st.floats(-4, 4), kappa=st.floats(0, 4))
def test_forward_inverse_on_box(theta, kappa):
    p = theta_kappa_to_p(IsingParams(theta, kappa))
    back = p_to_theta_kappa(p)
    assert back.theta == pytest.approx(theta, abs=1e-10)
    assert back.kappa == pytest.approx(kappa, abs=1e-10)
    assert back.theta_star <= back.theta


@pytest.mark.parametrize("p1,p2", [(1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (-0.1, 0.5)])
def test_inverse_domain_errors(p1, p2):
    with pytest.raises(ValueError):
        p_to_theta_kappa(NdarmaParams(p1, p2))


# --- NDARMA pmf


def test_ndarma_single_site():
    assert ndarma_joint_pmf([1], NdarmaParams(0.3, 0.4)) == pytest.approx(0.4, abs=1e-15)


def test_ndarma_zero_pair():
    assert ndarma_joint_pmf([0, 0], NdarmaParams(0.3, 0.4)) == pytest.approx(0.432, abs=1e-14)


def test_ndarma_sums_to_one(rng):
    for _ in range(5):
        p = NdarmaParams(*rng.uniform(0, 1, 2))
        assert ndarma_joint_pmf(binary_configs(10), p).sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(p1=st.floats(0, 0.999), p2=open_unit, L=st.integers(1, 10))
def test_ising_matches_ndarma(p1, p2, L):
    prm = NdarmaParams(p1, p2)
    f = ising_field(p_to_theta_kappa(prm), L)
    configs = binary_configs(L)
    np.testing.assert_allclose(np.exp(ising_log_pmf(configs, f)), ndarma_joint_pmf(configs, prm), atol=1e-10)


# --- normalizer


def test_single_site_prior_field_is_marginal_logit():
    for p1, p2 in [(0.3, 0.4), (0.9, 0.05), (0.0, 0.7)]:
        f = ising_field(p_to_theta_kappa(NdarmaParams(p1, p2)), 1)
        assert f.site_fields[0] == pytest.approx(np.log(p2 / (1 - p2)), abs=1e-12)


def test_normalizer_single_site():
    assert transfer_matrix_normalizer(ChainField([0.0], 0.0)) == pytest.approx(np.log(2.0), abs=1e-15)


def test_normalizer_independent_sites():
    th, L = 0.8, 7
    assert transfer_matrix_normalizer(ChainField(np.full(L, th), 0.0)) == pytest.approx(
        L * np.log1p(np.exp(th)), abs=1e-12
    )


def test_normalizer_matches_brute_force(rng):
    for _ in range(5):
        f = ChainField(rng.normal(scale=2.0, size=12), rng.uniform(0, 4))
        assert transfer_matrix_normalizer(f) == pytest.approx(brute_log_normalizer(f), abs=1e-10)


def test_normalizer_long_chain_is_finite():
    f = ChainField(np.full(5000, 3.0), 4.0)
    assert np.isfinite(transfer_matrix_normalizer(f))


# --- exact samplers


def test_exact_sampler_degenerate_field(rng):
    draws = exact_chain_sample(ChainField(np.full(8, -1e6), 1.0), rng, size=100)
    assert np.all(draws == 0)


def test_exact_sampler_independent_sites(rng):
    fields = np.array([-1.0, 0.0, 0.5, 2.0])
    draws = exact_chain_sample(ChainField(fields, 0.0), rng, size=100_000)
    p = 1 / (1 + np.exp(-fields))
    for t in range(4):
        assert within_binomial_band(draws[:, t].mean(), p[t], 100_000)


def test_exact_sampler_matches_pmf(rng):
    f = ChainField(rng.normal(size=6), rng.uniform(0, 3))
    draws = exact_chain_sample(f, rng, size=100_000)
    assert tv(empirical_pmf(draws), exact_pmf(f)) < 0.01


def test_exact_sampler_deterministic():
    f = ChainField([0.2, -0.3, 1.0, 0.0], 1.2)
    a = exact_chain_sample(f, np.random.default_rng(5), size=50)
    b = exact_chain_sample(f, np.random.default_rng(5), size=50)
    np.testing.assert_array_equal(a, b)


def test_cftp_fair_coins(rng):
    draws = cftp_ising_sample(IsingParams(0.0, 0.0), 5, rng, size=20_000)
    assert within_binomial_band(draws.mean(), 0.5, draws.size)


def test_cftp_matches_pmf(rng):
    prm = IsingParams(1.0, 2.0)
    draws = cftp_ising_sample(prm, 6, rng, size=100_000)
    assert tv(empirical_pmf(draws), exact_pmf(ising_field(prm, 6))) < 0.01


def test_cftp_deterministic():
    prm = IsingParams(-0.5, 3.0)
    a = cftp_ising_sample(prm, 10, np.random.default_rng(77), size=30)
    b = cftp_ising_sample(prm, 10, np.random.default_rng(77), size=30)
    np.testing.assert_array_equal(a, b)


def test_cftp_inhomogeneous_field_matches_pmf(rng):
    f = ChainField(rng.normal(size=5), 1.5)
    draws = np.stack([cftp_field_sample(f, rng) for _ in range(40_000)])
    assert tv(empirical_pmf(draws), exact_pmf(f)) < 0.02


def test_cftp_horizon_cap():
    # fields cancel half the coupling, so all-ones and all-zeros are both near-absorbing
    neighbours = np.r_[1, np.full(28, 2), 1]
    f = ChainField(-25.0 * neighbours, 50.0)
    with pytest.raises(RuntimeError):
        cftp_field_sample(f, np.random.default_rng(0), max_sweeps=2)


def test_samplers_agree_two_sample_chi_square(rng):
    prm = IsingParams(-0.7, 2.5)
    f = ising_field(prm, 6)
    a = empirical_pmf(exact_chain_sample(f, rng, size=100_000)) * 100_000
    b = empirical_pmf(cftp_ising_sample(prm, 6, rng, size=100_000)) * 100_000
    table = np.stack([a, b])
    table = table[:, table.sum(0) > 0]
    assert stats.chi2_contingency(table)[1] > 1e-3


# --- NDARMA simulation


def test_ndarma_pure_copying_is_constant(rng):
    prm = NdarmaParams(np.nextafter(1.0, 0.0), 0.3)
    draws = ndarma_sample_path(prm, 25, rng, size=200)
    assert np.all(draws == draws[:, :1])


def test_ndarma_no_copying_is_iid(rng):
    draws = ndarma_sample_path(NdarmaParams(0.0, 0.3), 6, rng, size=50_000)
    for t in range(6):
        assert within_binomial_band(draws[:, t].mean(), 0.3, 50_000)
    assert abs(np.corrcoef(draws[:, 2], draws[:, 3])[0, 1]) < 0.02


def test_ndarma_simulation_matches_pmf(rng):
    prm = NdarmaParams(*rng.uniform(0, 1, 2))
    draws = ndarma_sample_path(prm, 8, rng, size=1_000_000)
    assert tv(empirical_pmf(draws), ndarma_joint_pmf(binary_configs(8), prm)) < 0.02


def test_positive_lag1_autocorrelation(rng):
    for theta, kappa in [(-1.0, 0.5), (0.0, 2.0), (1.5, 3.5)]:
        draws = exact_chain_sample(ising_field(IsingParams(theta, kappa), 40), rng, size=5_000).astype(float)
        x, y = draws[:, 19], draws[:, 20]
        assert np.corrcoef(x, y)[0, 1] > 0
