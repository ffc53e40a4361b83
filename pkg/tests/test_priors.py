from __future__ import annotations

import numpy as np
import pytest
from conftest import within_binomial_band
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from btvtvar import distributions as dist
from btvtvar.priors import (
    HyperParams,
    ShrinkageState,
    assignment_probs,
    log_prior_density,
    sample_prior_component,
    sample_prior_shrinkage,
    sample_w3_prior,
    spike_mask,
    stick_break_weights,
)


def make_state(hp: HyperParams, rng) -> ShrinkageState:
    s = sample_prior_shrinkage(hp, rng)
    s.tau = 1.3
    return s


def margins(hp, rng):
    return rng.normal(size=(hp.H, hp.N)), rng.normal(size=(hp.H, hp.N)), rng.normal(size=(hp.H, hp.P))


def test_hyperparameter_defaults():
    hp = HyperParams(N=10, P=4, H=4)
    assert hp.b_tau == 256.0
    assert hp.b_lambda == pytest.approx(3.0 ** (1 / 6))
    assert len(hp.alpha_grid) == 10
    assert hp.alpha_grid[0] == pytest.approx(4.0**-3)
    assert hp.alpha_grid[-1] == pytest.approx(4.0**-0.1)
    assert np.allclose(np.diff(hp.alpha_grid), np.diff(hp.alpha_grid)[0])
    with pytest.raises(ValueError):
        HyperParams(N=2, P=1, H=1, W_inf=0.0)


# --- component draws


def test_component_vanishes_with_scale(rng):
    hp = HyperParams(N=5, P=3, H=2)
    s = make_state(hp, rng)
    s.tau = 1e-16
    s.phi = np.array([0.5, 0.5])
    c = sample_prior_component(hp, s, 0, rng)
    for a in (c.alpha1, c.alpha2, c.alpha3):
        assert np.all(np.abs(a) < 1e-6)


def test_component_variance(rng):
    hp = HyperParams(N=3, P=2, H=2)
    s = make_state(hp, rng)
    draws = np.array([sample_prior_component(hp, s, 1, rng).alpha1 for _ in range(100_000)])
    expect = s.phi[1] * s.tau * s.W1[1]
    np.testing.assert_allclose(draws.var(axis=0), expect, rtol=0.05)


def test_component_reproducible():
    hp = HyperParams(N=4, P=2, H=3)
    s = make_state(hp, np.random.default_rng(0))
    a = sample_prior_component(hp, s, 2, np.random.default_rng(11))
    b = sample_prior_component(hp, s, 2, np.random.default_rng(11))
    np.testing.assert_array_equal(a.alpha3, b.alpha3)
    np.testing.assert_array_equal(a.alpha1, b.alpha1)


# --- stick breaking


def test_full_first_stick():
    np.testing.assert_array_equal(stick_break_weights([1.0, 0.3, 0.6]), [1.0, 0.0, 0.0])


def test_geometric_halving():
    np.testing.assert_allclose(stick_break_weights([0.5, 0.5, 0.5]), [0.5, 0.25, 0.125])


def test_cumulative_spike_probability_monotone(rng):
    for v in rng.uniform(0, 1, (1000, 6)):
        w = stick_break_weights(v)
        assert np.all(w >= 0) and w.sum() <= 1 + 1e-15
        assert np.all(np.diff(np.cumsum(w)) >= 0)


@settings(max_examples=100, deadline=None)
@given(v=hnp.arrays(float, st.integers(1, 8), elements=st.floats(0, 1)))
def test_truncated_weights_sum_to_one(v):
    v = v.copy()
    v[-1] = 1.0
    assert assignment_probs(v).sum() == pytest.approx(1.0, abs=1e-12)


def test_assignment_probs_need_truncation():
    with pytest.raises(ValueError):
        assignment_probs([0.3, 0.5])


# --- spike and slab draws


def test_all_spike_when_first_stick_full(rng):
    hp = HyperParams(N=2, P=4, H=3)
    v = np.tile([1.0, 0.5, 0.5, 1.0], (3, 1))
    z, W3 = sample_w3_prior(hp, v, rng)
    assert np.all(z == 1)
    assert np.all(W3 == hp.W_inf)


def test_mass_at_last_level_gives_early_slabs(rng):
    hp = HyperParams(N=2, P=4, H=1)
    eps = 1e-9
    v = np.array([[eps, eps, eps, 1.0]])
    for _ in range(200):
        z, W3 = sample_w3_prior(hp, v, rng)
        assert np.all(z == 4)
        assert np.all(W3[0, :3] != hp.W_inf) and W3[0, 3] == hp.W_inf


def test_spike_frequencies_match_cumulative_weights(rng):
    hp = HyperParams(N=2, P=5, H=1)
    v = np.array([[0.2, 0.3, 0.1, 0.4, 1.0]])
    n = 100_000
    v_many = np.repeat(v, n, axis=0)
    z, W3 = sample_w3_prior(hp, v_many, rng)
    cum = np.cumsum(assignment_probs(v[0]))
    freq = spike_mask(z).mean(axis=0)
    for j in range(5):
        assert within_binomial_band(freq[j], min(cum[j], 1.0 - 1e-12), n)
    assert np.all(np.diff(freq) >= 0)
    assert np.all((W3 == hp.W_inf) == spike_mask(z))


def test_slab_variances_follow_inverse_gamma(rng):
    hp = HyperParams(N=2, P=3, H=1)
    v = np.repeat([[1e-12, 1e-12, 1.0]], 50_000, axis=0)
    _, W3 = sample_w3_prior(hp, v, rng)
    assert stats.kstest(W3[:, 0], stats.invgamma(hp.a_w, scale=hp.b_w).cdf).pvalue > 1e-3


def test_prior_shrinkage_invariants(rng):
    hp = HyperParams(N=4, P=4, H=3)
    for _ in range(200):
        s = sample_prior_shrinkage(hp, rng)
        s.validate(hp.W_inf)
        assert s.alpha_conc in hp.alpha_grid


def test_scale_products_match_direct_hierarchy(rng):
    hp = HyperParams(N=2, P=2, H=3, b_tau=2.0)
    n = 100_000
    via_sampler = np.empty(n)
    for i in range(n):
        s = sample_prior_shrinkage(hp, rng)
        via_sampler[i] = s.phi[0] * s.tau
    grid = np.asarray(hp.alpha_grid)
    conc = grid[rng.integers(grid.size, size=n)]
    phi1 = np.array([rng.dirichlet(np.full(3, a))[0] for a in conc])
    tau = rng.gamma(3 * conc, 1.0 / hp.b_tau)
    assert stats.ks_2samp(via_sampler, phi1 * tau).pvalue > 1e-3


# --- prior density


def test_density_doubling_tau(rng):
    hp = HyperParams(N=3, P=2, H=2)
    s = make_state(hp, rng)
    a1, a2, a3 = margins(hp, rng)
    base = log_prior_density(s, (a1, a2, a3), hp)
    s2 = s.copy()
    s2.tau = 2 * s.tau
    shape = hp.H * s.alpha_conc
    gamma_diff = (shape - 1) * np.log(2.0) - hp.b_tau * s.tau
    psi = (s.phi * s.tau)[:, None]
    gauss_diff = 0.0
    for a, W in ((a1, s.W1), (a2, s.W2), (a3, s.W3)):
        gauss_diff += np.sum(-0.5 * np.log(2.0) - a**2 / (2 * psi * W) * (0.5 - 1.0))
    assert log_prior_density(s2, (a1, a2, a3), hp) - base == pytest.approx(gamma_diff + gauss_diff, abs=1e-9)


def test_density_rejects_off_simplex(rng):
    hp = HyperParams(N=3, P=2, H=2)
    s = make_state(hp, rng)
    s.phi = s.phi * 1.01
    with pytest.raises(ValueError):
        log_prior_density(s, margins(hp, rng), hp)


def test_density_rejects_spike_mismatch(rng):
    hp = HyperParams(N=3, P=2, H=2)
    s = make_state(hp, rng)
    s.W3 = np.where(spike_mask(s.z), 5.0, s.W3)
    with pytest.raises(ValueError):
        log_prior_density(s, margins(hp, rng), hp)


def test_density_single_entry_is_gaussian_ratio(rng):
    hp = HyperParams(N=3, P=2, H=2)
    s = make_state(hp, rng)
    a1, a2, a3 = margins(hp, rng)
    b1 = a1.copy()
    b1[1, 2] += 0.7
    var = s.phi[1] * s.tau * s.W1[1, 2]
    expect = dist.normal_logpdf(b1[1, 2], var) - dist.normal_logpdf(a1[1, 2], var)
    got = log_prior_density(s, (b1, a2, a3), hp) - log_prior_density(s, (a1, a2, a3), hp)
    assert got == pytest.approx(expect, abs=1e-12)


def test_density_accepts_component_list(rng):
    from btvtvar.tensor_var import TensorComponent

    hp = HyperParams(N=3, P=2, H=2)
    s = make_state(hp, rng)
    a1, a2, a3 = margins(hp, rng)
    comps = [TensorComponent(a1[h], a2[h], a3[h]) for h in range(2)]
    assert log_prior_density(s, comps, hp) == log_prior_density(s, (a1, a2, a3), hp)
