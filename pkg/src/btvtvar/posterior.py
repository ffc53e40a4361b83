"""Unnormalized joint log posterior, written independently of the sampler.

Coefficient matrices are composed explicitly and residuals are formed row by
row, so none of the sampler's projection shortcuts are reused here.
"""

from __future__ import annotations

import numpy as np

from . import distributions as dist
from .ising import IsingParams, ising_field, ising_log_pmf
from .priors import HyperParams, log_prior_density


def log_likelihood(state, data) -> float:
    y = data.y
    P = data.P
    T, N = y.shape
    ll = 0.0
    for t in range(P, T):
        A = np.zeros((P, N, N))
        for h in range(state.H):
            if state.gamma[h, t - P]:
                A += state.alpha3[h][:, None, None] * np.outer(state.alpha1[h], state.alpha2[h])[None]
        mean = np.zeros(N)
        for j in range(P):
            mean += A[j] @ y[t - j - 1]
        ll += float(np.sum(dist.normal_logpdf(y[t] - mean, state.sigma2)))
    return ll


def log_joint(state, hp: HyperParams, data) -> float:
    lo, hi, km = hp.theta_box()
    if np.any(state.theta < lo) or np.any(state.theta > hi) or np.any(state.kappa < 0) or np.any(state.kappa > km):
        return -np.inf
    lp = log_prior_density(state.shrink, (state.alpha1, state.alpha2, state.alpha3), hp)
    width = (hi - lo) * km
    lp -= float(np.sum(np.log(width[width > 0])))
    L = state.gamma.shape[1]
    for h in range(state.H):
        f = ising_field(IsingParams(float(state.theta[h]), float(state.kappa[h])), L)
        lp += float(ising_log_pmf(state.gamma[h], f))
    lp += float(np.sum(dist.invgamma_logpdf(state.sigma2, hp.a_sigma, hp.b_sigma)))
    return lp + log_likelihood(state, data)
