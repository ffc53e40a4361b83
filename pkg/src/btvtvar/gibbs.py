"""Blocked Gibbs sampler for the time-varying tensor VAR.

Every stochastic update ``update_<block>`` has a matching ``log_cond_<block>``
that evaluates the block's full conditional log density at the current state.
The pairs are what the conditional-ratio tests compare against the joint
posterior in :mod:`btvtvar.posterior`.

Updates mutate the state they are given and return it.
"""

from __future__ import annotations

import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import linalg
from scipy.special import gammaln, logsumexp

from . import distributions as dist
from .ising import (
    ChainField,
    IsingParams,
    NdarmaParams,
    cftp_field_sample,
    exact_chain_sample,
    ising_field,
    ising_log_pmf,
    ising_log_pmf_unnorm,
    p_to_theta_kappa,
)
from .priors import (
    HyperParams,
    ShrinkageState,
    assignment_probs,
    margin_quadratic,
    sample_prior_component,
    sample_prior_shrinkage,
    sample_sticks,
    spike_mask,
)
from .tensor_var import TensorComponent, TimeSeries, component_bases, lagged_design

# Guard for components annihilated by shrinkage: keeps the giG draws proper.
C_FLOOR = 1e-300
MH_HALF_WIDTH = 0.5


@dataclass(frozen=True)
class ModelData:
    """Response rows ``y[P:]`` and their lags, ``lags[i, j] = y[P + i - j - 1]``."""

    y: np.ndarray
    P: int
    target: np.ndarray
    lags: np.ndarray

    @classmethod
    def from_series(cls, series, P: int) -> "ModelData":
        y = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
        if y.ndim != 2:
            raise ValueError("series must be a T x N matrix")
        if y.shape[0] <= P:
            raise ValueError(f"series length {y.shape[0]} must exceed the lag order {P}")
        return cls(y, P, y[P:].copy(), lagged_design(y, P))

    @property
    def L(self) -> int:
        return self.target.shape[0]

    @property
    def N(self) -> int:
        return self.target.shape[1]


@dataclass
class ModelState:
    alpha1: np.ndarray  # (H, N)
    alpha2: np.ndarray  # (H, N)
    alpha3: np.ndarray  # (H, P)
    gamma: np.ndarray  # (H, L) int8
    shrink: ShrinkageState
    theta: np.ndarray  # (H,)
    kappa: np.ndarray  # (H,)
    sigma2: np.ndarray  # (N,)

    @property
    def H(self) -> int:
        return self.alpha1.shape[0]

    @property
    def alpha_conc(self) -> float:
        return self.shrink.alpha_conc

    @property
    def components(self) -> list[TensorComponent]:
        return [TensorComponent(*m) for m in zip(self.alpha1, self.alpha2, self.alpha3)]

    @property
    def ising(self) -> list[IsingParams]:
        return [IsingParams(float(t), float(k)) for t, k in zip(self.theta, self.kappa)]

    def psi(self) -> np.ndarray:
        """Per-component prior scales phi_h * tau."""
        return self.shrink.phi * self.shrink.tau

    def copy(self) -> "ModelState":
        kw = {f.name: np.array(getattr(self, f.name)) for f in fields(self) if f.name != "shrink"}
        return ModelState(shrink=self.shrink.copy(), **kw)

    def validate(self, hp: HyperParams) -> None:
        self.shrink.validate(hp.W_inf)
        for name in ("alpha1", "alpha2", "alpha3", "sigma2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(self.sigma2 <= 0):
            raise ValueError("noise variances must be positive")
        if not np.all((self.gamma == 0) | (self.gamma == 1)):
            raise ValueError("paths must be binary")
        lo, hi, km = hp.theta_box()
        if np.any(self.theta < lo) or np.any(self.theta > hi) or np.any(self.kappa < 0) or np.any(self.kappa > km):
            raise ValueError("(theta, kappa) outside the prior box")


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 5000
    burn_in: int | None = None
    thin: int = 3
    seed: int = 0
    n_chains: int = 1
    griddy_inner_draws: int = 10
    griddy_method: str = "exact"
    aux_sampler: str = "cftp"
    ising_steps: int = 1
    progress_every: int = 0

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.n_iter // 3)
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.griddy_method not in ("exact", "monte_carlo"):
            raise ValueError("griddy_method must be 'exact' or 'monte_carlo'")
        if self.aux_sampler not in ("cftp", "transfer"):
            raise ValueError("aux_sampler must be 'cftp' or 'transfer'")
        if self.griddy_inner_draws < 1 or self.ising_steps < 1:
            raise ValueError("griddy_inner_draws and ising_steps must be positive")

    @property
    def kept_iterations(self) -> range:
        return range(self.burn_in, self.n_iter, self.thin)


@dataclass
class FitResult:
    draws: dict[str, np.ndarray]
    posterior_mean_A: np.ndarray  # (L, P, N, N)
    posterior_mean_bases: np.ndarray  # (H, P, N, N)
    gamma_prob: np.ndarray  # (H, L)
    diagnostics: dict[str, np.ndarray]
    P: int
    T: int

    @property
    def n_draws(self) -> int:
        return self.draws["tau"].shape[0]


# ---------------------------------------------------------------------------
# likelihood pieces


def lag_projections(state: ModelState, data: ModelData) -> np.ndarray:
    """u[h, t, j] = alpha2_h . y_{t-j}."""
    return np.einsum("tjn,hn->htj", data.lags, state.alpha2)


def component_scores(state: ModelState, data: ModelData) -> np.ndarray:
    """s[h, t] = alpha2_h' sum_j alpha3_h[j] y_{t-j}."""
    return np.einsum("htj,hj->ht", lag_projections(state, data), state.alpha3)


def fitted_values(state: ModelState, data: ModelData) -> np.ndarray:
    s = component_scores(state, data)
    return np.einsum("ht,hn->tn", state.gamma * s, state.alpha1)


def residual_excluding(state: ModelState, data: ModelData, h: int) -> np.ndarray:
    s = component_scores(state, data)
    g = state.gamma * s
    g[h] = 0.0
    return data.target - np.einsum("ht,hn->tn", g, state.alpha1)


def _gauss_draw(R: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(Q^{-1} b, Q^{-1}) given an upper-triangular R with R'R = Q."""
    mean = linalg.cho_solve((R, False), b)
    return mean + linalg.solve_triangular(R, rng.standard_normal(b.size), lower=False)


def _gauss_logpdf(x: np.ndarray, R: np.ndarray, b: np.ndarray) -> float:
    mean = linalg.cho_solve((R, False), b)
    d = R @ (x - mean)
    return float(-0.5 * x.size * dist.LOG_2PI + np.sum(np.log(np.diag(R))) - 0.5 * d @ d)


def _root_from_rows(rows: np.ndarray) -> np.ndarray:
    """Upper-triangular R with positive diagonal and R'R = rows'rows, via QR.

    Factoring the stacked rows keeps the weakly identified directions accurate
    when the data term dwarfs the prior term, which forming rows'rows would lose.
    """
    R = linalg.qr(rows, mode="r")[0][: rows.shape[1]]
    sign = np.sign(np.diag(R))
    if np.any(sign == 0) or not np.all(np.isfinite(R)):
        raise FloatingPointError("conditional precision is not positive definite")
    return R * sign[:, None]


# ---------------------------------------------------------------------------
# block 1: concentration, phi, tau


def _margin_dim(hp: HyperParams) -> int:
    return 2 * hp.N + hp.P


def _floored_C(state: ModelState) -> np.ndarray:
    C = margin_quadratic(state.alpha1, state.alpha2, state.alpha3, state.shrink)
    return np.maximum(C, C_FLOOR)


def concentration_log_weights(state: ModelState, hp: HyperParams) -> np.ndarray:
    """Exact log p(margins | W, alpha) over the grid, up to a grid-independent constant.

    With a_tau = H * alpha the scales phi_h * tau are iid Ga(alpha, b_tau), so each
    component's marginal is a giG normalizing constant.
    """
    grid = np.asarray(hp.alpha_grid)
    d = _margin_dim(hp)
    C = _floored_C(state)
    b = hp.b_tau
    lw = np.zeros(grid.size)
    for i, a in enumerate(grid):
        lw[i] = np.sum(a * np.log(b) - gammaln(a) + dist.gig_lognorm_const(a - d / 2.0, 2.0 * b, C))
    return lw


def concentration_log_weights_mc(state: ModelState, hp: HyperParams, rng: np.random.Generator, M: int) -> np.ndarray:
    """Monte Carlo version: average over M prior draws of the scales at each grid point."""
    grid = np.asarray(hp.alpha_grid)
    s = state.shrink
    lw = np.zeros(grid.size)
    for i, a in enumerate(grid):
        psi = rng.gamma(a, 1.0 / hp.b_tau, size=(M, hp.H))
        ll = (
            np.sum(dist.normal_logpdf(state.alpha1[None], psi[:, :, None] * s.W1[None]), axis=(1, 2))
            + np.sum(dist.normal_logpdf(state.alpha2[None], psi[:, :, None] * s.W2[None]), axis=(1, 2))
            + np.sum(dist.normal_logpdf(state.alpha3[None], psi[:, :, None] * s.W3[None]), axis=(1, 2))
        )
        lw[i] = logsumexp(ll) - np.log(M)
    return lw


def update_concentration_griddy(
    state: ModelState, hp: HyperParams, rng: np.random.Generator, method: str = "exact", inner_draws: int = 10
) -> ModelState:
    if method == "exact":
        lw = concentration_log_weights(state, hp)
    else:
        lw = concentration_log_weights_mc(state, hp, rng, inner_draws)
    if not np.any(np.isfinite(lw)):
        raise FloatingPointError("all concentration weights underflowed")
    p = np.exp(lw - logsumexp(lw))
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    state.shrink.alpha_conc = float(hp.alpha_grid[min(idx, len(p) - 1)])
    return state


def log_cond_concentration(state: ModelState, hp: HyperParams) -> float:
    """log p(alpha_conc | margins, W) with phi and tau integrated out."""
    lw = concentration_log_weights(state, hp)
    grid = np.asarray(hp.alpha_grid)
    return float(logsumexp(lw[grid == state.alpha_conc]) - logsumexp(lw))


def update_phi_tau(state: ModelState, hp: HyperParams, rng: np.random.Generator) -> ModelState:
    """phi from normalized scales, then tau given phi.

    psi_h ~ giG(p = alpha - d/2, a = 2 b_tau, b = C_h), phi = psi / sum(psi)
    tau | phi ~ giG(p = H alpha - H d/2, a = 2 b_tau, b = sum_h C_h / phi_h)
    with d = 2N + P and C_h = sum over margins of alpha^2 / W.
    """
    H, d, a = hp.H, _margin_dim(hp), state.alpha_conc
    C = _floored_C(state)
    psi = dist.gig_rvs(a - d / 2.0, 2.0 * hp.b_tau, C, rng)
    phi = psi / psi.sum()
    tau = dist.gig_rvs(H * a - H * d / 2.0, 2.0 * hp.b_tau, np.sum(C / phi), rng)
    state.shrink.phi = phi
    state.shrink.tau = float(tau[()])
    return state


def log_cond_phi_tau(state: ModelState, hp: HyperParams) -> float:
    """Joint conditional density of (phi_1..phi_{H-1}, tau) via the scale transform."""
    H, d, a = hp.H, _margin_dim(hp), state.alpha_conc
    C = _floored_C(state)
    psi = state.psi()
    return float(np.sum(dist.gig_logpdf(psi, a - d / 2.0, 2.0 * hp.b_tau, C)) + (H - 1) * np.log(state.shrink.tau))


# ---------------------------------------------------------------------------
# block 2: lambda, W1, W2, v, z, W3


def update_lambda_W12(state: ModelState, hp: HyperParams, rng: np.random.Generator) -> ModelState:
    """lambda_{h,k} ~ Ga(a_lambda + 1, rate b_lambda + |alpha_{h,k}| / sqrt(psi_h)) with W integrated out,
    then W_{h,k} ~ giG(p = 1/2, a = lambda_{h,k}^2, b = alpha_{h,k}^2 / psi_h)."""
    s = state.shrink
    psi = state.psi()
    for margin, lam_name, w_name in ((state.alpha1, "lambda1", "W1"), (state.alpha2, "lambda2", "W2")):
        rate = hp.b_lambda + np.abs(margin) / np.sqrt(psi)[:, None]
        lam = rng.gamma(hp.a_lambda + 1.0, 1.0 / rate)
        W = dist.gig_rvs(0.5, lam**2, margin**2 / psi[:, None], rng)
        setattr(s, lam_name, lam)
        setattr(s, w_name, W)
    return state


def log_cond_lambda_W12(state: ModelState, hp: HyperParams) -> float:
    s = state.shrink
    psi = state.psi()
    out = 0.0
    for margin, lam, W in ((state.alpha1, s.lambda1, s.W1), (state.alpha2, s.lambda2, s.W2)):
        rate = hp.b_lambda + np.abs(margin) / np.sqrt(psi)[:, None]
        out += np.sum(dist.gamma_logpdf(lam, hp.a_lambda + 1.0, rate))
        out += np.sum(dist.gig_logpdf(W, 0.5, lam**2, margin**2 / psi[:, None]))
    return float(out)


def _stick_counts(z: np.ndarray, P: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts of z == l and z > l for the free levels l = 1..P-1."""
    levels = np.arange(1, P)
    eq = np.sum(z[:, :, None] == levels, axis=1)
    gt = np.sum(z[:, :, None] > levels, axis=1)
    return eq, gt


def update_v(state: ModelState, hp: HyperParams, rng: np.random.Generator) -> ModelState:
    eq, gt = _stick_counts(state.shrink.z, hp.P)
    state.shrink.v = sample_sticks(hp, rng, hp.beta1 + eq, hp.beta2 + gt)
    return state


def log_cond_v(state: ModelState, hp: HyperParams) -> float:
    eq, gt = _stick_counts(state.shrink.z, hp.P)
    return float(np.sum(dist.beta_logpdf(state.shrink.v[:, :-1], hp.beta1 + eq, hp.beta2 + gt)))


def assignment_log_weights(state: ModelState, hp: HyperParams) -> np.ndarray:
    """log P(z_{h,j} = l | v, alpha3) up to normalization, shape (H, P, P), W3 integrated out."""
    P = hp.P
    psi = state.psi()[:, None]
    a3 = state.alpha3
    spike = dist.normal_logpdf(a3, psi * hp.W_inf)
    slab = dist.student_t_logpdf(a3, 2.0 * hp.a_w, hp.b_w * psi / hp.a_w)
    levels = np.arange(1, P + 1)
    lags = levels
    is_spike = levels[None, None, :] <= lags[None, :, None]
    lp = np.log(assignment_probs(state.shrink.v))[:, None, :]
    return lp + np.where(is_spike, spike[:, :, None], slab[:, :, None])


def update_z_W3(state: ModelState, hp: HyperParams, rng: np.random.Generator) -> ModelState:
    """z from spike-Normal / slab-Student-t weights, then W3 = W_inf (spike) or
    InvGamma(a_w + 1/2, b_w + alpha3^2 / (2 psi)) (slab)."""
    lw = assignment_log_weights(state, hp)
    p = np.exp(lw - logsumexp(lw, axis=-1, keepdims=True))
    u = rng.random(p.shape[:2])
    z = 1 + np.sum(u[..., None] > np.cumsum(p, axis=-1)[..., :-1], axis=-1)
    slab = ~spike_mask(z)
    psi = state.psi()[:, None]
    scale = hp.b_w + state.alpha3**2 / (2.0 * psi)
    W3 = np.full(z.shape, hp.W_inf)
    n = int(slab.sum())
    if n:
        W3[slab] = scale[slab] / rng.gamma(hp.a_w + 0.5, 1.0, size=n)
    state.shrink.z = z
    state.shrink.W3 = W3
    return state


def log_cond_z_W3(state: ModelState, hp: HyperParams) -> float:
    lw = assignment_log_weights(state, hp)
    lp = lw - logsumexp(lw, axis=-1, keepdims=True)
    z = state.shrink.z
    out = np.sum(np.take_along_axis(lp, (z - 1)[..., None], axis=-1))
    slab = ~spike_mask(z)
    psi = np.broadcast_to(state.psi()[:, None], z.shape)
    scale = hp.b_w + state.alpha3[slab] ** 2 / (2.0 * psi[slab])
    out += np.sum(dist.invgamma_logpdf(state.shrink.W3[slab], hp.a_w + 0.5, scale))
    return float(out)


# ---------------------------------------------------------------------------
# block 3: margins


def margin_conditional(state: ModelState, data: ModelData, h: int, which: int) -> tuple[np.ndarray, np.ndarray]:
    """Precision matrix and linear term of the Gaussian full conditional of margin ``which`` (1, 2 or 3)."""
    r = residual_excluding(state, data, h)
    g = state.gamma[h].astype(float)
    inv_s2 = 1.0 / state.sigma2
    psi = state.psi()[h]
    s = state.shrink
    if which == 1:
        score = np.einsum("tjn,j,n->t", data.lags, state.alpha3[h], state.alpha2[h])
        gs = g * score
        prec = 1.0 / (psi * s.W1[h]) + np.sum(gs * score) * inv_s2
        b = (gs @ r) * inv_s2
        return np.diag(prec), b
    weighted = r @ (state.alpha1[h] * inv_s2)
    c1 = np.sum(state.alpha1[h] ** 2 * inv_s2)
    if which == 2:
        x = np.einsum("tjn,j->tn", data.lags, state.alpha3[h])
        prior = 1.0 / (psi * s.W2[h])
    elif which == 3:
        x = data.lags @ state.alpha2[h]
        prior = 1.0 / (psi * s.W3[h])
    else:
        raise ValueError("which must be 1, 2 or 3")
    Q = c1 * (x * g[:, None]).T @ x
    Q[np.diag_indices_from(Q)] += prior
    b = x.T @ (g * weighted)
    return Q, b


def _margin_attr(which: int) -> str:
    return ("alpha1", "alpha2", "alpha3")[which - 1]


def margin_root(state: ModelState, data: ModelData, h: int, which: int) -> tuple[np.ndarray, np.ndarray]:
    """Square-root form (R, b) of :func:`margin_conditional`, with R'R equal to the precision."""
    if which == 1:
        Q, b = margin_conditional(state, data, h, which)
        d = np.diag(Q)
        if not np.all(np.isfinite(d) & (d > 0)):
            raise FloatingPointError("conditional precision is not positive definite")
        return np.diag(np.sqrt(d)), b
    r = residual_excluding(state, data, h)
    g = state.gamma[h].astype(float)
    inv_s2 = 1.0 / state.sigma2
    psi = state.psi()[h]
    s = state.shrink
    weighted = r @ (state.alpha1[h] * inv_s2)
    c1 = np.sum(state.alpha1[h] ** 2 * inv_s2)
    if which == 2:
        x = np.einsum("tjn,j->tn", data.lags, state.alpha3[h])
        prior = 1.0 / (psi * s.W2[h])
    elif which == 3:
        x = data.lags @ state.alpha2[h]
        prior = 1.0 / (psi * s.W3[h])
    else:
        raise ValueError("which must be 1, 2 or 3")
    rows = np.vstack([np.sqrt(c1 * g)[:, None] * x, np.diag(np.sqrt(prior))])
    return _root_from_rows(rows), x.T @ (g * weighted)


def update_margin(state: ModelState, hp: HyperParams, data: ModelData, h: int, which: int, rng) -> ModelState:
    R, b = margin_root(state, data, h, which)
    getattr(state, _margin_attr(which))[h] = _gauss_draw(R, b, rng)
    return state


def log_cond_margin(state: ModelState, hp: HyperParams, data: ModelData, h: int, which: int) -> float:
    R, b = margin_root(state, data, h, which)
    return _gauss_logpdf(getattr(state, _margin_attr(which))[h], R, b)


def update_margins(state: ModelState, hp: HyperParams, data: ModelData, rng: np.random.Generator) -> ModelState:
    for h in range(state.H):
        for which in (1, 2, 3):
            update_margin(state, hp, data, h, which, rng)
    return state


# ---------------------------------------------------------------------------
# block 4: paths and Ising parameters


def path_field(state: ModelState, data: ModelData, h: int) -> ChainField:
    """Prior Ising field plus the log-likelihood gain of switching component h on at each t."""
    r = residual_excluding(state, data, h)
    score = np.einsum("tjn,j,n->t", data.lags, state.alpha3[h], state.alpha2[h])
    ybar = score[:, None] * state.alpha1[h][None, :]
    inv_s2 = 1.0 / state.sigma2
    gain = np.sum(ybar * r * inv_s2, axis=1) - 0.5 * np.sum(ybar**2 * inv_s2, axis=1)
    prior = ising_field(IsingParams(float(state.theta[h]), float(state.kappa[h])), data.L)
    return ChainField(prior.site_fields + gain, prior.coupling)


def update_paths(state: ModelState, hp: HyperParams, data: ModelData, rng: np.random.Generator) -> ModelState:
    for h in range(state.H):
        state.gamma[h] = exact_chain_sample(path_field(state, data, h), rng)
    return state


def log_cond_path(state: ModelState, hp: HyperParams, data: ModelData, h: int) -> float:
    return float(ising_log_pmf(state.gamma[h], path_field(state, data, h)))


def reflect_into(x: float, lo: float, hi: float) -> float:
    """Fold ``x`` into [lo, hi] by mirror reflection (symmetric proposal kernel)."""
    w = hi - lo
    if w <= 0:
        return lo
    y = np.mod(x - lo, 2.0 * w)
    if y > w:
        y = 2.0 * w - y
    return float(lo + y)


def ising_pilot_estimate(gamma: np.ndarray, theta_lo: float, theta_hi: float, kappa_hi: float) -> tuple[float, float]:
    """Moment estimate of (theta, kappa) from one path through the NDARMA representation.

    Depends on the path only, which is what makes it usable as the fixed
    auxiliary law in the exchange-type (theta, kappa) update.
    """
    g = np.asarray(gamma, dtype=float)
    L = g.size
    p2 = (g.sum() + 0.5) / (L + 1.0)
    p1 = 0.0
    if L > 1:
        same = np.mean(g[1:] == g[:-1])
        q = p2**2 + (1.0 - p2) ** 2
        p1 = float(np.clip((same - q) / (1.0 - q), 0.0, 0.9))
    ip = p_to_theta_kappa(NdarmaParams(p1, p2))
    return float(np.clip(ip.theta, theta_lo, theta_hi)), float(np.clip(ip.kappa, 0.0, kappa_hi))


def _exact_ising_draw(f: ChainField, rng: np.random.Generator, sampler: str) -> np.ndarray:
    if sampler == "cftp":
        return cftp_field_sample(f, rng)
    return exact_chain_sample(f, rng)


def update_ising_params(
    state: ModelState,
    hp: HyperParams,
    rng: np.random.Generator,
    aux_sampler: str = "cftp",
    half_width: float = MH_HALF_WIDTH,
    steps: int = 1,
) -> np.ndarray:
    """Auxiliary-variable Metropolis-Hastings for each (theta_h, kappa_h).

    The auxiliary configuration follows the Ising law at a pilot estimate that
    depends on the current path only; the chain's normalizing constants cancel.
    Returns the number of accepted moves per component.
    """
    lo, hi, km = hp.theta_box()
    L = state.gamma.shape[1]
    accepted = np.zeros(state.H, dtype=int)
    for h in range(state.H):
        g = state.gamma[h]
        th_hat, ka_hat = ising_pilot_estimate(g, lo[h], hi[h], km[h])
        f_hat = ising_field(IsingParams(th_hat, ka_hat), L)
        for _ in range(steps):
            th, ka = float(state.theta[h]), float(state.kappa[h])
            x = _exact_ising_draw(f_hat, rng, aux_sampler)
            th_new = reflect_into(th + rng.uniform(-half_width, half_width), lo[h], hi[h])
            ka_new = reflect_into(ka + rng.uniform(-half_width, half_width), 0.0, km[h])
            f_cur = ising_field(IsingParams(th, ka), L)
            f_new = ising_field(IsingParams(th_new, ka_new), L)
            x_new = _exact_ising_draw(f_new, rng, aux_sampler)
            log_h = (
                ising_log_pmf_unnorm(g, f_new)
                - ising_log_pmf_unnorm(g, f_cur)
                + ising_log_pmf_unnorm(x_new, f_hat)
                - ising_log_pmf_unnorm(x, f_hat)
                + ising_log_pmf_unnorm(x, f_cur)
                - ising_log_pmf_unnorm(x_new, f_new)
            )
            if np.log(rng.random()) < log_h:
                state.theta[h] = th_new
                state.kappa[h] = ka_new
                accepted[h] += 1
    return accepted


def log_target_ising(state: ModelState, hp: HyperParams, h: int) -> float:
    """Exact log conditional of (theta_h, kappa_h) up to a constant, via the transfer-matrix normalizer."""
    lo, hi, km = hp.theta_box()
    th, ka = float(state.theta[h]), float(state.kappa[h])
    if not (lo[h] <= th <= hi[h] and 0.0 <= ka <= km[h]):
        return -np.inf
    return float(ising_log_pmf(state.gamma[h], ising_field(IsingParams(th, ka), state.gamma.shape[1])))


# ---------------------------------------------------------------------------
# block 5: noise variances


def _sigma2_posterior(state: ModelState, hp: HyperParams, data: ModelData) -> tuple[float, np.ndarray]:
    r = data.target - fitted_values(state, data)
    return hp.a_sigma + data.L / 2.0, hp.b_sigma + 0.5 * np.sum(r**2, axis=0)


def update_sigma2(state: ModelState, hp: HyperParams, data: ModelData, rng: np.random.Generator) -> ModelState:
    shape, scale = _sigma2_posterior(state, hp, data)
    state.sigma2 = scale / rng.gamma(shape, 1.0, size=scale.size)
    return state


def log_cond_sigma2(state: ModelState, hp: HyperParams, data: ModelData) -> float:
    shape, scale = _sigma2_posterior(state, hp, data)
    return float(np.sum(dist.invgamma_logpdf(state.sigma2, shape, scale)))


# ---------------------------------------------------------------------------
# sweep and chain management


def gibbs_sweep(
    state: ModelState, hp: HyperParams, data: ModelData, rng: np.random.Generator, cfg: ChainConfig, it: int = 0
) -> np.ndarray:
    """One full sweep in the order concentration/scales, local scales, margins, paths, noise.

    Returns the per-component count of accepted (theta, kappa) moves.
    """

    def check(block: str, *arrays):
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite state at iteration {it} in block '{block}'")

    update_concentration_griddy(state, hp, rng, cfg.griddy_method, cfg.griddy_inner_draws)
    update_phi_tau(state, hp, rng)
    check("phi_tau", state.shrink.phi, state.shrink.tau)
    update_lambda_W12(state, hp, rng)
    check("lambda_W12", state.shrink.lambda1, state.shrink.lambda2, state.shrink.W1, state.shrink.W2)
    update_v(state, hp, rng)
    update_z_W3(state, hp, rng)
    check("lag_shrinkage", state.shrink.v, state.shrink.W3)
    update_margins(state, hp, data, rng)
    check("margins", state.alpha1, state.alpha2, state.alpha3)
    update_paths(state, hp, data, rng)
    acc = update_ising_params(state, hp, rng, cfg.aux_sampler, steps=cfg.ising_steps)
    update_sigma2(state, hp, data, rng)
    check("sigma2", state.sigma2)
    return acc


def _hopm_rank1(tensor: np.ndarray, n_iter: int = 50) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best rank-1 approximation by alternating power iterations, started from the dominant unfoldings."""
    N1, N2, P = tensor.shape
    a1 = np.linalg.svd(tensor.reshape(N1, -1), full_matrices=False)[0][:, 0]
    a2 = np.linalg.svd(tensor.transpose(1, 0, 2).reshape(N2, -1), full_matrices=False)[0][:, 0]
    a3 = np.linalg.svd(tensor.transpose(2, 0, 1).reshape(P, -1), full_matrices=False)[0][:, 0]
    for _ in range(n_iter):
        a1 = np.einsum("ikj,k,j->i", tensor, a2, a3)
        a1 /= np.linalg.norm(a1) or 1.0
        a2 = np.einsum("ikj,i,j->k", tensor, a1, a3)
        a2 /= np.linalg.norm(a2) or 1.0
        a3 = np.einsum("ikj,i,k->j", tensor, a1, a2)
    scale = np.linalg.norm(a3)
    a3 = a3 / (scale or 1.0)
    return a1, a2, a3 * scale


def initial_state(data: ModelData, hp: HyperParams, ridge: float = 1e-2) -> ModelState:
    """Deterministic start: ridge least squares on the static VAR, then H greedy rank-1 terms."""
    H, N, P, L = hp.H, hp.N, hp.P, data.L
    X = data.lags.reshape(L, P * N)
    G = X.T @ X
    pen = ridge * np.trace(G) / G.shape[0]
    B = np.linalg.solve(G + pen * np.eye(G.shape[0]), X.T @ data.target)
    # tensor[i, k, j] = A_j[i, k]
    tensor = B.reshape(P, N, N).transpose(2, 1, 0).copy()
    a1 = np.empty((H, N))
    a2 = np.empty((H, N))
    a3 = np.empty((H, P))
    resid = tensor.copy()
    for h in range(H):
        u1, u2, u3 = _hopm_rank1(resid)
        norm = np.linalg.norm(u3)
        if norm < 1e-8:
            u1, u2, u3, norm = np.full(N, N**-0.5), np.full(N, N**-0.5), np.full(P, 1e-3 * P**-0.5), 1e-3
        resid = resid - np.einsum("i,k,j->ikj", u1, u2, u3)
        c = norm ** (1.0 / 3.0)
        a1[h], a2[h], a3[h] = u1 * c, u2 * c, u3 / norm * c
    lo, hi, km = hp.theta_box()
    shrink = ShrinkageState(
        tau=1.0,
        phi=np.full(H, 1.0 / H),
        lambda1=np.full((H, N), hp.a_lambda / hp.b_lambda),
        lambda2=np.full((H, N), hp.a_lambda / hp.b_lambda),
        W1=np.ones((H, N)),
        W2=np.ones((H, N)),
        W3=np.where(np.arange(1, P + 1) < P, 1.0, hp.W_inf) * np.ones((H, 1)),
        z=np.full((H, P), P),
        v=np.concatenate([np.full((H, P - 1), hp.beta1 / (hp.beta1 + hp.beta2)), np.ones((H, 1))], axis=1),
        alpha_conc=float(hp.alpha_grid[len(hp.alpha_grid) // 2]),
    )
    state = ModelState(
        alpha1=a1,
        alpha2=a2,
        alpha3=a3,
        gamma=np.ones((H, L), dtype=np.int8),
        shrink=shrink,
        theta=np.clip(np.zeros(H), lo, hi),
        kappa=np.minimum(1.0, km),
        sigma2=np.ones(N),
    )
    r = data.target - fitted_values(state, data)
    state.sigma2 = np.maximum(np.var(r, axis=0), 1e-8)
    return state


def sample_prior_state(hp: HyperParams, L: int, rng: np.random.Generator, aux_sampler: str = "transfer") -> ModelState:
    """Draw every latent variable from the prior (used by the joint-distribution test)."""
    s = sample_prior_shrinkage(hp, rng)
    comps = [sample_prior_component(hp, s, h, rng) for h in range(hp.H)]
    lo, hi, km = hp.theta_box()
    theta = lo + (hi - lo) * rng.random(hp.H)
    kappa = km * rng.random(hp.H)
    gamma = np.stack(
        [_exact_ising_draw(ising_field(IsingParams(t, k), L), rng, aux_sampler) for t, k in zip(theta, kappa)]
    ).astype(np.int8)
    sigma2 = hp.b_sigma / rng.gamma(hp.a_sigma, 1.0, size=hp.N)
    return ModelState(
        alpha1=np.stack([c.alpha1 for c in comps]),
        alpha2=np.stack([c.alpha2 for c in comps]),
        alpha3=np.stack([c.alpha3 for c in comps]),
        gamma=gamma,
        shrink=s,
        theta=theta,
        kappa=kappa,
        sigma2=sigma2,
    )


def simulate_response(state: ModelState, data: ModelData, rng: np.random.Generator) -> ModelData:
    """Regenerate rows P..T-1 from the model given the state, keeping the first P rows."""
    y = data.y.copy()
    P = data.P
    bases = component_bases(state.alpha1, state.alpha2, state.alpha3)
    coefs = np.einsum("ht,hjik->tjik", state.gamma.astype(float), bases)
    sd = np.sqrt(state.sigma2)
    noise = rng.standard_normal((data.L, data.N)) * sd
    for i in range(data.L):
        t = P + i
        y[t] = np.einsum("jik,jk->i", coefs[i], y[t - P : t][::-1]) + noise[i]
    return ModelData.from_series(y, P)


_SCALAR_TRACES = ("tau", "alpha_conc")


def run_chain(
    data, hp: HyperParams, cfg: ChainConfig, rng: np.random.Generator | None = None, init: ModelState | None = None
) -> FitResult:
    """Run one chain and collect thinned post-burn-in draws plus streaming posterior means."""
    if not isinstance(data, ModelData):
        data = ModelData.from_series(data, hp.P)
    if data.N != hp.N:
        raise ValueError("data dimension does not match the hyperparameters")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    state = initial_state(data, hp) if init is None else init.copy()
    H, N, P, L = hp.H, hp.N, hp.P, data.L
    keep = set(cfg.kept_iterations)
    S = len(keep)
    draws = {
        "alpha1": np.empty((S, H, N)),
        "alpha2": np.empty((S, H, N)),
        "alpha3": np.empty((S, H, P)),
        "gamma": np.empty((S, H, L), dtype=np.int8),
        "theta": np.empty((S, H)),
        "kappa": np.empty((S, H)),
        "tau": np.empty(S),
        "phi": np.empty((S, H)),
        "sigma2": np.empty((S, N)),
        "alpha_conc": np.empty(S),
    }
    A_sum = np.zeros((L, P, N, N))
    base_sum = np.zeros((H, P, N, N))
    accepted = np.zeros(H, dtype=int)
    traces = {k: np.empty(cfg.n_iter) for k in _SCALAR_TRACES}
    k = 0
    t0 = time.perf_counter()
    for it in range(cfg.n_iter):
        accepted += gibbs_sweep(state, hp, data, rng, cfg, it)
        traces["tau"][it] = state.shrink.tau
        traces["alpha_conc"][it] = state.alpha_conc
        if it in keep:
            draws["alpha1"][k] = state.alpha1
            draws["alpha2"][k] = state.alpha2
            draws["alpha3"][k] = state.alpha3
            draws["gamma"][k] = state.gamma
            draws["theta"][k] = state.theta
            draws["kappa"][k] = state.kappa
            draws["tau"][k] = state.shrink.tau
            draws["phi"][k] = state.shrink.phi
            draws["sigma2"][k] = state.sigma2
            draws["alpha_conc"][k] = state.alpha_conc
            bases = component_bases(state.alpha1, state.alpha2, state.alpha3)
            base_sum += bases
            A_sum += np.einsum("ht,hjik->tjik", state.gamma.astype(float), bases)
            k += 1
        if cfg.progress_every and (it + 1) % cfg.progress_every == 0:
            print(f"iteration {it + 1}/{cfg.n_iter} ({time.perf_counter() - t0:.1f}s)", file=sys.stderr)
    diagnostics = {
        "ising_acceptance": accepted / float(cfg.n_iter * cfg.ising_steps),
        **{f"trace_{k}": v for k, v in traces.items()},
    }
    return FitResult(
        draws=draws,
        posterior_mean_A=A_sum / S,
        posterior_mean_bases=base_sum / S,
        gamma_prob=draws["gamma"].mean(axis=0),
        diagnostics=diagnostics,
        P=P,
        T=data.y.shape[0],
    )


def _permute_result(res: FitResult, perm: np.ndarray) -> FitResult:
    draws = dict(res.draws)
    for key in ("alpha1", "alpha2", "alpha3", "gamma", "theta", "kappa", "phi"):
        draws[key] = draws[key][:, perm]
    diag = dict(res.diagnostics)
    diag["ising_acceptance"] = diag["ising_acceptance"][perm]
    return replace(
        res,
        draws=draws,
        posterior_mean_bases=res.posterior_mean_bases[perm],
        gamma_prob=res.gamma_prob[perm],
        diagnostics=diag,
    )


def combine_chains(results: list[FitResult]) -> FitResult:
    """Pool chains after relabeling each chain's components to best match chain 0."""
    from scipy.optimize import linear_sum_assignment

    ref = results[0]
    aligned = [ref]
    for res in results[1:]:
        cost = np.array(
            [
                [np.linalg.norm(a - b) for b in res.posterior_mean_bases]
                for a in ref.posterior_mean_bases
            ]
        )
        _, perm = linear_sum_assignment(cost)
        aligned.append(_permute_result(res, perm))
    weights = np.array([r.n_draws for r in aligned], dtype=float)
    weights /= weights.sum()
    draws = {k: np.concatenate([r.draws[k] for r in aligned]) for k in ref.draws}
    diagnostics = {
        "ising_acceptance": np.mean([r.diagnostics["ising_acceptance"] for r in aligned], axis=0),
        **{k: np.stack([r.diagnostics[k] for r in aligned]) for k in ref.diagnostics if k.startswith("trace_")},
    }
    return FitResult(
        draws=draws,
        posterior_mean_A=sum(w * r.posterior_mean_A for w, r in zip(weights, aligned)),
        posterior_mean_bases=sum(w * r.posterior_mean_bases for w, r in zip(weights, aligned)),
        gamma_prob=draws["gamma"].mean(axis=0),
        diagnostics=diagnostics,
        P=ref.P,
        T=ref.T,
    )


def fit(data, hp: HyperParams, cfg: ChainConfig, threads: int = 1) -> FitResult:
    """Run ``cfg.n_chains`` chains with independent streams spawned from ``cfg.seed``.

    Output does not depend on ``threads``: each chain owns its generator and
    chains are pooled in index order.
    """
    if not isinstance(data, ModelData):
        data = ModelData.from_series(data, hp.P)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    rngs = [np.random.default_rng(s) for s in streams]
    if threads > 1 and cfg.n_chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: run_chain(data, hp, cfg, r), rngs))
    else:
        results = [run_chain(data, hp, cfg, r) for r in rngs]
    return results[0] if len(results) == 1 else combine_chains(results)


def summarize_gamma(result_or_prob, threshold: float = 0.5) -> np.ndarray:
    """Posterior activation indicator: 1 where P(gamma = 1 | y) > threshold (strict)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    prob = result_or_prob.gamma_prob if isinstance(result_or_prob, FitResult) else np.asarray(result_or_prob)
    return (prob > threshold).astype(np.int8)
