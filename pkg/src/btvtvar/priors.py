"""Shrinkage priors on the tensor margins.

Row and column margins get a Dirichlet / generalized double Pareto hierarchy::

    alpha_conc ~ Uniform(grid),  phi ~ Dir(alpha_conc),  tau ~ Ga(H * alpha_conc, b_tau)
    lambda_{l,h,k} ~ Ga(a_lambda, b_lambda),  W_{l,h,k} ~ Exp(rate = lambda_{l,h,k}^2 / 2)
    alpha_{l,h,k} ~ N(0, phi_h tau W_{l,h,k}),  l = 1, 2

The lag margin gets an increasing spike-and-slab::

    v_{h,l} ~ Beta(beta1, beta2) for l < P,  v_{h,P} = 1,  w_{h,l} = v_{h,l} prod_{m<l} (1 - v_{h,m})
    z_{h,j} in {1, ..., P} with P(z = l) = w_l
    W3_{h,j} = W_inf if z_{h,j} <= j else InvGamma(a_w, b_w)
    alpha3_{h,j} ~ N(0, phi_h tau W3_{h,j})

Fixing the last stick at one truncates the construction so the weights sum to
one; as a consequence the highest lag is always assigned to the spike.
Lag j is 1-based in these formulas; arrays are 0-based so lag ``j`` sits in column ``j - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import distributions as dist
from .tensor_var import TensorComponent


def default_alpha_grid(H: int, n: int = 10) -> np.ndarray:
    return np.linspace(float(H) ** -3.0, float(H) ** -0.1, n)


@dataclass(frozen=True)
class HyperParams:
    N: int
    P: int
    H: int
    a_lambda: float = 3.0
    b_lambda: float = 3.0 ** (1.0 / 6.0)
    a_tau: float = 1.0
    b_tau: float | None = None
    alpha_grid: tuple[float, ...] | None = None
    beta1: float = 1.0
    beta2: float = 5.0
    a_w: float = 2.0
    b_w: float = 2.0
    W_inf: float = 0.01
    a_sigma: float = 1.0
    b_sigma: float = 1.0
    theta_min: float | tuple[float, ...] = -4.0
    theta_max: float | tuple[float, ...] = 4.0
    kappa_max: float | tuple[float, ...] = 4.0

    def __post_init__(self):
        if min(self.N, self.P, self.H) < 1:
            raise ValueError("N, P and H must be positive")
        if self.b_tau is None:
            object.__setattr__(self, "b_tau", float(self.H) ** 4)
        if self.alpha_grid is None:
            object.__setattr__(self, "alpha_grid", tuple(default_alpha_grid(self.H)))
        grid = tuple(float(a) for a in np.atleast_1d(self.alpha_grid))
        if not grid or min(grid) <= 0:
            raise ValueError("alpha grid must be a non-empty set of positive values")
        object.__setattr__(self, "alpha_grid", grid)
        for name in ("a_lambda", "b_lambda", "b_tau", "beta1", "beta2", "a_w", "b_w", "W_inf", "a_sigma", "b_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        lo, hi, km = self.theta_box()
        if np.any(lo > hi) or np.any(km < 0):
            raise ValueError("invalid (theta, kappa) box")

    def theta_box(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-component (theta_min, theta_max, kappa_max) arrays of length H."""
        return tuple(
            np.broadcast_to(np.asarray(v, dtype=float), (self.H,)).copy()
            for v in (self.theta_min, self.theta_max, self.kappa_max)
        )

    def with_dims(self, **kw) -> "HyperParams":
        """Copy with new dimensions; grid and b_tau are recomputed unless given."""
        base = {f.name: getattr(self, f.name) for f in fields(self)}
        if "H" in kw:
            base["alpha_grid"] = None
            base["b_tau"] = None
        base.update(kw)
        return HyperParams(**base)


@dataclass
class ShrinkageState:
    tau: float
    phi: np.ndarray  # (H,)
    lambda1: np.ndarray  # (H, N) one rate per margin entry
    lambda2: np.ndarray  # (H, N)
    W1: np.ndarray  # (H, N)
    W2: np.ndarray  # (H, N)
    W3: np.ndarray  # (H, P)
    z: np.ndarray  # (H, P) integers in 1..P
    v: np.ndarray  # (H, P), last column fixed at 1
    alpha_conc: float = 1.0

    def copy(self) -> "ShrinkageState":
        return replace(self, **{f.name: np.array(getattr(self, f.name)) for f in fields(self) if f.name not in ("tau", "alpha_conc")})

    def validate(self, W_inf: float | None = None) -> None:
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError("tau must be positive")
        if np.any(self.phi <= 0) or abs(self.phi.sum() - 1.0) > 1e-12:
            raise ValueError("phi must lie on the open simplex")
        for name in ("lambda1", "lambda2", "W1", "W2", "W3"):
            a = getattr(self, name)
            if not np.all(np.isfinite(a)) or np.any(a <= 0):
                raise ValueError(f"{name} must be positive and finite")
        if np.any((self.v[:, :-1] <= 0) | (self.v[:, :-1] >= 1)):
            raise ValueError("v must lie in (0, 1)")
        if np.any(self.v[:, -1] != 1.0):
            raise ValueError("the last stick-breaking fraction must equal 1")
        P = self.z.shape[1]
        if np.any((self.z < 1) | (self.z > P)):
            raise ValueError("z outside 1..P")
        if W_inf is not None:
            spike = spike_mask(self.z)
            if np.any(self.W3[spike] != W_inf):
                raise ValueError("W3 must equal W_inf at spike positions")


def spike_mask(z: np.ndarray) -> np.ndarray:
    """True where lag j (1-based column j) is assigned to the spike, i.e. z_j <= j."""
    z = np.asarray(z)
    lags = np.arange(1, z.shape[-1] + 1)
    return z <= lags


def stick_break_weights(v) -> np.ndarray:
    """w_j = v_j prod_{l<j} (1 - v_l) along the last axis."""
    v = np.asarray(v, dtype=float)
    remain = np.cumprod(1.0 - v, axis=-1)
    before = np.concatenate([np.ones(v.shape[:-1] + (1,)), remain[..., :-1]], axis=-1)
    return v * before


def assignment_probs(v) -> np.ndarray:
    """Probabilities of z = 1..P; sums to one because the last fraction is 1."""
    v = np.asarray(v, dtype=float)
    if np.any(v[..., -1] != 1.0):
        raise ValueError("the last stick-breaking fraction must equal 1")
    return stick_break_weights(v)


def sample_sticks(hp: HyperParams, rng: np.random.Generator, a=None, b=None) -> np.ndarray:
    """Beta(a, b) fractions for lags 1..P-1 and the fixed 1 for lag P."""
    shape = (hp.H, hp.P - 1)
    a = hp.beta1 if a is None else a
    b = hp.beta2 if b is None else b
    v = rng.beta(a, b, size=shape) if hp.P > 1 else np.empty(shape)
    # keep strictly inside (0, 1) so log densities stay finite
    v = np.clip(v, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return np.concatenate([v, np.ones((hp.H, 1))], axis=1)


def sample_w3_prior(hp: HyperParams, v, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw (z, W3) for one or more rows of stick-breaking fractions ``v``."""
    probs = assignment_probs(v)
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape)
    z = 1 + np.sum(u[..., None] > cum[..., None, :-1], axis=-1)
    W3 = np.where(spike_mask(z), hp.W_inf, 0.0)
    slab = ~spike_mask(z)
    n_slab = int(slab.sum())
    if n_slab:
        W3[slab] = hp.b_w / rng.gamma(hp.a_w, 1.0, size=n_slab)
    return z, W3


def sample_prior_shrinkage(hp: HyperParams, rng: np.random.Generator) -> ShrinkageState:
    H, N, P = hp.H, hp.N, hp.P
    conc = float(hp.alpha_grid[rng.integers(len(hp.alpha_grid))])
    psi = rng.gamma(conc, 1.0 / hp.b_tau, size=H)
    tau = float(psi.sum())
    phi = psi / tau
    lam1 = rng.gamma(hp.a_lambda, 1.0 / hp.b_lambda, size=(H, N))
    lam2 = rng.gamma(hp.a_lambda, 1.0 / hp.b_lambda, size=(H, N))
    W1 = rng.exponential(2.0 / lam1**2)
    W2 = rng.exponential(2.0 / lam2**2)
    v = sample_sticks(hp, rng)
    z, W3 = sample_w3_prior(hp, v, rng)
    return ShrinkageState(tau, phi, lam1, lam2, W1, W2, W3, z, v, conc)


def sample_prior_component(hp: HyperParams, s: ShrinkageState, h: int, rng: np.random.Generator) -> TensorComponent:
    scale = s.phi[h] * s.tau
    a1 = rng.standard_normal(hp.N) * np.sqrt(scale * s.W1[h])
    a2 = rng.standard_normal(hp.N) * np.sqrt(scale * s.W2[h])
    a3 = rng.standard_normal(hp.P) * np.sqrt(scale * s.W3[h])
    return TensorComponent(a1, a2, a3)


def margin_quadratic(alpha1, alpha2, alpha3, s: ShrinkageState) -> np.ndarray:
    """C_h = sum of alpha^2 / W over all three margins of component h."""
    return (
        np.sum(alpha1**2 / s.W1, axis=1) + np.sum(alpha2**2 / s.W2, axis=1) + np.sum(alpha3**2 / s.W3, axis=1)
    )


def log_prior_density(s: ShrinkageState, components, hp: HyperParams) -> float:
    """Joint log density of (alpha_conc, phi, tau, lambda, W, z, v, margins).

    The spike value of W3 is a point mass and contributes nothing.
    """
    s.validate(hp.W_inf)
    grid = np.asarray(hp.alpha_grid)
    hits = int(np.sum(grid == s.alpha_conc))
    if hits == 0:
        raise ValueError("alpha_conc is not a grid point")
    if isinstance(components, tuple) and len(components) == 3 and isinstance(components[0], np.ndarray):
        a1, a2, a3 = components
    else:
        a1 = np.stack([c.alpha1 for c in components])
        a2 = np.stack([c.alpha2 for c in components])
        a3 = np.stack([c.alpha3 for c in components])
    H = hp.H
    conc = s.alpha_conc
    lp = np.log(hits / grid.size)
    lp += dist.gamma_logpdf(s.tau, H * conc, hp.b_tau)
    lp += dist.dirichlet_logpdf(s.phi, conc)
    lp += np.sum(dist.gamma_logpdf(s.lambda1, hp.a_lambda, hp.b_lambda))
    lp += np.sum(dist.gamma_logpdf(s.lambda2, hp.a_lambda, hp.b_lambda))
    lp += np.sum(dist.exponential_logpdf(s.W1, s.lambda1**2 / 2.0))
    lp += np.sum(dist.exponential_logpdf(s.W2, s.lambda2**2 / 2.0))
    lp += np.sum(dist.beta_logpdf(s.v[:, :-1], hp.beta1, hp.beta2))
    probs = assignment_probs(s.v)
    lp += np.sum(np.log(np.take_along_axis(probs, s.z - 1, axis=1)))
    slab = ~spike_mask(s.z)
    lp += np.sum(dist.invgamma_logpdf(s.W3[slab], hp.a_w, hp.b_w))
    psi = (s.phi * s.tau)[:, None]
    lp += np.sum(dist.normal_logpdf(a1, psi * s.W1))
    lp += np.sum(dist.normal_logpdf(a2, psi * s.W2))
    lp += np.sum(dist.normal_logpdf(a3, psi * s.W3))
    return float(lp)
