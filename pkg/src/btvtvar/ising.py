"""Binary chain priors: Ising chain, NDARMA(1), their parameter bijection, and exact samplers.

An Ising chain of length L has unnormalized log mass

    sum_t f_t * g_t + kappa * sum_t g_t * g_{t+1}

The prior uses f = theta at both ends and f = theta_star in the interior, where
exp(theta_star) = e^theta (e^theta + 1) / (e^(theta + kappa) + 1). With those fields
the chain law coincides with the NDARMA(1) process with copy probability p1 and
innovation mean p2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

CFTP_MAX_SWEEPS = 2**20


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class IsingParams:
    theta: float
    kappa: float

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.kappa)):
            raise ValueError("theta and kappa must be finite")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")

    @property
    def theta_star(self) -> float:
        return float(interior_field(self.theta, self.kappa))


@dataclass(frozen=True)
class NdarmaParams:
    p1: float
    p2: float

    def __post_init__(self):
        if not (0.0 <= self.p1 < 1.0):
            raise ValueError(f"p1 must lie in [0, 1), got {self.p1}")
        if not (0.0 < self.p2 < 1.0):
            raise ValueError(f"p2 must lie in (0, 1), got {self.p2}")


@dataclass(frozen=True)
class ChainField:
    """Per-site linear coefficients plus a non-negative nearest-neighbour coupling."""

    site_fields: np.ndarray
    coupling: float

    def __post_init__(self):
        f = np.array(self.site_fields, dtype=float).reshape(-1)
        if f.size < 1:
            raise ValueError("chain length must be at least 1")
        if not np.all(np.isfinite(f)) or not np.isfinite(self.coupling):
            raise ValueError("fields and coupling must be finite")
        if self.coupling < 0:
            raise ValueError("coupling must be non-negative")
        f.setflags(write=False)
        object.__setattr__(self, "site_fields", f)
        object.__setattr__(self, "coupling", float(self.coupling))

    @property
    def L(self) -> int:
        return self.site_fields.size


def interior_field(theta, kappa):
    """theta_star = theta + softplus(theta) - softplus(theta + kappa)."""
    return theta + _softplus(theta) - _softplus(theta + kappa)


def ising_field(params: IsingParams, L: int) -> ChainField:
    """Prior field: theta at the two ends, theta_star inside.

    Each end adds theta - theta_star to the interior value, so a single-site
    chain (both ends at once) gets 2 theta - theta_star, which is logit(p2).
    """
    ts = params.theta_star
    f = np.full(L, ts)
    f[0] += params.theta - ts
    f[-1] += params.theta - ts
    return ChainField(f, params.kappa)


def ising_log_pmf_unnorm(gamma, f: ChainField):
    """Unnormalized log mass; ``gamma`` may carry leading batch dimensions."""
    g = np.asarray(gamma, dtype=float)
    if g.shape[-1] != f.L:
        raise ValueError("configuration length does not match the field")
    out = g @ f.site_fields
    if f.L > 1:
        out = out + f.coupling * np.sum(g[..., 1:] * g[..., :-1], axis=-1)
    return out


def ising_to_ndarma_arrays(theta, kappa) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise (theta, kappa) -> (p1, p2)."""
    th = np.asarray(theta, dtype=float)
    ka = np.asarray(kappa, dtype=float)
    # p1 = e^th (e^ka - 1) / ((e^(th+ka) + 1)(e^th + 1))
    p1 = np.exp(th - _softplus(th + ka) - _softplus(th)) * np.expm1(ka)
    # p2 = e^th (e^(th+ka) + 1) / (e^(2 th + ka) + 2 e^th + 1)
    log_den = np.logaddexp(np.logaddexp(2.0 * th + ka, np.log(2.0) + th), 0.0)
    p2 = np.exp(th + _softplus(th + ka) - log_den)
    return p1, p2


def ndarma_to_ising_arrays(p1, p2) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise (p1, p2) -> (theta, kappa) on 0 <= p1 < 1, 0 < p2 < 1."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if np.any(p1 < 0) or np.any(p1 >= 1) or np.any(p2 <= 0) or np.any(p2 >= 1):
        raise ValueError("NDARMA parameters outside the open domain")
    q1, q2 = 1.0 - p1, 1.0 - p2
    theta = np.log(p2) + np.log(q1) - np.log(p1 + q2 * q1)
    kappa = np.log1p(p1 / (p2 * q2 * q1 * q1))
    return theta, kappa


def theta_kappa_to_p(params: IsingParams) -> NdarmaParams:
    p1, p2 = ising_to_ndarma_arrays(params.theta, params.kappa)
    return NdarmaParams(float(p1), float(p2))


def p_to_theta_kappa(params: NdarmaParams) -> IsingParams:
    theta, kappa = ndarma_to_ising_arrays(params.p1, params.p2)
    return IsingParams(float(theta), float(kappa))


def ndarma_log_pmf(gamma, params: NdarmaParams):
    """Log mass of the NDARMA(1) chain; batch dimensions allowed."""
    g = np.asarray(gamma).astype(bool)
    p1, p2 = params.p1, params.p2
    log_init = np.where(g[..., 0], np.log(p2), np.log1p(-p2))
    if g.shape[-1] == 1:
        return log_init
    cur, prev = g[..., 1:], g[..., :-1]
    innov = np.where(cur, p2, 1.0 - p2)
    trans = p1 * (cur == prev) + (1.0 - p1) * innov
    return log_init + np.sum(np.log(trans), axis=-1)


def ndarma_joint_pmf(gamma, params: NdarmaParams):
    return np.exp(ndarma_log_pmf(gamma, params))


@numba.njit(cache=True)
def _forward_messages(fields, kappa):
    L = fields.shape[0]
    msg = np.empty((L, 2))
    msg[0, 0] = 0.0
    msg[0, 1] = fields[0]
    for t in range(1, L):
        a, b = msg[t - 1, 0], msg[t - 1, 1]
        msg[t, 0] = np.logaddexp(a, b)
        msg[t, 1] = fields[t] + np.logaddexp(a, b + kappa)
    return msg


@numba.njit(cache=True)
def _backward_sample(msg, kappa, u):
    n, L = u.shape
    out = np.empty((n, L), dtype=np.int8)
    for d in range(n):
        # P(g_L = 1) from the terminal message
        p1 = 1.0 / (1.0 + np.exp(msg[L - 1, 0] - msg[L - 1, 1]))
        nxt = 1 if u[d, L - 1] < p1 else 0
        out[d, L - 1] = nxt
        for t in range(L - 2, -1, -1):
            lp = msg[t, 1] + kappa * nxt - msg[t, 0]
            p1 = 1.0 / (1.0 + np.exp(-lp))
            nxt = 1 if u[d, t] < p1 else 0
            out[d, t] = nxt
    return out


def transfer_matrix_normalizer(f: ChainField) -> float:
    """log of the sum of exp(unnormalized log mass) over all 2^L configurations."""
    msg = _forward_messages(f.site_fields, f.coupling)
    return float(np.logaddexp(msg[-1, 0], msg[-1, 1]))


def ising_log_pmf(gamma, f: ChainField):
    return ising_log_pmf_unnorm(gamma, f) - transfer_matrix_normalizer(f)


def exact_chain_sample(f: ChainField, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Exact draw(s) by forward filtering and backward sampling.

    Returns an int8 vector of length L, or an ``(size, L)`` array.
    """
    msg = _forward_messages(f.site_fields, f.coupling)
    n = 1 if size is None else int(size)
    u = rng.random((n, f.L))
    out = _backward_sample(msg, f.coupling, u)
    return out[0] if size is None else out


@numba.njit(cache=True)
def _cftp_pass(fields, kappa, u):
    """Run the top and bottom heat-bath chains through the stored sweeps, oldest first."""
    n_sweeps, L = u.shape
    top = np.ones(L, dtype=np.int8)
    bot = np.zeros(L, dtype=np.int8)
    for s in range(n_sweeps - 1, -1, -1):
        for t in range(L):
            nt = 0
            nb = 0
            if t > 0:
                nt += top[t - 1]
                nb += bot[t - 1]
            if t < L - 1:
                nt += top[t + 1]
                nb += bot[t + 1]
            pt = 1.0 / (1.0 + np.exp(-(fields[t] + kappa * nt)))
            pb = 1.0 / (1.0 + np.exp(-(fields[t] + kappa * nb)))
            top[t] = 1 if u[s, t] < pt else 0
            bot[t] = 1 if u[s, t] < pb else 0
    coalesced = True
    for t in range(L):
        if top[t] != bot[t]:
            coalesced = False
            break
    return coalesced, top


def cftp_field_sample(f: ChainField, rng: np.random.Generator, max_sweeps: int = CFTP_MAX_SWEEPS) -> np.ndarray:
    """Monotone coupling from the past for an attractive chain with arbitrary fields.

    Row ``k`` of the stored uniforms drives the sweep at time ``-(k + 1)``; the
    horizon doubles until the all-ones and all-zeros chains meet at time 0.
    """
    u = rng.random((1, f.L))
    while True:
        ok, state = _cftp_pass(f.site_fields, f.coupling, u)
        if ok:
            return state
        n = u.shape[0]
        if 2 * n > max_sweeps:
            raise RuntimeError(f"coupling from the past did not coalesce within {max_sweeps} sweeps")
        u = np.concatenate([u, rng.random((n, f.L))])


def cftp_ising_sample(
    params: IsingParams, L: int, rng: np.random.Generator, size: int | None = None, max_sweeps: int = CFTP_MAX_SWEEPS
) -> np.ndarray:
    """Exact draw(s) from the Ising prior by coupling from the past."""
    f = ising_field(params, L)
    if size is None:
        return cftp_field_sample(f, rng, max_sweeps)
    return np.stack([cftp_field_sample(f, rng, max_sweeps) for _ in range(int(size))])


def ndarma_sample_path(params: NdarmaParams, L: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Simulate g_1 ~ Bern(p2), g_t = a_t g_{t-1} + (1 - a_t) e_t with a_t ~ Bern(p1), e_t ~ Bern(p2)."""
    n = 1 if size is None else int(size)
    copy = rng.random((n, L)) < params.p1
    innov = rng.random((n, L)) < params.p2
    out = np.empty((n, L), dtype=np.int8)
    out[:, 0] = innov[:, 0]
    for t in range(1, L):
        out[:, t] = np.where(copy[:, t], out[:, t - 1], innov[:, t])
    return out[0] if size is None else out
