"""Random variate generators and log densities used by the sampler.

Generalized inverse Gaussian (giG) convention used throughout the package::

    f(x; p, a, b) ∝ x**(p - 1) * exp(-(a * x + b / x) / 2),   x > 0

Every call site states its ``(p, a, b)`` in this convention.
"""

from __future__ import annotations

import numpy as np
from scipy.special import betaln, gammaln, kve

LOG_2PI = float(np.log(2.0 * np.pi))

# Below this value of sqrt(a*b) the giG is replaced by its Gamma / inverse-Gamma limit.
# The rejection sampler itself is accurate far below this; the floor only guards
# against omega**2 underflowing.
_OMEGA_FLOOR = 1e-150


def _psi(x, alpha, lam):
    return -alpha * (np.cosh(x) - 1.0) - lam * (np.expm1(x) - x)


def _dpsi(x, alpha, lam):
    return -alpha * np.sinh(x) - lam * np.expm1(x)


def _gig_standard(lam: np.ndarray, omega: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw Y with density ∝ y**(lam-1) exp(-omega (y + 1/y) / 2), lam >= 0, omega > 0.

    Devroye's (2014) rejection sampler on log(Y) with a flat centre and two
    exponential tails; the acceptance rate is bounded uniformly in (lam, omega).
    """
    lam = np.asarray(lam, dtype=float)
    omega = np.asarray(omega, dtype=float)
    alpha = omega**2 / (np.sqrt(omega**2 + lam**2) + lam)

    m1 = -_psi(1.0, alpha, lam)
    t = np.where(
        (m1 >= 0.5) & (m1 <= 2.0),
        1.0,
        np.where(m1 > 2.0, np.sqrt(2.0 / (alpha + lam)), np.log(4.0 / (alpha + 2.0 * lam))),
    )
    mm1 = -_psi(-1.0, alpha, lam)
    with np.errstate(divide="ignore"):
        inv_lam = np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), np.inf)
    s_small = np.minimum(inv_lam, np.log1p(1.0 / alpha + np.sqrt(1.0 / alpha**2 + 2.0 / alpha)))
    s = np.where(
        (mm1 >= 0.5) & (mm1 <= 2.0),
        1.0,
        np.where(mm1 > 2.0, np.sqrt(4.0 / (alpha * np.cosh(1.0) + lam)), s_small),
    )
    eta = -_psi(t, alpha, lam)
    zeta = -_dpsi(t, alpha, lam)
    theta = -_psi(-s, alpha, lam)
    xi = _dpsi(-s, alpha, lam)
    p = 1.0 / xi
    r = 1.0 / zeta
    td = t - r * eta
    sd = s - p * theta
    q = td + sd
    total = p + q + r

    out = np.empty(lam.shape)
    todo = np.arange(lam.size)
    flat = [a.reshape(-1) for a in (lam, alpha, t, s, eta, zeta, theta, xi, p, r, td, sd, q, total)]
    lam_f, alpha_f, t_f, s_f, eta_f, zeta_f, theta_f, xi_f, p_f, r_f, td_f, sd_f, q_f, tot_f = flat
    out_f = out.reshape(-1)
    while todo.size:
        u, v, w = rng.random((3, todo.size))
        pi, qi, ri = p_f[todo], q_f[todo], r_f[todo]
        tdi, sdi, toti = td_f[todo], sd_f[todo], tot_f[todo]
        left = u < qi / toti
        mid = ~left & (u < (qi + ri) / toti)
        x = np.where(left, -sdi + qi * v, np.where(mid, tdi - ri * np.log(v), -sdi + pi * np.log(v)))
        chi = np.ones_like(x)
        hi = x > tdi
        lo = x < -sdi
        chi[hi] = np.exp(-eta_f[todo][hi] - zeta_f[todo][hi] * (x[hi] - t_f[todo][hi]))
        chi[lo] = np.exp(-theta_f[todo][lo] + xi_f[todo][lo] * (x[lo] + s_f[todo][lo]))
        with np.errstate(over="ignore"):
            accept = w * chi <= np.exp(_psi(x, alpha_f[todo], lam_f[todo]))
        idx = todo[accept]
        out_f[idx] = x[accept]
        todo = todo[~accept]

    ratio = lam / omega
    return (ratio + np.sqrt(1.0 + ratio**2)) * np.exp(out)


def gig_rvs(p, a, b, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from giG(p, a, b); parameters broadcast against each other and ``size``.

    ``b == 0`` (with p > 0) gives Gamma(p, rate=a/2); ``a == 0`` (with p < 0)
    gives InvGamma(-p, scale=b/2). Both limits are also used when sqrt(a*b)
    is so small that its square underflows.
    """
    p, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, a, b)))
    if size is not None:
        p, a, b = (np.broadcast_to(v, size) for v in (p, a, b))
    p, a, b = (np.array(v, dtype=float) for v in (p, a, b))
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("giG requires a >= 0 and b >= 0")
    omega = np.sqrt(a * b)
    out = np.empty(p.shape)

    degenerate = omega < _OMEGA_FLOOR
    gamma_lim = degenerate & (p > 0) & (a > 0)
    invgamma_lim = degenerate & (p < 0) & (b > 0)
    bad = degenerate & ~(gamma_lim | invgamma_lim)
    if np.any(bad):
        raise ValueError("improper giG: need p > 0 when b == 0 and p < 0 when a == 0")
    if np.any(gamma_lim):
        out[gamma_lim] = rng.gamma(p[gamma_lim], 2.0 / a[gamma_lim])
    if np.any(invgamma_lim):
        out[invgamma_lim] = (b[invgamma_lim] / 2.0) / rng.gamma(-p[invgamma_lim])

    reg = ~degenerate
    if np.any(reg):
        lam = np.abs(p[reg])
        y = _gig_standard(lam, omega[reg], rng)
        y = np.where(p[reg] < 0, 1.0 / y, y)
        out[reg] = np.sqrt(b[reg] / a[reg]) * y
    return out


def gig_logpdf(x, p, a, b):
    """Normalized giG(p, a, b) log density (requires a > 0, b > 0)."""
    x, p, a, b = (np.asarray(v, dtype=float) for v in (x, p, a, b))
    omega = np.sqrt(a * b)
    log_k = np.log(kve(p, omega)) - omega
    log_norm = 0.5 * p * (np.log(a) - np.log(b)) - np.log(2.0) - log_k
    return log_norm + (p - 1.0) * np.log(x) - 0.5 * (a * x + b / x)


def gig_lognorm_const(p, a, b):
    """log of ∫ x**(p-1) exp(-(a x + b/x)/2) dx for a > 0, b > 0."""
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    omega = np.sqrt(a * b)
    return np.log(2.0) + log_bessel_k(p, omega) + 0.5 * p * (np.log(b) - np.log(a))


def log_bessel_k(nu, x):
    """log K_nu(x), switching to the small-argument expansion where kve overflows."""
    nu, x = np.broadcast_arrays(np.abs(np.asarray(nu, dtype=float)), np.asarray(x, dtype=float))
    with np.errstate(over="ignore", divide="ignore"):
        out = np.log(kve(nu, x)) - x
    bad = ~np.isfinite(out)
    if np.any(bad):
        n, z = nu[bad], x[bad]
        small = np.where(
            n > 0,
            gammaln(np.maximum(n, 1e-300)) + (n - 1.0) * np.log(2.0) - n * np.log(z),
            np.log(np.maximum(-np.log(z / 2.0) - np.euler_gamma, 1e-300)),
        )
        out = np.array(out, dtype=float)
        out[bad] = small
    return out[()] if out.ndim == 0 else out


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def invgamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def beta_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)


def normal_logpdf(x, var):
    """Zero-mean Gaussian log density with variance ``var``."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + x**2 / var)


def student_t_logpdf(x, df, scale2):
    """Zero-centred Student-t log density with ``df`` degrees of freedom and squared scale ``scale2``."""
    x = np.asarray(x, dtype=float)
    return (
        gammaln(0.5 * (df + 1.0))
        - gammaln(0.5 * df)
        - 0.5 * np.log(df * np.pi * scale2)
        - 0.5 * (df + 1.0) * np.log1p(x**2 / (df * scale2))
    )


def dirichlet_logpdf(x, conc):
    """Symmetric Dirichlet log density on the simplex (density w.r.t. the first K-1 coordinates)."""
    x = np.asarray(x, dtype=float)
    k = x.size
    if k == 1:
        return 0.0
    return float(gammaln(k * conc) - k * gammaln(conc) + (conc - 1.0) * np.sum(np.log(x)))


def exponential_logpdf(x, rate):
    x = np.asarray(x, dtype=float)
    return np.log(rate) - rate * x
