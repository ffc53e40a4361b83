"""Time-varying VAR with rank-1 tensor coefficient bases.

Conventions used across the package:

* A coefficient set is an array of shape ``(P, N, N)``; ``coefs[j]`` multiplies
  ``y[t - j - 1]``.
* Time is 0-based. Activation paths have length ``L = T - P`` and column ``i``
  refers to series row ``t = P + i``.
* The base of component ``h`` at lag ``j`` is ``alpha3[j] * outer(alpha1, alpha2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

STATIONARITY_EPS = 1e-8


@dataclass(frozen=True)
class TensorComponent:
    """One rank-1 base: row margin, column margin and lag margin."""

    alpha1: np.ndarray
    alpha2: np.ndarray
    alpha3: np.ndarray

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.alpha1.size != self.alpha2.size:
            raise ValueError("alpha1 and alpha2 must have the same length N")

    @property
    def N(self) -> int:
        return self.alpha1.size

    @property
    def P(self) -> int:
        return self.alpha3.size


@dataclass(frozen=True)
class TimeSeries:
    """Observed series, rows are time points."""

    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError("values must be a T x N matrix")
        if not np.all(np.isfinite(vals)):
            raise ValueError("series has non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        names = tuple(self.names) if self.names else tuple(f"y{i + 1}" for i in range(vals.shape[1]))
        if len(names) != vals.shape[1]:
            raise ValueError("one name per column is required")
        object.__setattr__(self, "names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


def margins_to_arrays(components: Sequence[TensorComponent]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack component margins into ``(H, N), (H, N), (H, P)`` arrays."""
    if not components:
        raise ValueError("at least one component is required")
    a1 = np.stack([c.alpha1 for c in components])
    a2 = np.stack([c.alpha2 for c in components])
    a3 = np.stack([c.alpha3 for c in components])
    return a1, a2, a3


def matricize_component(c: TensorComponent) -> np.ndarray:
    """Return the ``(P, N, N)`` lag matrices of one rank-1 base."""
    return c.alpha3[:, None, None] * np.outer(c.alpha1, c.alpha2)[None, :, :]


def component_bases(alpha1: np.ndarray, alpha2: np.ndarray, alpha3: np.ndarray) -> np.ndarray:
    """Bases for stacked margins, shape ``(H, P, N, N)``."""
    return np.einsum("hj,hi,hk->hjik", alpha3, alpha1, alpha2)


def _paths_array(paths, H: int) -> np.ndarray:
    g = np.asarray(paths)
    if g.ndim != 2 or g.shape[0] != H:
        raise ValueError("paths must have shape (H, T - P)")
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("paths must be binary")
    return g.astype(float)


def compose_time_coefficients(components: Sequence[TensorComponent], paths, t: int) -> np.ndarray:
    """Coefficient set at series row ``t`` (0-based), summing the active bases.

    Valid rows are ``P <= t < T`` where ``T - P`` is the path length.
    """
    a1, a2, a3 = margins_to_arrays(components)
    g = _paths_array(paths, len(components))
    P = a3.shape[1]
    i = t - P
    if not 0 <= i < g.shape[1]:
        raise IndexError(f"time index {t} outside [{P}, {P + g.shape[1] - 1}]")
    return np.einsum("h,hjik->jik", g[:, i], component_bases(a1, a2, a3))


def compose_all_coefficients(alpha1, alpha2, alpha3, gamma) -> np.ndarray:
    """Coefficient sets for every modelled row, shape ``(T - P, P, N, N)``."""
    return np.einsum("ht,hjik->tjik", np.asarray(gamma, dtype=float), component_bases(alpha1, alpha2, alpha3))


def var_predict(y_history: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    """Conditional mean ``sum_j A_j y_{t-j}``; ``y_history[0]`` is the most recent row."""
    y_history = np.asarray(y_history, dtype=float)
    coefs = np.asarray(coefs, dtype=float)
    if coefs.ndim != 3 or coefs.shape[1] != coefs.shape[2]:
        raise ValueError("coefs must have shape (P, N, N)")
    if y_history.shape != coefs.shape[:2]:
        raise ValueError(f"history shape {y_history.shape} does not match (P, N) = {coefs.shape[:2]}")
    return np.einsum("jik,jk->i", coefs, y_history)


def lagged_design(y: np.ndarray, P: int) -> np.ndarray:
    """Stack lagged rows: ``X[i, j] = y[P + i - j - 1]``, shape ``(T - P, P, N)``."""
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    return np.stack([y[P - j - 1 : T - j - 1] for j in range(P)], axis=1)


def simulate_var(
    components: Sequence[TensorComponent],
    paths,
    sigma,
    y_init: np.ndarray | None,
    T: int,
    seed,
) -> TimeSeries:
    """Forward-simulate the time-varying VAR with Gaussian noise of std ``sigma``.

    When ``y_init`` is None the first P rows are drawn iid N(0, sigma_i^2).
    """
    a1, a2, a3 = margins_to_arrays(components)
    N, P = a1.shape[1], a3.shape[1]
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (N,):
        raise ValueError("sigma must have length N")
    if np.any(~(sigma > 0)):
        raise ValueError("noise standard deviations must be positive")
    if T <= P:
        raise ValueError("T must exceed P")
    g = _paths_array(paths, len(components))
    if g.shape[1] != T - P:
        raise ValueError("paths must have length T - P")
    rng = np.random.default_rng(seed)
    y = np.empty((T, N))
    if y_init is None:
        y[:P] = rng.standard_normal((P, N)) * sigma
    else:
        y_init = np.asarray(y_init, dtype=float)
        if y_init.shape != (P, N):
            raise ValueError("y_init must have shape (P, N)")
        y[:P] = y_init
    noise = rng.standard_normal((T - P, N)) * sigma
    coefs = compose_all_coefficients(a1, a2, a3, g)
    for i in range(T - P):
        t = P + i
        y[t] = np.einsum("jik,jk->i", coefs[i], y[t - P : t][::-1]) + noise[i]
    return TimeSeries(y)


def companion_matrix(coefs: np.ndarray) -> np.ndarray:
    coefs = np.asarray(coefs, dtype=float)
    P, N, _ = coefs.shape
    comp = np.zeros((N * P, N * P))
    comp[:N, :] = np.concatenate(list(coefs), axis=1)
    if P > 1:
        comp[N:, :-N] = np.eye(N * (P - 1))
    return comp


def spectral_radius(coefs: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(coefs)))))


def is_stationary(coefs: np.ndarray, eps: float = STATIONARITY_EPS) -> bool:
    """True iff the companion matrix has spectral radius below ``1 - eps``."""
    return spectral_radius(coefs) < 1.0 - eps
