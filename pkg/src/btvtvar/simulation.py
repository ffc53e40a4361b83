"""Synthetic data for the two simulation designs and a replicate harness."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ising import NdarmaParams, ndarma_sample_path
from .tensor_var import (
    TensorComponent,
    TimeSeries,
    component_bases,
    compose_all_coefficients,
    is_stationary,
    simulate_var,
)

MAX_REJECTIONS = 10_000


class StationarityError(ValueError):
    """The design admits no stationary draw within the rejection budget."""


@dataclass(frozen=True)
class SimDesign:
    N: int = 10
    T: int = 100
    P_true: int = 3
    H_true: int = 3
    noise_sd: tuple[float, ...] | None = None
    inclusion_prob: float = 0.5
    max_rejections: int = MAX_REJECTIONS

    def __post_init__(self):
        if self.noise_sd is None:
            object.__setattr__(self, "noise_sd", tuple(np.arange(1, self.N + 1) / 5.0))
        sd = np.asarray(self.noise_sd, dtype=float)
        if sd.shape != (self.N,) or np.any(sd <= 0):
            raise ValueError("noise_sd must hold N positive values")
        object.__setattr__(self, "noise_sd", tuple(float(s) for s in sd))
        if not 0.0 <= self.inclusion_prob <= 1.0:
            raise ValueError("inclusion_prob must lie in [0, 1]")
        if self.T <= self.P_true:
            raise ValueError("T must exceed P_true")


@dataclass(frozen=True)
class SimTruth:
    alpha1: np.ndarray  # (H, N)
    alpha2: np.ndarray
    alpha3: np.ndarray  # (H, P)
    gamma: np.ndarray  # (H, T - P) int8
    noise_sd: np.ndarray
    ndarma: tuple[NdarmaParams, ...] = field(default=())

    @property
    def P(self) -> int:
        return self.alpha3.shape[1]

    @property
    def H(self) -> int:
        return self.alpha1.shape[0]

    @property
    def components(self) -> list[TensorComponent]:
        return [TensorComponent(*m) for m in zip(self.alpha1, self.alpha2, self.alpha3)]

    def bases(self) -> np.ndarray:
        return component_bases(self.alpha1, self.alpha2, self.alpha3)

    def coefficients(self) -> np.ndarray:
        return compose_all_coefficients(self.alpha1, self.alpha2, self.alpha3, self.gamma)


def _spike_slab(shape, prob: float, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random(shape) < prob, rng.standard_normal(shape), 0.0)


def _draw_margins(N: int, P: int, prob: float, rng: np.random.Generator):
    return _spike_slab(N, prob, rng), _spike_slab(N, prob, rng), _spike_slab(P, prob, rng)


def all_subsets_stationary(bases: np.ndarray) -> bool:
    """Every subset sum of the component bases (including the empty one) is stationary."""
    H = bases.shape[0]
    for r in range(1, H + 1):
        for idx in itertools.combinations(range(H), r):
            if not is_stationary(bases[list(idx)].sum(axis=0)):
                return False
    return True


def draw_stationary_margins(
    N: int,
    P: int,
    H: int,
    prob: float,
    rng: np.random.Generator,
    max_rejections: int = MAX_REJECTIONS,
    require_nonzero: bool = False,
):
    """Spike-and-slab margins whose every subset composition is stationary.

    Each component is first redrawn until it is stationary on its own (a
    necessary condition), then whole tuples are rejected until all 2^H subset
    sums pass. With ``require_nonzero`` a component whose base is identically
    zero is redrawn as well.
    """
    for _ in range(max_rejections):
        margins = []
        for _h in range(H):
            for _ in range(max_rejections):
                m = _draw_margins(N, P, prob, rng)
                if require_nonzero and not all(np.any(x != 0) for x in m):
                    continue
                if is_stationary(m[2][:, None, None] * np.outer(m[0], m[1])[None]):
                    break
            else:
                raise StationarityError(f"no stationary component after {max_rejections} rejections")
            margins.append(m)
        a1, a2, a3 = (np.stack(x) for x in zip(*margins))
        if all_subsets_stationary(component_bases(a1, a2, a3)):
            return a1, a2, a3
    raise StationarityError(f"no stationary configuration after {max_rejections} rejections")


def generate_study1_dataset(design: SimDesign, rng: np.random.Generator) -> tuple[TimeSeries, SimTruth]:
    """Random sparse rank-1 components, NDARMA activation paths with Uniform(0,1) parameters."""
    N, P, H, T = design.N, design.P_true, design.H_true, design.T
    a1, a2, a3 = draw_stationary_margins(N, P, H, design.inclusion_prob, rng, design.max_rejections)
    L = T - P
    params = []
    paths = np.empty((H, L), dtype=np.int8)
    for h in range(H):
        p1, p2 = rng.random(2)
        p2 = min(max(p2, 1e-12), 1.0 - 1e-12)
        prm = NdarmaParams(float(min(p1, 1.0 - 1e-12)), float(p2))
        params.append(prm)
        paths[h] = ndarma_sample_path(prm, L, rng)
    sd = np.asarray(design.noise_sd)
    truth = SimTruth(a1, a2, a3, paths, sd, tuple(params))
    series = simulate_var(truth.components, paths, sd, None, T, rng)
    return series, truth


def study2_noise_sd(N: int = 40) -> np.ndarray:
    """Standard deviations whose variances are i/5 for i <= 25 and (51 - i)/5 afterwards."""
    i = np.arange(1, N + 1)
    var = np.where(i <= 25, i / 5.0, (51 - i) / 5.0)
    return np.sqrt(var)


STUDY2_LAYOUT = ((0, 1), (1, 2), (2,))


def study2_paths(T: int = 300, P: int = 3, layout=STUDY2_LAYOUT, H: int = 3) -> np.ndarray:
    """Block activations: the series is cut into ``len(layout)`` equal windows (1-based t)."""
    L = T - P
    t = np.arange(P + 1, T + 1)  # 1-based times of the modelled rows
    edges = np.linspace(0, T, len(layout) + 1)
    paths = np.zeros((H, L), dtype=np.int8)
    for w, active in enumerate(layout):
        inside = (t > edges[w]) & (t <= edges[w + 1])
        for h in active:
            paths[h, inside] = 1
    return paths


def generate_study2_dataset(
    rng: np.random.Generator, N: int = 40, T: int = 300, P: int = 3, layout=STUDY2_LAYOUT, inclusion_prob: float = 0.5
) -> tuple[TimeSeries, SimTruth]:
    H = 1 + max(max(a) for a in layout)
    # the layout names H distinct components, so none may vanish identically
    a1, a2, a3 = draw_stationary_margins(N, P, H, inclusion_prob, rng, require_nonzero=True)
    paths = study2_paths(T, P, layout, H)
    sd = study2_noise_sd(N)
    truth = SimTruth(a1, a2, a3, paths, sd)
    series = simulate_var(truth.components, paths, sd, None, T, rng)
    return series, truth
