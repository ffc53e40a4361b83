"""Simulate-fit-score loops for the two synthetic designs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .evaluation import EMPTY_THRESHOLD, EvalReport, evaluate_fit
from .gibbs import ChainConfig, FitResult, fit, summarize_gamma
from .priors import HyperParams
from .simulation import STUDY2_LAYOUT, SimDesign, SimTruth, generate_study1_dataset, generate_study2_dataset
from .tensor_var import TimeSeries


@dataclass
class ReplicateOutcome:
    index: int
    series: TimeSeries
    truth: SimTruth
    result: FitResult
    report: EvalReport


def _streams(seed: int, n: int) -> list[tuple[np.random.Generator, int]]:
    """Per-replicate (data generator, chain seed) pairs, independent of scheduling."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        data_ss, chain_ss = child.spawn(2)
        out.append((np.random.default_rng(data_ss), int(chain_ss.generate_state(1, dtype=np.uint64)[0])))
    return out


def _score(series, truth, hp, cfg, gamma_threshold, empty_threshold, matching) -> tuple[FitResult, EvalReport]:
    res = fit(series, hp, cfg)
    rep = evaluate_fit(
        res.posterior_mean_A,
        res.posterior_mean_bases,
        summarize_gamma(res, gamma_threshold),
        hp.P,
        truth,
        empty_threshold,
        matching,
    )
    return res, rep


def replicate_study1(
    design: SimDesign,
    hp: HyperParams,
    cfg: ChainConfig,
    n_replicates: int,
    seed: int,
    threads: int = 1,
    gamma_threshold: float = 0.5,
    empty_threshold: float = EMPTY_THRESHOLD,
    matching: str = "greedy",
) -> list[ReplicateOutcome]:
    """Independent datasets, one fit each. Results do not depend on ``threads``."""
    streams = _streams(seed, n_replicates)

    def one(i: int) -> ReplicateOutcome:
        rng, chain_seed = streams[i]
        series, truth = generate_study1_dataset(design, rng)
        res, rep = _score(series, truth, hp, replace(cfg, seed=chain_seed), gamma_threshold, empty_threshold, matching)
        return ReplicateOutcome(i, series, truth, res, rep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(n_replicates)))
    return [one(i) for i in range(n_replicates)]


def replicate_study2(
    hp: HyperParams,
    cfg: ChainConfig,
    seed: int,
    N: int = 40,
    T: int = 300,
    P_true: int = 3,
    layout=STUDY2_LAYOUT,
    inclusion_prob: float = 0.5,
    gamma_threshold: float = 0.5,
    empty_threshold: float = EMPTY_THRESHOLD,
    matching: str = "greedy",
) -> ReplicateOutcome:
    (rng, chain_seed), = _streams(seed, 1)
    series, truth = generate_study2_dataset(rng, N, T, P_true, layout, inclusion_prob)
    res, rep = _score(series, truth, hp, replace(cfg, seed=chain_seed), gamma_threshold, empty_threshold, matching)
    return ReplicateOutcome(0, series, truth, res, rep)


def summarize_reports(reports: list[EvalReport]) -> dict[str, dict[str, float | int | None]]:
    """Mean, standard deviation and count of every metric, skipping absent values."""
    out = {}
    rows = [r.as_row() for r in reports]
    for key in rows[0]:
        vals = np.array([r[key] for r in rows if r[key] is not None], dtype=float)
        out[key] = {
            "mean": float(vals.mean()) if vals.size else None,
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else None,
            "n": int(vals.size),
        }
    return out
