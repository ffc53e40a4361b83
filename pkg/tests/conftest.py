from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def binary_configs(L: int) -> np.ndarray:
    """All 2^L binary vectors of length L, one per row, in lexicographic order."""
    idx = np.arange(2**L)
    return ((idx[:, None] >> np.arange(L - 1, -1, -1)) & 1).astype(np.int8)


def empirical_pmf(draws: np.ndarray) -> np.ndarray:
    """Frequencies of each configuration, indexed like :func:`binary_configs`."""
    L = draws.shape[1]
    codes = draws.astype(np.int64) @ (1 << np.arange(L - 1, -1, -1))
    return np.bincount(codes, minlength=2**L) / draws.shape[0]


def within_binomial_band(count_or_mean: float, p: float, n: int, k: float = 3.0) -> bool:
    sd = np.sqrt(p * (1.0 - p) / n)
    return abs(count_or_mean - p) <= k * sd + 1e-12


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one verdict line per acceptance criterion; shown in the terminal summary."""

    def record(number: int, name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {number} {'PASS' if passed else 'FAIL'}  {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
