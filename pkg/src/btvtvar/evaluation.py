"""Scoring a fit against a known truth: coefficient errors, component matching, activation recovery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

EMPTY_THRESHOLD = 0.01


def pad_lags(coefs: np.ndarray, P: int) -> np.ndarray:
    """Zero-pad the lag axis (second to last pair of axes is (N, N); lag axis is -3)."""
    coefs = np.asarray(coefs, dtype=float)
    extra = P - coefs.shape[-3]
    if extra < 0:
        raise ValueError("cannot pad to fewer lags")
    if extra == 0:
        return coefs
    width = [(0, 0)] * coefs.ndim
    width[-3] = (0, extra)
    return np.pad(coefs, width)


def align_coefficients(est: np.ndarray, P_est: int, truth: np.ndarray, P_true: int):
    """Restrict both per-t coefficient arrays to their common rows and a common lag count."""
    P = max(P_est, P_true)
    start = max(P_est, P_true)
    est = pad_lags(est, P)[start - P_est :]
    truth = pad_lags(truth, P)[start - P_true :]
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch after alignment: {est.shape} vs {truth.shape}")
    return est, truth


def err_coefficients(estimated: np.ndarray, truth: np.ndarray) -> float:
    """sqrt( sum_{t,j} ||A~_{j,t} - A_{j,t}||_F / (n_t N^2 P) ), Frobenius norms not squared."""
    estimated = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimated.shape != truth.shape or estimated.ndim != 4:
        raise ValueError("estimated and truth must share shape (n_t, P, N, N)")
    n_t, P, N, _ = truth.shape
    fro = np.sqrt(np.sum((estimated - truth) ** 2, axis=(2, 3)))
    return float(np.sqrt(fro.sum() / (n_t * N * N * P)))


def err_coefficients_squared(estimated: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared entry error (squared Frobenius norms under the root)."""
    estimated = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimated.shape != truth.shape:
        raise ValueError("shape mismatch")
    return float(np.sqrt(np.mean((estimated - truth) ** 2)))


def detect_empty_components(bases: np.ndarray, threshold: float = EMPTY_THRESHOLD) -> np.ndarray:
    """Indices h with max_j ||A*_{j,h}||_max < threshold."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    bases = np.asarray(bases, dtype=float)
    peak = np.max(np.abs(bases.reshape(bases.shape[0], -1)), axis=1)
    return np.flatnonzero(peak < threshold)


def _distance_matrix(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    P = max(est.shape[1], truth.shape[1])
    e = pad_lags(est, P).reshape(est.shape[0], P * est.shape[-1] ** 2)
    t = pad_lags(truth, P).reshape(truth.shape[0], P * truth.shape[-1] ** 2)
    return np.sqrt(np.sum((e[:, None, :] - t[None, :, :]) ** 2, axis=2))


def match_components(est_bases: np.ndarray, true_bases: np.ndarray, method: str = "greedy") -> np.ndarray:
    """Map each estimated component to a true one (or -1) by Frobenius distance.

    ``greedy`` repeatedly takes the globally closest unassigned pair; ``optimal``
    minimizes the total distance.
    """
    D = _distance_matrix(np.asarray(est_bases, dtype=float), np.asarray(true_bases, dtype=float))
    out = np.full(D.shape[0], -1, dtype=int)
    if D.size == 0:
        return out
    if method == "optimal":
        rows, cols = linear_sum_assignment(D)
        out[rows] = cols
        return out
    if method != "greedy":
        raise ValueError("method must be 'greedy' or 'optimal'")
    D = D.copy()
    for _ in range(min(D.shape)):
        i, j = np.unravel_index(np.argmin(D), D.shape)
        out[i] = j
        D[i, :] = np.inf
        D[:, j] = np.inf
    return out


@dataclass(frozen=True)
class ComponentErrors:
    overall: float
    nonzero_entries: float | None
    zero_entries: float | None
    per_component: tuple[float, ...]


def err_components(est_bases: np.ndarray, true_bases: np.ndarray, matching: np.ndarray) -> ComponentErrors:
    """Per true component e_h = sqrt( sum_j ||A~*_{j,h} - A*_{j,h}||_F / (N^2 P) ), averaged.

    A true component with no matched estimate is compared against zero.
    The entry-level columns are mean absolute errors over truly non-zero and
    truly zero entries, pooled over components.
    """
    est_bases = np.asarray(est_bases, dtype=float)
    true_bases = np.asarray(true_bases, dtype=float)
    P = max(est_bases.shape[1], true_bases.shape[1])
    est = pad_lags(est_bases, P)
    tru = pad_lags(true_bases, P)
    N = tru.shape[-1]
    per = []
    nz, zz = [], []
    for k in range(tru.shape[0]):
        hits = np.flatnonzero(np.asarray(matching) == k)
        e = est[hits[0]] if hits.size else np.zeros_like(tru[k])
        diff = e - tru[k]
        per.append(float(np.sqrt(np.sum(np.sqrt(np.sum(diff**2, axis=(1, 2)))) / (N * N * P))))
        mask = tru[k] != 0
        nz.append(np.abs(diff[mask]))
        zz.append(np.abs(diff[~mask]))
    nz_all = np.concatenate(nz) if nz else np.empty(0)
    zz_all = np.concatenate(zz) if zz else np.empty(0)
    return ComponentErrors(
        overall=float(np.mean(per)) if per else 0.0,
        nonzero_entries=float(nz_all.mean()) if nz_all.size else None,
        zero_entries=float(zz_all.mean()) if zz_all.size else None,
        per_component=tuple(per),
    )


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    tp: int
    tn: int
    fp: int
    fn: int


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def confusion_metrics(pred: np.ndarray, true: np.ndarray) -> ClassificationMetrics:
    pred = np.asarray(pred).astype(bool).ravel()
    true = np.asarray(true).astype(bool).ravel()
    tp = int(np.sum(pred & true))
    tn = int(np.sum(~pred & ~true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    return ClassificationMetrics(
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        precision=_ratio(tp, tp + fp),
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
    )


def gamma_classification(est_paths: np.ndarray, true_paths: np.ndarray, matching: np.ndarray) -> ClassificationMetrics:
    """Pooled confusion metrics over matched (estimate, truth) pairs and all t.

    ``matching[i]`` is the true index paired with estimate ``i`` or -1. Paths
    must already share their time axis. With no matched pair every ratio is
    absent.
    """
    est_paths = np.asarray(est_paths)
    true_paths = np.asarray(true_paths)
    if est_paths.shape[1] != true_paths.shape[1]:
        raise ValueError("paths must share the time axis")
    pairs = [(i, int(k)) for i, k in enumerate(np.asarray(matching)) if k >= 0]
    if not pairs:
        return confusion_metrics(np.empty(0), np.empty(0))
    pred = np.concatenate([est_paths[i] for i, _ in pairs])
    true = np.concatenate([true_paths[k] for _, k in pairs])
    return confusion_metrics(pred, true)


@dataclass(frozen=True)
class EvalReport:
    err_A: float
    err_A_squared: float
    components: ComponentErrors
    gamma: ClassificationMetrics
    matching: tuple[int, ...]
    empty_components: tuple[int, ...]
    n_nonempty: int
    extra_lag_norm: float | None = None
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        g = self.gamma
        return {
            "err_A": self.err_A,
            "err_A_squared": self.err_A_squared,
            "err_components": self.components.overall,
            "err_nonzero_entries": self.components.nonzero_entries,
            "err_zero_entries": self.components.zero_entries,
            "accuracy": g.accuracy,
            "sensitivity": g.sensitivity,
            "specificity": g.specificity,
            "precision": g.precision,
            "n_nonempty": self.n_nonempty,
            "extra_lag_norm": self.extra_lag_norm,
        }


def evaluate_fit(
    posterior_mean_A: np.ndarray,
    posterior_mean_bases: np.ndarray,
    gamma_est: np.ndarray,
    P_fit: int,
    truth,
    empty_threshold: float = EMPTY_THRESHOLD,
    method: str = "greedy",
) -> EvalReport:
    """Score posterior summaries against a :class:`~btvtvar.simulation.SimTruth`.

    ``gamma_est`` is the thresholded activation matrix ``(H_fit, T - P_fit)``.
    Empty estimates are removed before matching. Truly empty true components
    (all-zero base) are left out of matching because their paths are not
    identifiable. Activation metrics pool the matched pairs only.
    """
    est_A, true_A = align_coefficients(posterior_mean_A, P_fit, truth.coefficients(), truth.P)
    empties = detect_empty_components(posterior_mean_bases, empty_threshold)
    nonempty = np.setdiff1d(np.arange(posterior_mean_bases.shape[0]), empties)
    true_bases = truth.bases()
    true_live = np.flatnonzero(np.max(np.abs(true_bases.reshape(true_bases.shape[0], -1)), axis=1) > 0)
    sub = match_components(posterior_mean_bases[nonempty], true_bases[true_live], method)
    matching = np.full(posterior_mean_bases.shape[0], -1, dtype=int)
    for i, j in zip(nonempty, sub):
        matching[i] = true_live[j] if j >= 0 else -1
    comp = err_components(posterior_mean_bases, true_bases, matching)
    start = max(P_fit, truth.P)
    g_est = np.asarray(gamma_est)[:, start - P_fit :]
    g_true = truth.gamma[:, start - truth.P :]
    gm = gamma_classification(g_est, g_true, matching)
    lag_norm = None
    if P_fit > truth.P:
        lag_norm = float(np.mean(np.sqrt(np.sum(np.asarray(posterior_mean_A)[:, P_fit - 1] ** 2, axis=(1, 2)))))
    return EvalReport(
        err_A=err_coefficients(est_A, true_A),
        err_A_squared=err_coefficients_squared(est_A, true_A),
        components=comp,
        gamma=gm,
        matching=tuple(int(m) for m in matching),
        empty_components=tuple(int(e) for e in empties),
        n_nonempty=int(nonempty.size),
        extra_lag_norm=lag_norm,
    )
