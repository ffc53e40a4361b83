"""Reading and writing series, simulation truths, fit archives and reports.

All floating point values are written with 17 significant digits so every
file round-trips bit-exactly. A fit archive is a directory::

    manifest.json            format_version, tool_version, config_hash, seed, wall_clock, dims
    draws_margins.csv        draw, component, margin, index, value   (margin in alpha1/alpha2/alpha3, index 1-based)
    draws_paths.csv          draw, component, t<P+1> ... t<T>        (0/1 activations)
    draws_component.csv      draw, component, theta, kappa, phi
    draws_global.csv         draw, tau, alpha_conc
    draws_sigma2.csv         draw, series, sigma2
    posterior_mean_A.csv     t, lag, target, <one column per source series>
    posterior_mean_bases.csv component, lag, target, <one column per source series>
    gamma_prob.csv           t, component_1 ... component_H
    diagnostics.csv          component, ising_acceptance
    traces.csv               chain, iteration, tau, alpha_conc

Time indices ``t`` are 1-based positions in the input series.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gibbs import FitResult
from .simulation import SimTruth
from .tensor_var import TimeSeries

FORMAT_VERSION = 1
_MARGINS = ("alpha1", "alpha2", "alpha3")


class DataError(ValueError):
    """Malformed or inconsistent input files."""


def fmt(x) -> str:
    return format(float(x), ".17g")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise DataError(f"missing file {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows[0], rows[1:]


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# time series


def save_timeseries_csv(path: str | Path, series: TimeSeries) -> None:
    _write_rows(Path(path), list(series.names), ([fmt(v) for v in row] for row in series.values))


def load_timeseries_csv(path: str | Path, P: int | None = None) -> TimeSeries:
    """Rectangular numeric CSV with one header row of series names; rows are time points."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: line 1: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    if all(_is_number(h) for h in header):
        raise DataError(f"{path}: line 1: missing header row (found only numbers)")
    if any(not h for h in header):
        raise DataError(f"{path}: line 1: empty series name")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, found {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            bad = next(c for c in row if not _is_number(c))
            raise DataError(f"{path}: line {lineno}: non-numeric cell {bad!r}") from None
        if not np.all(np.isfinite(values[-1])):
            raise DataError(f"{path}: line {lineno}: non-finite value")
    if not values:
        raise DataError(f"{path}: no data rows")
    if P is not None and len(values) <= P:
        raise DataError(f"{path}: {len(values)} time points, need more than P={P}")
    return TimeSeries(np.array(values), tuple(header))


# ---------------------------------------------------------------------------
# manifest


def write_manifest(directory: Path, kind: str, seed: int, config_hash: str, wall_clock: float, **extra) -> None:
    from . import __version__

    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "tool_version": __version__,
        "config_hash": config_hash,
        "seed": int(seed),
        "wall_clock": float(wall_clock),
        **extra,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(directory: Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DataError(f"{directory}: no manifest.json")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    return doc


# ---------------------------------------------------------------------------
# simulation truth


def save_truth(directory: str | Path, truth: SimTruth, names: tuple[str, ...] | None = None) -> None:
    d = Path(directory)
    rows = []
    for h in range(truth.H):
        for name, arr in zip(_MARGINS, (truth.alpha1, truth.alpha2, truth.alpha3)):
            rows.extend([h + 1, name, i + 1, fmt(v)] for i, v in enumerate(arr[h]))
    _write_rows(d / "truth_components.csv", ["component", "margin", "index", "value"], rows)
    L = truth.gamma.shape[1]
    P = truth.P
    _write_rows(
        d / "truth_paths.csv",
        ["t"] + [f"component_{h + 1}" for h in range(truth.H)],
        ([P + 1 + i] + [int(g) for g in truth.gamma[:, i]] for i in range(L)),
    )
    names = names or tuple(f"y{i + 1}" for i in range(truth.noise_sd.size))
    _write_rows(d / "truth_noise.csv", ["series", "noise_sd"], ([n, fmt(s)] for n, s in zip(names, truth.noise_sd)))


def _long_margins(rows: list[list[str]], path: Path, offset: int = 0):
    """Parse (component, margin, index, value) rows into three (H, .) arrays."""
    recs: dict[str, dict[tuple[int, int], float]] = {m: {} for m in _MARGINS}
    for lineno, r in enumerate(rows, start=2):
        try:
            h, m, i, v = int(r[offset]), r[offset + 1], int(r[offset + 2]), float(r[offset + 3])
        except (ValueError, IndexError):
            raise DataError(f"{path}: line {lineno}: malformed row") from None
        if m not in recs:
            raise DataError(f"{path}: line {lineno}: unknown margin {m!r}")
        recs[m][(h, i)] = v
    out = []
    for m in _MARGINS:
        if not recs[m]:
            raise DataError(f"{path}: no rows for {m}")
        H = max(k[0] for k in recs[m])
        n = max(k[1] for k in recs[m])
        arr = np.zeros((H, n))
        for (h, i), v in recs[m].items():
            arr[h - 1, i - 1] = v
        out.append(arr)
    return out


def load_truth(directory: str | Path) -> SimTruth:
    d = Path(directory)
    path = d / "truth_components.csv"
    _, rows = _read_rows(path)
    a1, a2, a3 = _long_margins(rows, path)
    if not (a1.shape == a2.shape and a1.shape[0] == a3.shape[0]):
        raise DataError(f"{path}: inconsistent margin shapes")
    header, rows = _read_rows(d / "truth_paths.csv")
    gamma = np.array([[int(c) for c in r[1:]] for r in rows], dtype=np.int8).T
    if gamma.shape[0] != a1.shape[0]:
        raise DataError("truth_paths.csv and truth_components.csv disagree on the number of components")
    noise_path = d / "truth_noise.csv"
    if noise_path.exists():
        _, rows = _read_rows(noise_path)
        sd = np.array([float(r[1]) for r in rows])
    else:
        sd = np.ones(a1.shape[1])
    return SimTruth(a1, a2, a3, gamma.reshape(a1.shape[0], -1), sd)


# ---------------------------------------------------------------------------
# fit archives


@dataclass
class FitArchive:
    result: FitResult
    names: tuple[str, ...]
    manifest: dict = field(default_factory=dict)


def _names(N: int, names) -> tuple[str, ...]:
    return tuple(names) if names else tuple(f"y{i + 1}" for i in range(N))


def save_fit_archive(
    directory: str | Path,
    result: FitResult,
    names: tuple[str, ...] | None,
    seed: int,
    config_hash: str,
    wall_clock: float,
) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dr = result.draws
    S, H, N = dr["alpha1"].shape
    P, T = result.P, result.T
    L = T - P
    names = _names(N, names)

    def margin_rows():
        for s in range(S):
            for h in range(H):
                for m in _MARGINS:
                    for i, v in enumerate(dr[m][s, h]):
                        yield [s + 1, h + 1, m, i + 1, fmt(v)]

    _write_rows(d / "draws_margins.csv", ["draw", "component", "margin", "index", "value"], margin_rows())
    _write_rows(
        d / "draws_paths.csv",
        ["draw", "component"] + [f"t{P + 1 + i}" for i in range(L)],
        ([s + 1, h + 1] + dr["gamma"][s, h].tolist() for s in range(S) for h in range(H)),
    )
    _write_rows(
        d / "draws_component.csv",
        ["draw", "component", "theta", "kappa", "phi"],
        (
            [s + 1, h + 1, fmt(dr["theta"][s, h]), fmt(dr["kappa"][s, h]), fmt(dr["phi"][s, h])]
            for s in range(S)
            for h in range(H)
        ),
    )
    _write_rows(
        d / "draws_global.csv",
        ["draw", "tau", "alpha_conc"],
        ([s + 1, fmt(dr["tau"][s]), fmt(dr["alpha_conc"][s])] for s in range(S)),
    )
    _write_rows(
        d / "draws_sigma2.csv",
        ["draw", "series", "sigma2"],
        ([s + 1, names[i], fmt(dr["sigma2"][s, i])] for s in range(S) for i in range(N)),
    )
    A = result.posterior_mean_A
    _write_rows(
        d / "posterior_mean_A.csv",
        ["t", "lag", "target"] + list(names),
        (
            [P + 1 + i, j + 1, names[r]] + [fmt(v) for v in A[i, j, r]]
            for i in range(L)
            for j in range(P)
            for r in range(N)
        ),
    )
    B = result.posterior_mean_bases
    _write_rows(
        d / "posterior_mean_bases.csv",
        ["component", "lag", "target"] + list(names),
        ([h + 1, j + 1, names[r]] + [fmt(v) for v in B[h, j, r]] for h in range(H) for j in range(P) for r in range(N)),
    )
    _write_rows(
        d / "gamma_prob.csv",
        ["t"] + [f"component_{h + 1}" for h in range(H)],
        ([P + 1 + i] + [fmt(v) for v in result.gamma_prob[:, i]] for i in range(L)),
    )
    acc = result.diagnostics["ising_acceptance"]
    _write_rows(d / "diagnostics.csv", ["component", "ising_acceptance"], ([h + 1, fmt(a)] for h, a in enumerate(acc)))
    tau = np.atleast_2d(result.diagnostics["trace_tau"])
    conc = np.atleast_2d(result.diagnostics["trace_alpha_conc"])
    _write_rows(
        d / "traces.csv",
        ["chain", "iteration", "tau", "alpha_conc"],
        ([c + 1, it + 1, fmt(tau[c, it]), fmt(conc[c, it])] for c in range(tau.shape[0]) for it in range(tau.shape[1])),
    )
    write_manifest(
        d,
        "fit",
        seed,
        config_hash,
        wall_clock,
        N=N,
        P=P,
        H=H,
        T=T,
        n_draws=S,
        n_chains=int(tau.shape[0]),
    )


def _float_table(path: Path, n_keys: int, n_values: int) -> tuple[list[list[str]], np.ndarray]:
    _, rows = _read_rows(path)
    try:
        vals = np.array([[float(c) for c in r[n_keys:]] for r in rows]).reshape(len(rows), n_values)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return rows, vals


def load_fit_archive(directory: str | Path) -> FitArchive:
    d = Path(directory)
    man = read_manifest(d)
    if man.get("kind") != "fit":
        raise DataError(f"{d}: not a fit archive")
    N, P, H, T, S = (int(man[k]) for k in ("N", "P", "H", "T", "n_draws"))
    L = T - P
    header, _ = _read_rows(d / "posterior_mean_A.csv")
    names = tuple(header[3:])
    if len(names) != N:
        raise DataError(f"{d}: posterior_mean_A.csv has {len(names)} series columns, manifest says N={N}")

    _, rows = _read_rows(d / "draws_margins.csv")
    marg = {m: np.zeros((S, H, n)) for m, n in zip(_MARGINS, (N, N, P))}
    for r in rows:
        marg[r[2]][int(r[0]) - 1, int(r[1]) - 1, int(r[3]) - 1] = float(r[4])
    _, rows = _read_rows(d / "draws_paths.csv")
    gamma = np.array([[int(c) for c in r[2:]] for r in rows], dtype=np.int8).reshape(S, H, L)
    _, comp = _float_table(d / "draws_component.csv", 2, 3)
    comp = comp.reshape(S, H, 3)
    _, glob = _float_table(d / "draws_global.csv", 1, 2)
    _, sig = _float_table(d / "draws_sigma2.csv", 2, 1)
    draws = {
        **marg,
        "gamma": gamma,
        "theta": comp[:, :, 0].copy(),
        "kappa": comp[:, :, 1].copy(),
        "phi": comp[:, :, 2].copy(),
        "tau": glob[:, 0].copy(),
        "alpha_conc": glob[:, 1].copy(),
        "sigma2": sig.reshape(S, N),
    }
    _, A = _float_table(d / "posterior_mean_A.csv", 3, N)
    _, B = _float_table(d / "posterior_mean_bases.csv", 3, N)
    _, G = _float_table(d / "gamma_prob.csv", 1, H)
    _, acc = _float_table(d / "diagnostics.csv", 1, 1)
    _, tr = _float_table(d / "traces.csv", 2, 2)
    C = int(man["n_chains"])
    tau = tr[:, 0].reshape(C, -1)
    conc = tr[:, 1].reshape(C, -1)
    diagnostics = {
        "ising_acceptance": acc[:, 0],
        "trace_tau": tau[0] if C == 1 else tau,
        "trace_alpha_conc": conc[0] if C == 1 else conc,
    }
    result = FitResult(
        draws=draws,
        posterior_mean_A=A.reshape(L, P, N, N),
        posterior_mean_bases=B.reshape(H, P, N, N),
        gamma_prob=G.T.copy(),
        diagnostics=diagnostics,
        P=P,
        T=T,
    )
    return FitArchive(result, names, man)


def archive_digest(directory: str | Path) -> dict[str, str]:
    """SHA-256 of every archive file, with the wall-clock field blanked in the manifest."""
    import hashlib

    out = {}
    d = Path(directory)
    for name in sorted(os.listdir(d)):
        data = (d / name).read_bytes()
        if name == "manifest.json":
            doc = json.loads(data)
            doc.pop("wall_clock", None)
            data = json.dumps(doc, sort_keys=True).encode()
        out[name] = hashlib.sha256(data).hexdigest()
    return out


# ---------------------------------------------------------------------------
# window summaries


@dataclass(frozen=True)
class WindowSpec:
    """Inclusive 1-based time window [start, end]."""

    start: int
    end: int

    def validate(self, P: int, T: int) -> None:
        if self.end < self.start:
            raise ValueError(f"empty window {self.start}-{self.end}")
        if self.start < P + 1 or self.end > T:
            raise ValueError(f"window {self.start}-{self.end} outside the modelled range {P + 1}-{T}")

    @property
    def label(self) -> str:
        return f"{self.start}-{self.end}"

    @classmethod
    def parse(cls, text: str) -> "WindowSpec":
        try:
            a, b = text.split("-")
            return cls(int(a), int(b))
        except ValueError:
            raise ValueError(f"window {text!r} is not of the form START-END") from None


def window_mean(posterior_mean_A: np.ndarray, P: int, T: int, window: WindowSpec) -> np.ndarray:
    """Average of the per-t posterior mean coefficients over the window, shape (P, N, N)."""
    window.validate(P, T)
    return posterior_mean_A[window.start - P - 1 : window.end - P].mean(axis=0)


def save_window_summaries(directory: str | Path, archive: FitArchive, windows: list[WindowSpec]) -> None:
    """Per-window means and pairwise differences (later window minus earlier) as long CSVs."""
    if not windows:
        raise ValueError("at least one window is required")
    res = archive.result
    means = [window_mean(res.posterior_mean_A, res.P, res.T, w) for w in windows]
    names = archive.names
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    def long_rows(key, M):
        P, N, _ = M.shape
        for j in range(P):
            for r in range(N):
                for c in range(N):
                    yield key + [j + 1, names[r], names[c], fmt(M[j, r, c])]

    _write_rows(
        d / "window_means.csv",
        ["window", "lag", "target", "source", "value"],
        (row for w, M in zip(windows, means) for row in long_rows([w.label], M)),
    )
    pairs = [(a, b) for a in range(len(windows)) for b in range(a + 1, len(windows))]
    _write_rows(
        d / "window_differences.csv",
        ["window_from", "window_to", "lag", "target", "source", "value"],
        (
            row
            for a, b in pairs
            for row in long_rows([windows[a].label, windows[b].label], means[b] - means[a])
        ),
    )


# ---------------------------------------------------------------------------
# evaluation reports


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return fmt(v)


def save_metrics_csv(path: str | Path, rows: list[dict], keys: list[str] | None = None) -> None:
    keys = keys or list(rows[0])
    _write_rows(Path(path), keys, ([_cell(r.get(k)) for k in keys] for r in rows))


def format_report(report, title: str = "evaluation") -> str:
    g = report.gamma
    c = report.components

    def show(v):
        return "absent" if v is None else f"{v:.4f}"

    lines = [
        f"# {title}",
        "",
        "coefficient error",
        f"  err_A (unsquared Frobenius)   {report.err_A:.4f}",
        f"  err_A (root mean square)      {report.err_A_squared:.4f}",
        "",
        "components",
        f"  non-empty estimates           {report.n_nonempty}",
        f"  empty estimates               {list(h + 1 for h in report.empty_components)}",
        f"  matching (estimate -> truth)  {[m + 1 if m >= 0 else None for m in report.matching]}",
        f"  err_components                {c.overall:.4f}",
        f"  per true component            {[round(x, 4) for x in c.per_component]}",
        f"  mean abs error, nonzero cells {show(c.nonzero_entries)}",
        f"  mean abs error, zero cells    {show(c.zero_entries)}",
        "",
        "activation recovery",
        f"  accuracy     {show(g.accuracy)}",
        f"  sensitivity  {show(g.sensitivity)}",
        f"  specificity  {show(g.specificity)}",
        f"  precision    {show(g.precision)}",
        f"  confusion    TP={g.tp} TN={g.tn} FP={g.fp} FN={g.fn}",
    ]
    if report.extra_lag_norm is not None:
        lines += ["", f"mean Frobenius norm of the surplus lag  {report.extra_lag_norm:.5f}"]
    return "\n".join(lines) + "\n"
