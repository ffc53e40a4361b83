"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, default_config_text, load_config
from .evaluation import evaluate_fit
from .fileio import (
    DataError,
    WindowSpec,
    format_report,
    load_fit_archive,
    load_timeseries_csv,
    load_truth,
    save_fit_archive,
    save_metrics_csv,
    save_timeseries_csv,
    save_truth,
    save_window_summaries,
    write_manifest,
)
from .gibbs import fit, summarize_gamma
from .replicate import replicate_study1, replicate_study2, summarize_reports
from .simulation import StationarityError, generate_study1_dataset, generate_study2_dataset

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _resolve(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override("chain", "seed", args.seed)
    if getattr(args, "chains", None) is not None:
        cfg = cfg.override("chain", "n_chains", args.chains)
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.get("paths", "out")
    if not out:
        raise ConfigError("an output directory is required (--out or [paths] out)")
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _eval_opts(cfg: RunConfig) -> dict:
    method = cfg.get("evaluate", "matching")
    if method not in ("greedy", "optimal"):
        raise ConfigError("[evaluate] matching must be greedy or optimal")
    return {
        "gamma_threshold": cfg._num("evaluate", "gamma_threshold"),
        "empty_threshold": cfg._num("evaluate", "empty_threshold"),
        "matching": method,
    }


def cmd_simulate(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    seed = int(cfg.get("chain", "seed"))
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    if cfg.study() == 1:
        series, truth = generate_study1_dataset(cfg.sim_design(), rng)
    else:
        sim = cfg.sim_design()
        series, truth = generate_study2_dataset(
            rng,
            N=cfg._num("simulation", "study2_N", int),
            T=cfg._num("simulation", "study2_T", int),
            P=sim.P_true,
            layout=cfg.study2_layout(),
            inclusion_prob=sim.inclusion_prob,
        )
    save_timeseries_csv(out / "data.csv", series)
    save_truth(out, truth, series.names)
    write_manifest(
        out, "simulation", seed, cfg.digest(), time.perf_counter() - t0, study=cfg.study(), N=series.N, T=series.T, P=truth.P, H=truth.H
    )


def cmd_fit(args, cfg: RunConfig) -> None:
    data_path = args.data or cfg.get("paths", "data")
    if not data_path:
        raise ConfigError("a data file is required (--data or [paths] data)")
    P = int(cfg.get("model", "P"))
    series = load_timeseries_csv(data_path, P)
    hp = cfg.hyperparams(series.N)
    chain = cfg.chain()
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    res = fit(series, hp, chain, threads=args.threads)
    save_fit_archive(out, res, series.names, chain.seed, cfg.digest(), time.perf_counter() - t0)


def _evaluate(archive_dir: str, truth_dir: str, opts: dict):
    arc = load_fit_archive(archive_dir)
    truth = load_truth(truth_dir)
    res = arc.result
    N = res.posterior_mean_A.shape[-1]
    if truth.alpha1.shape[1] != N:
        raise DataError(f"fit has N={N} series but the truth has N={truth.alpha1.shape[1]}")
    if res.T - res.P != res.gamma_prob.shape[1] or truth.gamma.shape[1] + truth.P != res.T:
        raise DataError(f"fit covers T={res.T} time points but the truth covers T={truth.gamma.shape[1] + truth.P}")
    return evaluate_fit(
        res.posterior_mean_A,
        res.posterior_mean_bases,
        summarize_gamma(res, opts["gamma_threshold"]),
        res.P,
        truth,
        opts["empty_threshold"],
        opts["matching"],
    )


def cmd_evaluate(args, cfg: RunConfig) -> None:
    fit_dir = args.fit or cfg.get("paths", "fit")
    truth_dir = args.truth or cfg.get("paths", "truth")
    if not fit_dir or not truth_dir:
        raise ConfigError("evaluate needs --fit and --truth (or [paths] fit / truth)")
    report = _evaluate(fit_dir, truth_dir, _eval_opts(cfg))
    out = _out_dir(args, cfg)
    save_metrics_csv(out / "metrics.csv", [report.as_row()])
    (out / "report.txt").write_text(format_report(report))


def cmd_summarize(args, cfg: RunConfig) -> None:
    fit_dir = args.fit or cfg.get("paths", "fit")
    if not fit_dir:
        raise ConfigError("summarize needs --fit (or [paths] fit)")
    if not args.window:
        raise ConfigError("summarize needs at least one --window START-END")
    windows = [WindowSpec.parse(w) for w in args.window]
    arc = load_fit_archive(fit_dir)
    for w in windows:
        w.validate(arc.result.P, arc.result.T)
    save_window_summaries(_out_dir(args, cfg), arc, windows)


def _write_summary(out: Path, reports, title: str) -> None:
    summary = summarize_reports(reports)
    save_metrics_csv(
        out / "summary.csv",
        [{"metric": k, **v} for k, v in summary.items()],
        ["metric", "mean", "sd", "n"],
    )
    lines = [f"# {title}", "", f"{'metric':<22}{'mean':>10}{'sd':>10}{'n':>5}"]
    for k, v in summary.items():
        m = "absent" if v["mean"] is None else f"{v['mean']:.4f}"
        s = "absent" if v["sd"] is None else f"{v['sd']:.4f}"
        lines.append(f"{k:<22}{m:>10}{s:>10}{v['n']:>5}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def cmd_replicate_study1(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    design = cfg.sim_design()
    hp = cfg.hyperparams(design.N)
    chain = cfg.chain()
    n = args.replicates if args.replicates is not None else int(cfg.get("simulation", "replicates"))
    outcomes = replicate_study1(design, hp, chain, n, chain.seed, threads=args.threads, **_eval_opts(cfg))
    rows = [{"replicate": o.index + 1, **o.report.as_row()} for o in outcomes]
    save_metrics_csv(out / "replicates.csv", rows)
    _write_summary(out, [o.report for o in outcomes], f"study 1, {n} replicates")


def cmd_replicate_study2(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    sim = cfg.sim_design()
    N = cfg._num("simulation", "study2_N", int)
    T = cfg._num("simulation", "study2_T", int)
    hp = cfg.hyperparams(N)
    chain = cfg.chain()
    t0 = time.perf_counter()
    o = replicate_study2(
        hp,
        chain,
        chain.seed,
        N=N,
        T=T,
        P_true=sim.P_true,
        layout=cfg.study2_layout(),
        inclusion_prob=sim.inclusion_prob,
        **_eval_opts(cfg),
    )
    save_timeseries_csv(out / "data.csv", o.series)
    save_truth(out, o.truth, o.series.names)
    save_fit_archive(out / "fit", o.result, o.series.names, chain.seed, cfg.digest(), time.perf_counter() - t0)
    save_metrics_csv(out / "metrics.csv", [o.report.as_row()])
    (out / "report.txt").write_text(format_report(o.report, "study 2"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btvtvar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, chains=False, threads=False):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="master seed (overrides [chain] seed)")
        if chains:
            p.add_argument("--chains", type=int, help="number of chains (overrides [chain] n_chains)")
        if threads:
            p.add_argument("--threads", type=int, default=1, help="worker threads")
        return p

    common(sub.add_parser("simulate", help="generate a synthetic dataset and its truth"))
    p = common(sub.add_parser("fit", help="run the sampler and write a fit archive"), chains=True, threads=True)
    p.add_argument("--data", help="CSV time series (overrides [paths] data)")
    p = common(sub.add_parser("evaluate", help="score a fit archive against a simulation truth"), seed=False)
    p.add_argument("--fit", help="fit archive directory")
    p.add_argument("--truth", help="directory holding truth_*.csv")
    p = common(sub.add_parser("summarize", help="window-averaged coefficient matrices"), seed=False)
    p.add_argument("--fit", help="fit archive directory")
    p.add_argument("--window", action="append", help="inclusive 1-based window START-END (repeatable)")
    p = common(sub.add_parser("replicate-study1", help="simulate, fit and score many study-1 datasets"), chains=True, threads=True)
    p.add_argument("--replicates", type=int, help="number of datasets (overrides [simulation] replicates)")
    common(sub.add_parser("replicate-study2", help="simulate, fit and score one study-2 dataset"), chains=True)
    sub.add_parser("show-config", help="print every configuration key with its default")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "summarize": cmd_summarize,
    "replicate-study1": cmd_replicate_study1,
    "replicate-study2": cmd_replicate_study2,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "show-config":
        sys.stdout.write(default_config_text())
        return 0
    try:
        cfg = _resolve(load_config(args.config), args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, StationarityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
