from __future__ import annotations

import json

import numpy as np
import pytest

from btvtvar import cli
from btvtvar.fileio import archive_digest, load_fit_archive, load_timeseries_csv, load_truth


def _config(tmp_path, **chain):
    body = {"n_iter": 50, "seed": 3, **chain}
    text = "[model]\nP = 1\nH = 1\n[chain]\n" + "".join(f"{k} = {v}\n" for k, v in body.items())
    text += "[simulation]\nN = 2\nT = 20\nP_true = 1\nH_true = 1\n"
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_simulate_fit_evaluate_summarize(tmp_path):
    cfg = _config(tmp_path)
    sim, fit, ev, summ = (str(tmp_path / d) for d in ("sim", "fit", "eval", "summ"))
    assert cli.main(["simulate", "--config", cfg, "--out", sim]) == 0
    series = load_timeseries_csv(tmp_path / "sim" / "data.csv")
    assert series.values.shape == (20, 2)
    truth = load_truth(sim)
    assert truth.gamma.shape == (1, 19)
    man = json.loads((tmp_path / "sim" / "manifest.json").read_text())
    assert man["seed"] == 3 and man["kind"] == "simulation"

    assert cli.main(["fit", "--config", cfg, "--data", f"{sim}/data.csv", "--out", fit]) == 0
    arc = load_fit_archive(fit)
    assert arc.result.posterior_mean_A.shape == (19, 1, 2, 2)
    assert arc.result.n_draws == len(range(50 // 3, 50, 3))

    assert cli.main(["evaluate", "--config", cfg, "--fit", fit, "--truth", sim, "--out", ev]) == 0
    header = (tmp_path / "eval" / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("err_A,err_A_squared,err_components")
    assert "activation recovery" in (tmp_path / "eval" / "report.txt").read_text()

    assert cli.main(["summarize", "--fit", fit, "--window", "2-5", "--window", "6-20", "--out", summ]) == 0
    assert (tmp_path / "summ" / "window_differences.csv").exists()


def test_fit_archives_identical_across_runs_and_threads(tmp_path):
    cfg = _config(tmp_path, n_chains=2)
    data = tmp_path / "d.csv"
    rng = np.random.default_rng(0)
    data.write_text("a,b\n" + "\n".join(f"{x:.6f},{y:.6f}" for x, y in rng.standard_normal((20, 2))) + "\n")
    outs = []
    for i, threads in enumerate(("1", "1", "2")):
        out = str(tmp_path / f"fit{i}")
        assert cli.main(["fit", "--config", cfg, "--data", str(data), "--out", out, "--threads", threads]) == 0
        outs.append(archive_digest(out))
    assert outs[0] == outs[1] == outs[2]


def test_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path)
    assert cli.main(["simulate", "--config", cfg, "--seed", "11", "--out", str(tmp_path / "s")]) == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seed"] == 11


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[chain]\nwhatever = 1\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "whatever" in capsys.readouterr().err
    assert cli.main(["fit", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_data_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "d.csv"
    bad.write_text("1,2\n3,4\n")
    assert cli.main(["fit", "--config", _config(tmp_path), "--data", str(bad), "--out", str(tmp_path)]) == cli.EXIT_DATA
    assert "line 1" in capsys.readouterr().err


def test_unwritable_output_is_reported(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = cli.main(["simulate", "--config", _config(tmp_path), "--out", str(blocker / "sub")])
    assert code == cli.EXIT_DATA


def test_dimension_mismatch_on_evaluate(tmp_path):
    cfg = _config(tmp_path)
    sim, fit = str(tmp_path / "sim"), str(tmp_path / "fit")
    assert cli.main(["simulate", "--config", cfg, "--out", sim]) == 0
    other = tmp_path / "d.csv"
    other.write_text("a,b,c\n" + "\n".join("0.1,0.2,0.3" if i % 2 else "0.3,-0.1,0.2" for i in range(20)) + "\n")
    assert cli.main(["fit", "--config", cfg, "--data", str(other), "--out", fit]) == 0
    assert cli.main(["evaluate", "--fit", fit, "--truth", sim, "--out", str(tmp_path / "e")]) == cli.EXIT_DATA


def test_bad_window_is_rejected(tmp_path):
    cfg = _config(tmp_path)
    sim, fit = str(tmp_path / "sim"), str(tmp_path / "fit")
    cli.main(["simulate", "--config", cfg, "--out", sim])
    cli.main(["fit", "--config", cfg, "--data", f"{sim}/data.csv", "--out", fit])
    assert cli.main(["summarize", "--fit", fit, "--window", "9-3", "--out", str(tmp_path / "w")]) == cli.EXIT_DATA


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise FloatingPointError("non-finite state at iteration 3 in block 'margins'")

    monkeypatch.setattr(cli, "fit", boom)
    data = tmp_path / "d.csv"
    data.write_text("a,b\n" + "\n".join("0.1,0.2" for _ in range(10)) + "\n")
    assert cli.main(["fit", "--config", _config(tmp_path), "--data", str(data), "--out", str(tmp_path)]) == cli.EXIT_NUMERIC
    assert "margins" in capsys.readouterr().err


def test_impossible_stationarity_is_config_error(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[simulation]\nN = 30\ninclusion_prob = 1\n")
    from btvtvar import simulation

    orig = simulation.draw_stationary_margins
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(simulation, "generate_study1_dataset", lambda d, rng: orig(30, 3, 3, 1.0, rng, max_rejections=2))
        mp.setattr(cli, "generate_study1_dataset", simulation.generate_study1_dataset)
        assert cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "s")]) == cli.EXIT_CONFIG


def test_show_config(capsys):
    assert cli.main(["show-config"]) == 0
    assert "[chain]" in capsys.readouterr().out


def test_replicate_study1_writes_summary(tmp_path):
    cfg = _config(tmp_path, n_iter=20)
    out = tmp_path / "rep"
    assert cli.main(["replicate-study1", "--config", cfg, "--replicates", "2", "--out", str(out)]) == 0
    rows = (out / "replicates.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("replicate,err_A")
    assert (out / "summary.txt").exists()
