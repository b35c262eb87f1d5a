import pytest

from byzdp import harness
from byzdp.cli import main

from conftest import quad_config


def test_privacy_command(capsys):
    assert main(["privacy", "--tau", "1", "--eps", "1", "--delta", "1e-5", "--T", "100"]) == 0
    out = capsys.readouterr().out
    assert "sigma_omega=1097.29986" in out
    assert "composed_epsilon=" in out


def test_privacy_command_rejects_bad_budget(capsys):
    assert main(["privacy", "--tau", "1", "--eps", "5", "--delta", "1e-5", "--T", "100"]) == 1


def test_unknown_flag_is_usage_error(capsys):
    assert main(["privacy", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_run_command(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.ini"
    cfg_path.write_text(harness.serialize_config(quad_config(T=15)))
    out = tmp_path / "trace.csv"
    assert main(["run", "--config", str(cfg_path), "--output", str(out)]) == 0
    assert len(harness.read_trace(out).rows) == 15


def test_run_malformed_config(tmp_path):
    cfg_path = tmp_path / "cfg.ini"
    cfg_path.write_text("[run]\nG = many\n[hyperparams]\ngamma = 0.1\n")
    out = tmp_path / "trace.csv"
    assert main(["run", "--config", str(cfg_path), "--output", str(out)]) == 1
    assert not out.exists()
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 1


def test_run_numeric_abort_exit_code(tmp_path):
    from byzdp.algorithm import HyperParams
    import numpy as np
    cfg_path = tmp_path / "cfg.ini"
    cfg_path.write_text(harness.serialize_config(
        quad_config(algorithm="no_dp", T=200, hp=HyperParams.no_dp(1e6, beta=1.0))))
    with np.errstate(all="ignore"):
        assert main(["run", "--config", str(cfg_path), "--output", str(tmp_path / "t.csv")]) == 2
    assert not (tmp_path / "t.csv").exists()


def test_grid_and_summarize_commands(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BYZDP_THREADS", "1")
    cfg_path = tmp_path / "cfg.ini"
    cfg_path.write_text(harness.serialize_config(quad_config(T=10)))
    sweep = tmp_path / "sweep.ini"
    sweep.write_text("[sweep]\nhyperparams.gamma = 0.1, 0.01\n")
    assert main(["grid", "--config", str(cfg_path), "--sweep", str(sweep), "--out", str(tmp_path / "g")]) == 0
    assert "runs=2" in capsys.readouterr().out
    assert main(["summarize", "--glob", str(tmp_path / "g" / "run_*.csv"), "--group"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    # one config, several seeds
    seeds = tmp_path / "seeds.ini"
    seeds.write_text("[sweep]\nrun.seed = 1, 2, 3\n")
    assert main(["grid", "--config", str(cfg_path), "--sweep", str(seeds), "--out", str(tmp_path / "s")]) == 0
    assert main(["summarize", "--glob", str(tmp_path / "s" / "run_*.csv"), "--out", str(tmp_path / "t.csv")]) == 0
    assert "n_runs" in (tmp_path / "t.csv").read_text()
    assert main(["summarize", "--glob", str(tmp_path / "g" / "run_*.csv")]) == 1
    assert main(["summarize", "--glob", str(tmp_path / "nothing*.csv")]) == 1


@pytest.mark.parametrize("agg, verdict", [("mean", "NOT-ROBUST"), ("coordinate_median", "ROBUST"),
                                          ("trimmed_mean", "ROBUST")])
def test_certify_command(agg, verdict, capsys):
    assert main(["certify-agg", "--agg", agg, "--n", "6", "--byz", "1", "--trials", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1] == verdict
    assert len(lines) == 4


def test_certify_command_bad_counts():
    assert main(["certify-agg", "--agg", "mean", "--n", "4", "--byz", "2"]) == 1
