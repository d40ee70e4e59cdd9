"""End-to-end checks of the command line: dispatch, artifact sets, compare."""

import json
import os

import numpy as np
import pytest

from setquant.cli import compare_runs, dispatch, main
from setquant.config import parse_config
from setquant.reporting import config_digest

SPE_CFG = (
    "algorithm = qnt-spe\n"
    "seed = 3\n"
    "system.name = toy-two-basins\n"
    "hyper.N = 5000\n"
    "options.prioritized = true\n"
    "options.replay = true\n"
)

ORACLE_CFG = (
    "algorithm = oracle\n"
    "seed = 0\n"
    "system.name = toy-threshold\n"
    "hyper.delta0 = 0.5\n"
    "options.horizon = 1\n"
)


def run_into(cfg_text, out_dir, **kw):
    code = dispatch(parse_config(cfg_text), output=str(out_dir), **kw)
    return code, {name: (out_dir / name).read_bytes()
                  for name in os.listdir(out_dir)}


def test_quantify_run_writes_the_full_artifact_set(tmp_path):
    code, files = run_into(SPE_CFG, tmp_path)
    assert code == 0
    assert set(files) == {"report.json", "config.txt", "cells.csv",
                          "slices.csv", "run_meta.json"}
    report = json.loads(files["report.json"])
    assert report["algorithm"] == "qnt-spe"
    assert report["converged"] is True
    assert report["config_digest"] == config_digest(files["config.txt"].decode())


def test_repeat_runs_are_byte_identical(tmp_path):
    _, first = run_into(SPE_CFG, tmp_path / "a")
    _, second = run_into(SPE_CFG, tmp_path / "b")
    for name in ("report.json", "cells.csv", "slices.csv", "config.txt"):
        assert first[name] == second[name], name
    # the sidecar carries timing and is allowed to differ
    meta = json.loads(first["run_meta.json"])
    assert meta["config_digest"] == json.loads(second["run_meta.json"])["config_digest"]
    assert meta["artifacts"] == sorted(meta["artifacts"])
    assert "run_meta.json" in meta["artifacts"]
    assert meta["wall_time"] >= 0.0


def test_oracle_run_emits_oracle_csv_instead_of_cells(tmp_path):
    code, files = run_into(ORACLE_CFG, tmp_path)
    assert code == 0
    assert "oracle.csv" in files and "slices.csv" in files
    assert "cells.csv" not in files
    # 9 of the 10 half-unit cells on [0, 10] survive the threshold map
    rows = files["oracle.csv"].decode().strip().splitlines()
    alive = sum(1 for r in rows[3:] if r.endswith(",1"))
    assert alive == 9


def test_exhaustive_validation_failure_sets_exit_code_one(tmp_path):
    cfg = ("algorithm = val-delta\nseed = 0\nsystem.name = toy-threshold\n"
           "hyper.delta0 = 0.5\n")
    code, files = run_into(cfg, tmp_path)
    assert code == 1
    report = json.loads(files["report.json"])
    assert report["result"] is False
    assert report["counterexample_start"] == [0.5]


def test_trajectory_log_is_opt_in_ndjson(tmp_path):
    cfg = ("algorithm = val-delta\nseed = 0\nsystem.name = toy-shrink\n"
           "options.emit_trajectories = true\n")
    code, files = run_into(cfg, tmp_path)
    assert code == 0
    lines = files["trajectories.ndjson"].decode().strip().splitlines()
    assert lines
    for line in lines:
        rec = json.loads(line)
        assert set(rec) == {"seed", "start", "states", "actions", "exit"}


def test_worker_pool_reports_match_the_sequential_reference(tmp_path):
    cfg = ("algorithm = val-eps-delta\nseed = 11\nsystem.name = toy-shrink\n"
           "hyper.epsilon = 0.1\nhyper.beta = 0.2\n")
    _, seq = run_into(cfg, tmp_path / "w1", workers=1)
    _, par = run_into(cfg, tmp_path / "w2", workers=2)
    assert seq["report.json"] == par["report.json"]
    assert json.loads(seq["report.json"])["result"] is True


def test_output_dir_resolution_order(tmp_path, monkeypatch):
    env_dir = tmp_path / "from-env"
    monkeypatch.setenv("SETQUANT_OUTPUT", str(env_dir))
    cfg = parse_config(ORACLE_CFG)
    dispatch(cfg)
    assert (env_dir / "report.json").exists()
    # an explicit --output beats the environment
    flag_dir = tmp_path / "from-flag"
    dispatch(cfg, output=str(flag_dir))
    assert (flag_dir / "report.json").exists()


class TestCompare:
    def test_identical_runs_agree_exactly(self, tmp_path):
        run_into(SPE_CFG, tmp_path / "a")
        run_into(SPE_CFG, tmp_path / "b")
        out = compare_runs(str(tmp_path / "a"), str(tmp_path / "b"))
        assert out["metrics"]["jaccard"] == 1.0
        assert out["metrics"]["sym_diff"] == 0.0
        assert out["volume_ordering"] == "a=b"
        assert [r["run"] for r in out["runs"]] == ["a", "b"]
        assert out["runs"][0]["system"] == "toy-two-basins"

    def test_digest_mismatch_is_refused_without_force(self, tmp_path):
        run_into(SPE_CFG, tmp_path / "a")
        run_into(SPE_CFG.replace("seed = 3", "seed = 4"), tmp_path / "b")
        with pytest.raises(ValueError, match="force"):
            compare_runs(str(tmp_path / "a"), str(tmp_path / "b"))
        out = compare_runs(str(tmp_path / "a"), str(tmp_path / "b"), force=True)
        assert set(out["metrics"]) >= {"jaccard", "a_volume", "b_volume"}

    def test_resolution_mismatch_is_refused(self, tmp_path):
        run_into(SPE_CFG, tmp_path / "a")
        run_into(ORACLE_CFG, tmp_path / "b")
        with pytest.raises(ValueError, match="resolution"):
            compare_runs(str(tmp_path / "a"), str(tmp_path / "b"), force=True)


def test_main_run_roundtrip(tmp_path, capsys):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(ORACLE_CFG)
    code = main(["run", str(cfg_path), "--output", str(tmp_path / "out")])
    assert code == 0
    assert "artifacts in" in capsys.readouterr().out


def test_main_rejects_bad_input(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("algorithm = qnt-spe\nseed = 1\nsystem.name = toy-flip\nwhat = 1\n")
    assert main(["run", str(bad)]) == 2
    assert "E-KEY" in capsys.readouterr().err
    cfg = tmp_path / "ok.cfg"
    cfg.write_text(ORACLE_CFG)
    assert main(["run", str(cfg), "--workers", "0"]) == 2


def test_main_compare_prints_and_saves_canonical_json(tmp_path, capsys):
    run_into(ORACLE_CFG, tmp_path / "a")
    run_into(ORACLE_CFG, tmp_path / "b")
    capsys.readouterr()  # drop the dispatch chatter from the setup runs
    saved = tmp_path / "cmp.json"
    code = main(["compare", str(tmp_path / "a"), str(tmp_path / "b"),
                 "--output", str(saved)])
    assert code == 0
    printed = capsys.readouterr().out
    assert printed == saved.read_text()
    payload = json.loads(printed)
    assert payload["volume_ordering"] == "a=b"
    assert np.isclose(payload["metrics"]["jaccard"], 1.0)
