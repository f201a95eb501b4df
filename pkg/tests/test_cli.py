import subprocess
import sys

import pytest

from eoppg.cli import EXIT_CONFIG, EXIT_FAILURES, EXIT_OK, main
from eoppg.experiments import read_rows


def parse_oracle(out):
    return {k: float(v) for k, v in (field.split("=") for field in out.split())}


def test_oracle_prints_optimal_value(capsys):
    assert main(["oracle"]) == EXIT_OK
    vals = parse_oracle(capsys.readouterr().out)
    assert vals["J"] == pytest.approx(-1.96, abs=1e-12) and vals["dJ"] == 0.0


def test_mse_from_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sizes: [40, 60]\nreplications: 2\nhorizon: 8\nestimators: [stepwise_is, eoppg]\n")
    out = tmp_path / "rows.csv"
    assert main(["mse", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == EXIT_OK
    rows = read_rows(out)
    assert len(rows) == 8 and {r["seed"] for r in rows} and all(r["error"] == "" for r in rows)


def test_robustness_to_stdout(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sizes: [40]\nreplications: 1\nhorizon: 5\ncorruptions: [none, all]\n")
    assert main(["robustness", "--config", str(cfg)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("experiment,estimator,corruption") and len(lines) == 3


def test_bad_config_exits_with_one(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sizes: [100, 50]\n")
    assert main(["mse", "--config", str(cfg)]) == EXIT_CONFIG


def test_failures_exit_with_two(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sizes: [40]\nreplications: 1\nhorizon: 5\nestimators: [eoppg]\n"
                   "nuisance:\n  ridge: 0.0\n")
    out = tmp_path / "rows.csv"
    assert main(["mse", "--config", str(cfg), "--out", str(out)]) == EXIT_FAILURES
    assert "RankDeficientError" in read_rows(out)[0]["error"]


def test_failures_within_tolerance_exit_with_zero(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sizes: [40]\nreplications: 1\nhorizon: 5\nestimators: [eoppg]\n"
                   "failure_tolerance: 1.0\nnuisance:\n  ridge: 0.0\n")
    assert main(["mse", "--config", str(cfg), "--out", str(tmp_path / "r.csv")]) == EXIT_OK


def test_ascend_writes_trace(tmp_path):
    out = tmp_path / "trace.csv"
    code = main(["ascend", "--n", "100", "--iterations", "4", "--estimator", "analytic",
                 "--out", str(out)])
    assert code == EXIT_OK
    rows = read_rows(out)
    assert [r["t"] for r in rows] == ["1", "2", "3", "4"] and rows[0]["theta"] == "0.2"


def test_unknown_subcommand_is_rejected():
    with pytest.raises(SystemExit):
        main(["plot"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "eoppg", "oracle", "--theta", "0.8", "--horizon", "1"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.split()[1] == "J=0.0"
