import json

import numpy as np
import pytest

from eoppg.env import analytic_gradient
from eoppg.experiments import (ConfigError, ExperimentConfig, ResultRow, data_seed,
                               failure_fraction, load_config, log_log_slope, preset_config,
                               read_rows, rows_to_csv, run, run_mse, run_regret, run_robustness,
                               summarize)
from eoppg.nuisance import NuisanceConfig
from eoppg.optimizer import AscentConfig

SMALL = dict(sizes=(40, 80), replications=3, horizon=10,
             estimators=("reinforce", "stepwise_is", "pg", "eoppg"))


@pytest.fixture(scope="module")
def mse_rows():
    return run_mse(ExperimentConfig(**SMALL))


def test_row_count_and_order(mse_rows):
    assert len(mse_rows) == 2 * 3 * 4
    keys = [(r.estimator, r.n, r.replication) for r in mse_rows]
    assert keys[:3] == [("reinforce", 40, 0), ("reinforce", 40, 1), ("reinforce", 40, 2)]
    assert not any(r.error for r in mse_rows)


def test_squared_error_recomputes_from_csv(mse_rows, tmp_path):
    path = tmp_path / "rows.csv"
    path.write_text(rows_to_csv(mse_rows))
    truth = analytic_gradient(1.0, ExperimentConfig(**SMALL).bench)
    for rec in read_rows(path):
        assert float(rec["squared_error"]) == pytest.approx((float(rec["estimate_0"]) - truth) ** 2,
                                                            rel=1e-12, abs=1e-300)
        assert rec["runtime_ms"] == "" and rec["regret"] == ""


def test_estimators_of_a_replication_share_the_dataset(mse_rows):
    seeds = {(r.n, r.replication): set() for r in mse_rows}
    for r in mse_rows:
        seeds[(r.n, r.replication)].add(r.seed)
    assert all(len(s) == 1 for s in seeds.values())
    assert mse_rows[0].seed == data_seed(0, 40, 0)


def test_rerun_is_byte_identical(mse_rows):
    again = run_mse(ExperimentConfig(**SMALL))
    assert rows_to_csv(again) == rows_to_csv(mse_rows)


def test_worker_count_does_not_change_results(mse_rows):
    par = run_mse(ExperimentConfig(**SMALL, workers=2))
    assert rows_to_csv(par) == rows_to_csv(mse_rows)


def test_master_seed_changes_results(mse_rows):
    other = run_mse(ExperimentConfig(**{**SMALL, "seed": 1}))
    assert rows_to_csv(other) != rows_to_csv(mse_rows)


def test_robustness_none_matches_mse_eoppg(mse_rows):
    rob = run_robustness(ExperimentConfig(**{**SMALL, "corruptions": ("none", "q_dq", "all")}))
    assert len(rob) == 2 * 3 * 3
    none = {(r.n, r.replication): r.estimate for r in rob if r.corruption == "none"}
    for r in mse_rows:
        if r.estimator == "eoppg":
            assert np.array_equal(none[(r.n, r.replication)], r.estimate)
    allc = [r for r in rob if r.corruption == "all"]
    assert all(r.squared_error > 0 for r in allc)


def test_failures_are_recorded_per_row():
    cfg = ExperimentConfig(**{**SMALL, "nuisance": NuisanceConfig(ridge=0.0)})
    rows = run(cfg)
    bad = [r for r in rows if r.error]
    assert bad and all(r.estimator in ("pg", "eoppg") for r in bad)
    assert all("RankDeficientError" in r.error and r.estimate is None for r in bad)
    assert failure_fraction(rows) == pytest.approx(len(bad) / len(rows))
    assert "RankDeficientError" in rows_to_csv(rows)


def test_tiny_regret_run():
    rows = run_regret(ExperimentConfig(kind="regret", sizes=(40,), replications=2, horizon=10,
                                       estimators=("eoppg", "analytic"),
                                       ascent=AscentConfig(iterations=5)))
    assert len(rows) == 4
    assert all(r.regret is not None and r.regret >= 0 for r in rows)
    assert all(r.estimate is None and r.squared_error is None for r in rows)
    analytic = [r for r in rows if r.estimator == "analytic"]
    assert analytic[0].regret == analytic[1].regret


def test_summarize_and_slope(mse_rows):
    truth = analytic_gradient(1.0, ExperimentConfig(**SMALL).bench)
    table = summarize(mse_rows, truth)
    assert len(table) == 4 * 2
    entry = next(e for e in table if e["estimator"] == "stepwise_is" and e["n"] == 40)
    sq = [r.squared_error for r in mse_rows if r.estimator == "stepwise_is" and r.n == 40]
    assert entry["mse"] == pytest.approx(np.mean(sq)) and entry["count"] == 3
    assert len(entry["bias"]) == 1 and entry["bias_se"][0] > 0
    assert log_log_slope([1, 10, 100], [1.0, 0.1, 0.01]) == pytest.approx(-1.0)


def test_summarize_regret_median():
    rows = [ResultRow("regret", "eoppg", "none", 10, r, 0, 1.0, regret=v) for r, v in enumerate([3, 1, 2])]
    assert summarize(rows)[0]["median_regret"] == 2.0


# ---------------------------------------------------------------- configs


@pytest.mark.parametrize("kwargs", [
    {"kind": "table"},
    {"sizes": (100, 50)},
    {"sizes": ()},
    {"replications": 0},
    {"estimators": ("newton",)},
    {"kind": "robustness", "corruptions": ("half",)},
    {"sizes": (3,), "estimators": ("eoppg",)},
    {"seed": -1},
    {"failure_tolerance": 2.0},
])
def test_bad_configs_are_rejected(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs)


def test_small_n_is_fine_without_cross_fitting():
    ExperimentConfig(sizes=(3,), estimators=("stepwise_is",))


def test_yaml_and_json_configs(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("kind: robustness\nsizes: [100, 200]\nreplications: 2\nnuisance:\n  ridge: 1.0e-4\n")
    cfg = load_config(y)
    assert cfg.kind == "robustness" and cfg.sizes == (100, 200) and cfg.nuisance.ridge == 1e-4
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"sizes": [50], "replications": 1, "estimators": ["pg"]}))
    assert load_config(j).estimators == ("pg",)
    assert load_config(j, preset="ci", seed=5).seed == 5


def test_config_loading_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("sizes: [10\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    unknown = tmp_path / "unknown.yaml"
    unknown.write_text("colour: red\n")
    with pytest.raises(ConfigError, match="colour"):
        load_config(unknown)
    nested = tmp_path / "nested.yaml"
    nested.write_text("nuisance:\n  dq_route: fast\n")
    with pytest.raises(ConfigError):
        load_config(nested)


def test_presets():
    ci = preset_config("ci", "mse")
    assert ci.sizes == (200, 400, 800)
    full = preset_config("full", "regret")
    assert full.horizon == 50 and full.ascent.theta1 == 0.8
    assert preset_config("ci", "mse", replications=2).replications == 2
    with pytest.raises(ConfigError):
        preset_config("huge", "mse")
