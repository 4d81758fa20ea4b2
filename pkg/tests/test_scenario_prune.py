import json
import os

import numpy as np
import pandas as pd
import pytest

import plot_results
from errors import ConfigError, ParseError
from experiment_config import THREADS_ENV, load_config, parse_config, threads_from_env
from scenario_io import load_scenarios_csv
from scenario_prune import EXIT_INPUT, EXIT_OK, main

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
SAMPLE = os.path.join(CONFIGS, "sample_scenarios.csv")


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def run(experiment, config_path, *extra):
    return main([experiment, "--config", config_path, "--quiet", "--log-level", "WARNING", *extra])


def read_json(path):
    with open(path, mode="r", encoding="utf-8") as f:
        return json.load(f)


def test_reduce_identical_scenarios(tmp_path, write_config):
    data = write_csv(tmp_path / "same.csv", "x0,x1\n" + "1.5,-2\n" * 5)
    out = tmp_path / "out"
    path = write_config({"experiment": "reduce", "lambda_grid": [0.0], "input": data, "output_dir": str(out)})
    assert run("reduce", path) == EXIT_OK

    reduction = pd.read_csv(out / "reduction.csv")
    np.testing.assert_allclose(reduction["alpha"], 0.2, atol=1e-12)
    assert reduction["retained"].all()
    (summary,) = read_json(out / "reduction.json")
    assert summary["mmd"] == pytest.approx(0.0, abs=1e-12)
    assert summary["discarded"] == []


def test_reduce_huge_lambda_discards_everything(tmp_path, write_config):
    out = tmp_path / "out"
    path = write_config({"experiment": "reduce", "lambda_grid": [1e3], "input": SAMPLE,
                         "output_dir": str(out)})
    assert run("reduce", path) == EXIT_OK
    (summary,) = read_json(out / "reduction.json")
    assert summary["kappa"] == 40
    assert summary["retained"] == []
    assert len(pd.read_csv(out / "retained.csv")) == 0


def test_retained_scenarios_reduce_to_themselves(tmp_path, write_config):
    first = tmp_path / "first"
    path = write_config({"experiment": "reduce", "lambda_grid": [1e-2], "input": SAMPLE,
                         "output_dir": str(first)})
    assert run("reduce", path) == EXIT_OK
    retained = pd.read_csv(first / "retained.csv")
    assert list(retained.columns) == ["x0", "x1"]

    second = tmp_path / "second"
    path = write_config({"experiment": "reduce", "lambda_grid": [0.0], "input": str(first / "retained.csv"),
                         "output_dir": str(second)}, name="again.json")
    assert run("reduce", path) == EXIT_OK
    (summary,) = read_json(second / "reduction.json")
    assert summary["kappa"] == 0
    assert summary["mmd"] == pytest.approx(0.0, abs=1e-12)


def test_reduce_with_budget(tmp_path, write_config):
    out = tmp_path / "out"
    path = write_config({"experiment": "reduce", "epsilon": 0.05, "input": SAMPLE,
                         "output_dir": str(out)})
    assert run("reduce", path) == EXIT_OK
    (summary,) = read_json(out / "reduction.json")
    assert summary["mmd"] <= 0.05 + 1e-6
    assert summary["converged"]


def test_weight_column_is_used(tmp_path):
    data = write_csv(tmp_path / "w.csv", "x0,weight\n0.0,1.0\n1.0,2.0\n")
    scenarios, weights, columns = load_scenarios_csv(data)
    np.testing.assert_array_equal(scenarios, [[0.0], [1.0]])
    np.testing.assert_array_equal(weights, [1.0, 2.0])
    assert columns == ["x0"]


def test_ragged_csv_is_rejected(tmp_path, write_config):
    data = write_csv(tmp_path / "ragged.csv", "x0,x1\n1,2\n3\n")
    with pytest.raises(ParseError) as info:
        load_scenarios_csv(data)
    assert info.value.line == 3

    path = write_config({"experiment": "reduce", "input": data, "output_dir": str(tmp_path / "out")})
    assert run("reduce", path) == EXIT_INPUT


def test_headerless_csv(tmp_path):
    scenarios, weights, columns = load_scenarios_csv(write_csv(tmp_path / "raw.csv", "1,2\n3,4\n\n"))
    assert scenarios.shape == (2, 2)
    assert weights is None
    assert columns == ["x0", "x1"]


def test_negative_bandwidth_names_the_field(tmp_path, write_config):
    path = write_config({"experiment": "regress", "kernel": {"bandwidth": -1.0}, "output_dir": str(tmp_path)})
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "kernel.bandwidth"
    assert run("regress", path) == EXIT_INPUT


@pytest.mark.parametrize("data, field", [({"experiment": "regress", "N": 0}, "N"),
                                         ({"experiment": "regress", "lambda_grid": [0.1, 0.01]}, "lambda_grid"),
                                         ({"experiment": "regress", "colour": 1}, "colour"),
                                         ({"experiment": "ocp", "ocp": {"M": 2.5}}, "ocp.M"),
                                         ({"experiment": "reduce"}, "input")])
def test_config_errors(data, field):
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert info.value.field == field


def test_experiment_mismatch(write_config):
    path = write_config({"experiment": "ocp"})
    with pytest.raises(ConfigError):
        load_config(path, experiment="regress")
    assert run("regress", path) == EXIT_INPUT


def test_missing_experiment_is_taken_from_the_command(write_config, tmp_path):
    config = load_config(write_config({"N": 12}), experiment="regress", output_dir=str(tmp_path))
    assert config.experiment == "regress"
    assert config.N == 12
    assert config.output_dir == str(tmp_path)


def test_threads_from_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert threads_from_env() == 3
    monkeypatch.setenv(THREADS_ENV, "0")
    assert threads_from_env() >= 1
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        threads_from_env()


def small_regress(write_config, out, name="regress.json", grid=(0.0,)):
    return write_config({"experiment": "regress", "seed": 11, "N": 30, "n_mc": 100,
                         "lambda_grid": list(grid), "output_dir": str(out)}, name=name)


def test_regress_at_zero_lambda(tmp_path, write_config):
    out = tmp_path / "run"
    assert run("regress", small_regress(write_config, out)) == EXIT_OK
    for name in ("scenarios.csv", "sweep.csv", "baselines.csv", "report.json"):
        assert os.path.exists(out / name)

    sweep = pd.read_csv(out / "sweep.csv")
    assert len(sweep) == 1
    row = sweep.iloc[0]
    assert row["kappa"] == 0
    assert row["S_reduced"] == row["S_full"]
    assert row["status"] == "ok"

    report = read_json(out / "report.json")
    assert report["exit_status"] == EXIT_OK
    assert report["seeds"]["seed"] == 11
    assert report["stages"]["rows"][0]["kappa"] == 0
    assert set(report["versions"]) >= {"python", "numpy", "scipy", "pandas", "tqdm", "matplotlib"}


def test_report_config_reproduces_the_run(tmp_path, write_config):
    out = tmp_path / "run"
    run("regress", small_regress(write_config, out, grid=(1e-3, 1e-2)))
    recorded = read_json(out / "report.json")["config"]
    assert parse_config(recorded).to_dict() == recorded


def test_regress_is_byte_for_byte_deterministic(tmp_path, write_config):
    grid = (1e-3, 1e-2)
    run("regress", small_regress(write_config, tmp_path / "a", name="a.json", grid=grid))
    run("regress", small_regress(write_config, tmp_path / "b", name="b.json", grid=grid))
    for name in ("sweep.csv", "scenarios.csv", "baselines.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides_config(tmp_path, write_config):
    out = tmp_path / "run"
    run("regress", small_regress(write_config, out), "--seed", "5", "--out", str(tmp_path / "other"))
    assert read_json(tmp_path / "other" / "report.json")["config"]["seed"] == 5
    assert not os.path.exists(out)


def test_plots_for_a_regress_run(tmp_path, write_config):
    out = tmp_path / "run"
    run("regress", small_regress(write_config, out, grid=(0.0, 1e-3, 1e-2)))
    written = plot_results.plot_run(str(out))
    assert [os.path.basename(p) for p in written] == ["scenarios.png", "sweep.png"]
    assert all(os.path.getsize(p) > 0 for p in written)


def test_plot_missing_run_directory(tmp_path):
    assert plot_results.main([str(tmp_path / "nothing")]) == 3
    assert not os.path.exists(tmp_path / "nothing")


def test_plot_leaves_a_run_without_sweep_untouched(tmp_path):
    with pytest.raises(FileNotFoundError):
        plot_results.plot_run(str(tmp_path))
    assert os.listdir(tmp_path) == []


@pytest.mark.slow
def test_shipped_regress_config(tmp_path):
    out = tmp_path / "regress"
    assert run("regress", os.path.join(CONFIGS, "regress.json"), "--out", str(out)) == EXIT_OK
    sweep = pd.read_csv(out / "sweep.csv")
    assert sweep["reduce_converged"].all()
    assert (sweep["status"] == "ok").all()


@pytest.mark.slow
def test_ocp_run(tmp_path, write_config):
    out = tmp_path / "ocp"
    path = write_config({"experiment": "ocp", "N": 20, "n_mc": 20, "lambda_grid": [0.0],
                         "ocp": {"M": 10, "substeps": 5}, "output_dir": str(out)})
    assert run("ocp", path) == EXIT_OK

    sweep = pd.read_csv(out / "sweep.csv")
    assert sweep.iloc[0]["kappa"] == 0
    trajectories = pd.read_csv(out / "trajectories.csv")
    assert list(trajectories.columns) == ["set", "scenario", "node", "t", "x1", "x2", "retained"]
    assert set(trajectories["set"]) == {"train_full", "eval_full", "eval_reduced"}
    assert len(pd.read_csv(out / "controls.csv")) == 2 * 10

    written = plot_results.plot_run(str(out))
    assert [os.path.basename(p) for p in written] == ["sweep.png", "trajectories.png"]
