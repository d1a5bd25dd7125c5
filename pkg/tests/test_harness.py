"""Scenario harness: config validation, runner, reports and the CLI."""

import copy
import json
import math
from pathlib import Path

import numpy as np
import pytest

from mloracle.errors import ConfigInvalid
from mloracle.harness.cli import main
from mloracle.harness.config import config_hash, load_config, validate_config, with_seed
from mloracle.harness.report import emit_results, read_results, report_csv, report_json
from mloracle.harness.runner import aggregate_reports, build_plant, run_monte_carlo, run_scenario
from mloracle.plant import simulate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def open_loop():
    return load_config(CONFIGS / "cstr_open_loop.yaml")


@pytest.fixture
def linear_noisy():
    return {
        "seed": 4,
        "steps": 15,
        "plant": {"benchmark": "linear", "a": [[0.9]], "b": [[0.1]], "initial_state": [1.0],
                  "state_bounds": {"lower": [-10.0], "upper": [0.95]}},
        "controller": {"open_loop": {"inputs": [[0.5]]}},
        "noise": {"process_std": [0.05], "measurement_std": [0.01]},
    }


# ---------------------------------------------------------------------------
# config


def test_all_shipped_configs_validate():
    paths = sorted(CONFIGS.glob("*.yaml"))
    assert len(paths) >= 7
    for p in paths:
        load_config(p)


def test_unknown_key_reports_path(open_loop):
    bad = copy.deepcopy(open_loop)
    bad["plant"]["colour"] = "red"
    with pytest.raises(ConfigInvalid) as info:
        validate_config(bad)
    assert info.value.path.startswith("$.plant")


def test_two_controllers_rejected(open_loop):
    bad = copy.deepcopy(open_loop)
    bad["controller"]["mpc"] = {"horizon": 2, "q": 1.0, "s": 1.0, "setpoint": {"x": [0, 0], "u": [0]}}
    with pytest.raises(ConfigInvalid) as info:
        validate_config(bad)
    assert info.value.path.startswith("$.controller")


def test_missing_seed_rejected(open_loop):
    bad = copy.deepcopy(open_loop)
    del bad["seed"]
    with pytest.raises(ConfigInvalid):
        validate_config(bad)


def test_wrong_type_reports_nested_path(open_loop):
    bad = copy.deepcopy(open_loop)
    bad["steps"] = "many"
    with pytest.raises(ConfigInvalid) as info:
        validate_config(bad)
    assert info.value.path == "$.steps"


def test_linear_plant_needs_matrices():
    cfg = {"seed": 0, "steps": 1, "plant": {"benchmark": "linear"},
           "controller": {"open_loop": {"inputs": [[0.0]]}}}
    with pytest.raises(ConfigInvalid):
        validate_config(cfg)


def test_config_hash_is_key_order_independent(open_loop):
    shuffled = dict(reversed(list(open_loop.items())))
    assert config_hash(shuffled) == config_hash(open_loop)
    assert config_hash(with_seed(open_loop, 1)) != config_hash(open_loop)


def test_with_seed_does_not_mutate(open_loop):
    before = copy.deepcopy(open_loop)
    with_seed(open_loop, 99)
    assert open_loop == before


# ---------------------------------------------------------------------------
# runner


def test_open_loop_matches_simulate_exactly(open_loop):
    report = run_scenario(open_loop)
    model, x0 = build_plant(open_loop["plant"])
    u = np.tile([300.0], (open_loop["steps"], 1))
    traj = simulate(model, x0, u)
    np.testing.assert_array_equal(report.states, traj.states)
    np.testing.assert_array_equal(report.outputs, traj.outputs)
    np.testing.assert_array_equal(report.inputs[:-1], u)
    assert np.isnan(report.inputs[-1]).all()


def test_same_seed_gives_identical_bytes(linear_noisy):
    a = run_scenario(linear_noisy)
    b = run_scenario(copy.deepcopy(linear_noisy))
    assert report_csv(a) == report_csv(b)
    assert report_json(a) == report_json(b)


def test_different_seed_changes_noisy_run(linear_noisy):
    a = run_scenario(linear_noisy)
    b = run_scenario(with_seed(linear_noisy, 5))
    assert not np.array_equal(a.states, b.states)


def test_column_count(open_loop):
    report = run_scenario(open_loop)
    n_x, n_z = report.states.shape[1], report.algebraic.shape[1]
    n_u, n_y, n_est = report.inputs.shape[1], report.outputs.shape[1], report.estimates.shape[1]
    expected = 1 + n_x + n_z + n_u + n_y + n_y + n_est + 2
    assert len(report.columns()) == expected
    assert report.table().shape == (open_loop["steps"] + 1, expected)


def test_zero_steps_gives_single_row_and_summary(open_loop):
    cfg = dict(open_loop, steps=0)
    report = run_scenario(cfg)
    assert len(report) == 1
    assert report.summary["steps"] == 0
    assert report.summary["violation_rate"] == 0.0


def test_empty_report_writes_header_only_csv(open_loop):
    report = run_scenario(open_loop)
    empty = copy.copy(report)
    for name in ("times", "cost", "violation"):
        setattr(empty, name, getattr(report, name)[:0])
    for name in ("states", "algebraic", "inputs", "outputs", "setpoints", "estimates"):
        setattr(empty, name, getattr(report, name)[:0])
    text = report_csv(empty)
    assert text == ",".join(report.columns()) + "\n"


def test_violation_counted_against_state_box(linear_noisy):
    cfg = copy.deepcopy(linear_noisy)
    cfg["noise"] = {}
    report = run_scenario(cfg)
    # x starts at 1 > 0.95 and decays toward 0.5, so only the first rows violate
    expected = int(np.sum(report.states[1:, 0] > 0.95))
    assert report.summary["violation_count"] == expected
    assert report.violation[0] == pytest.approx(0.05)


def test_provenance(open_loop):
    report = run_scenario(open_loop)
    prov = report.provenance
    assert prov["config_hash"] == config_hash(open_loop)
    assert prov["seed"] == open_loop["seed"]
    assert {"version", "benchmark_reference_version"} <= set(prov)


# ---------------------------------------------------------------------------
# reports


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_round_trip(open_loop, tmp_path, fmt):
    report = run_scenario(open_loop)
    path = tmp_path / f"r.{fmt}"
    emit_results(report, fmt, path)
    cols, table = read_results(path)
    assert cols == report.columns()
    np.testing.assert_array_equal(np.isnan(table), np.isnan(report.table()))
    np.testing.assert_array_equal(np.nan_to_num(table), np.nan_to_num(report.table()))


def test_json_has_no_nan_tokens(open_loop):
    text = report_json(run_scenario(open_loop))
    assert "NaN" not in text
    json.loads(text)


def test_config_hash_recomputable_from_json(open_loop):
    doc = json.loads(report_json(run_scenario(open_loop)))
    assert config_hash(doc["config"]) == doc["provenance"]["config_hash"]


def test_unknown_format_rejected(open_loop, tmp_path):
    with pytest.raises(ValueError):
        emit_results(run_scenario(open_loop), "xml", tmp_path / "r.xml")


# ---------------------------------------------------------------------------
# Monte Carlo


def test_single_replicate_aggregate_equals_report(linear_noisy):
    result = run_monte_carlo(linear_noisy, 1)
    single = run_scenario(linear_noisy)
    agg = result.aggregate
    assert agg["replicates"] == agg["succeeded"] == 1
    assert agg["violation_rate"] == single.summary["violation_rate"]
    assert agg["violation_count"] == single.summary["violation_count"]
    assert report_csv(result.reports[0]) == report_csv(single)


def test_zero_noise_replicates_identical(open_loop):
    result = run_monte_carlo(dict(open_loop, steps=10), 3)
    tables = [r.table() for r in result.reports]
    for t in tables[1:]:
        np.testing.assert_array_equal(t, tables[0])


def test_replicate_seeds_are_consecutive(linear_noisy):
    result = run_monte_carlo(linear_noisy, 3)
    assert [r.provenance["seed"] for r in result.reports] == [4, 5, 6]


def test_aggregate_recomputes(linear_noisy):
    result = run_monte_carlo(linear_noisy, 4)
    assert aggregate_reports(result.reports) == result.aggregate
    steps = sum(r.summary["steps"] for r in result.reports)
    count = sum(r.summary["violation_count"] for r in result.reports)
    assert result.aggregate["violation_rate"] == count / steps
    rmse = [r.summary["tracking_rmse"] for r in result.reports]
    assert all(math.isnan(v) for v in rmse)
    assert math.isnan(result.aggregate["mean_tracking_rmse"])


def test_failed_replicate_is_recorded(open_loop):
    cfg = copy.deepcopy(open_loop)
    cfg["steps"] = 3
    cfg["plant"]["initial_state"] = [0.1]  # wrong length: every replicate fails at setup
    result = run_monte_carlo(cfg, 2)
    assert result.reports == [None, None]
    assert [i for i, _ in result.failures] == [0, 1]
    assert result.aggregate["succeeded"] == 0


def test_replicates_must_be_positive(open_loop):
    with pytest.raises(ValueError):
        run_monte_carlo(open_loop, 0)


# ---------------------------------------------------------------------------
# CLI


def test_cli_validate_ok(capsys):
    assert main(["validate", str(CONFIGS / "cstr_open_loop.yaml")]) == 0
    assert "ok" in capsys.readouterr().out


def test_cli_config_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 0\nsteps: 1\nplant: {benchmark: moon}\ncontroller: {open_loop: {inputs: [[0]]}}\n")
    assert main(["validate", str(bad)]) == 1
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1


def test_cli_runtime_failure(tmp_path):
    cfg = tmp_path / "fail.yaml"
    cfg.write_text("seed: 0\nsteps: 2\nplant: {benchmark: cstr, initial_state: [1.0]}\n"
                   "controller: {open_loop: {inputs: [[300.0]]}}\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--no-figures"]) == 2


def test_cli_run_writes_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(CONFIGS / "cstr_open_loop.yaml"), "--out", str(out)]) == 0
    assert (out / "report.csv").exists()
    assert (out / "summary.json").exists()
    png = out / "report_trajectory.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_cli_run_is_byte_deterministic(tmp_path):
    cfg = str(CONFIGS / "cstr_open_loop.yaml")
    for d in ("a", "b"):
        assert main(["run", cfg, "--out", str(tmp_path / d), "--format", "json"]) == 0
    for name in ("report.json", "summary.json", "report_trajectory.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_seed_override(tmp_path):
    out = tmp_path / "s"
    assert main(["run", str(CONFIGS / "cstr_open_loop.yaml"), "--seed", "17", "--out", str(out),
                 "--format", "json", "--no-figures"]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["provenance"]["seed"] == 17
    assert not (out / "report_trajectory.png").exists()


def test_cli_mc(tmp_path, linear_noisy):
    import yaml

    cfg = tmp_path / "mc.yaml"
    cfg.write_text(yaml.safe_dump(linear_noisy))
    out = tmp_path / "mc"
    assert main(["mc", str(cfg), "--replicates", "3", "--out", str(out)]) == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["aggregate"]["replicates"] == 3
    assert (out / "replicate_0002.csv").exists()
    assert (out / "mc_summary.png").exists()
