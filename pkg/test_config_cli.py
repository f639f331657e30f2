#!/usr/bin/env python3
"""
Tests for run configuration loading and the command-line entry.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

import cli
from utils.config_utils import (
    ConfigError,
    build_run_config,
    load_run_config,
    nest_keys,
    parse_overrides,
)
from utils.io_utils import TRACE_COLUMNS, read_trace_table

CONFIG_DIR = Path(__file__).parent / "configs"


def write_config(path, **values):
    path.write_text("".join(f"{key}={value}\n" for key, value in values.items()))
    return path


def write_trace_csv(path, drag, lift, t):
    data = np.zeros((len(t), len(TRACE_COLUMNS)))
    data[:, 0], data[:, 1], data[:, 2] = t, drag, lift
    np.savetxt(path, data, delimiter=",", header=",".join(TRACE_COLUMNS), comments="", fmt="%.17g")
    return path


def shedding_columns(t, period=11.34):
    phase = 2.0 * math.pi * t / period
    return 3.2 + 0.05 * np.sin(2.0 * phase) + 0.01 * np.cos(phase), np.sin(phase + 0.3)


def test_nest_keys():
    nested = nest_keys({"reynolds": "120", "mesh.h_max": "8", "scheme.name": " SV "})
    assert nested == {"reynolds": "120", "mesh": {"h_max": "8"}, "scheme": {"name": "SV"}}
    with pytest.raises(ConfigError):
        nest_keys({"mesh": "8", "mesh.h_max": "8"})
    with pytest.raises(ConfigError):
        nest_keys({"mesh..h_max": "8"})
    with pytest.raises(ConfigError):
        nest_keys({"reynolds": None})


def test_build_run_config():
    config = build_run_config({"reynolds": "120", "scheme.name": "TH", "scheme.order": "2", "scheme.dt": "0.01"})
    assert config.nu == pytest.approx(2.0 / 120.0)
    assert config.run_name == "TH_2_re120_h8_dt0.01"
    sc = config.scheme_config()
    assert sc.scheme == "TH" and sc.order == 2 and sc.fluid.nu == pytest.approx(config.nu)

    named = build_run_config({"reynolds": "120", "output.name": "custom"})
    assert named.run_name == "custom"


@pytest.mark.parametrize(
    "values",
    [
        {"reynolds": "120", "mesh.hmax": "8"},
        {"reynolds": "120", "solver.tol": "1"},
        {"reynolds": "-1"},
        {"reynolds": "120", "t_end": "100"},
        {"reynolds": "120", "analysis.t_start": "300", "analysis.t_end": "290"},
        {"reynolds": "120", "scheme.name": "TH", "scheme.order": "1"},
        {"reynolds": "120", "scheme.name": "SV", "scheme.order": "2"},
        {"reynolds": "120", "scheme.name": "P1P1"},
    ],
)
def test_invalid_configs(values):
    with pytest.raises(ConfigError):
        build_run_config(values)


def test_hash_payload_ignores_run_length_and_output():
    base = {"reynolds": "120", "scheme.name": "MCS"}
    a = build_run_config(base)
    b = build_run_config({**base, "t_end": "600", "output.stride": "3", "analysis.t_start": "200"})
    c = build_run_config({**base, "scheme.dt": "0.004"})
    assert a.hash_payload() == b.hash_payload()
    assert a.hash_payload() != c.hash_payload()


def test_with_reynolds():
    config = build_run_config({"reynolds": "120", "output.name": "fixed"})
    member = config.with_reynolds(1150.0)
    assert member.reynolds == 1150.0
    assert member.nu == pytest.approx(2.0 / 1150.0)
    assert member.run_name.startswith("MCS_4_re1150")
    assert config.reynolds == 120.0


def test_parse_overrides():
    assert parse_overrides(["scheme.dt=0.01", "output.name=a=b"]) == {"scheme.dt": "0.01", "output.name": "a=b"}
    assert parse_overrides(None) == {}
    with pytest.raises(ConfigError):
        parse_overrides(["scheme.dt"])


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.env")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    config = load_run_config(path)
    assert config.analysis.t_end <= config.t_end


def test_load_run_config_overrides(tmp_path):
    path = write_config(tmp_path / "run.env", reynolds=120, **{"scheme.name": "gdTH"})
    config = load_run_config(path, {"scheme.dt": "0.02"})
    assert config.scheme.name == "gdTH"
    assert config.scheme.dt == 0.02
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.env")


def test_cli_usage_errors(tmp_path):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["run", "--config", str(tmp_path / "missing.env")]) == cli.EXIT_USAGE
    assert cli.main(["analyze", "--trace", str(tmp_path / "missing.csv")]) == cli.EXIT_USAGE


def test_cli_analyze(tmp_path):
    t = np.arange(0.0, 480.0 + 1e-9, 0.02)
    drag, lift = shedding_columns(t)
    trace = write_trace_csv(tmp_path / "trace.csv", drag, lift, t)
    assert cli.main(["analyze", "--trace", str(trace), "--window", "280", "480", "--initial-guess", "11.3"]) == 0
    result = json.loads((tmp_path / "period.json").read_text())
    assert result["mean_period"] == pytest.approx(11.34, abs=1e-3)
    assert result["classification"] == "periodic"
    assert len(result["samples"]) == result["n_samples"]
    assert (tmp_path / "phase.svg").exists()
    assert (tmp_path / "histogram.svg").exists()


def test_cli_analyze_noise(tmp_path):
    rng = np.random.default_rng(5)
    t = np.arange(0.0, 480.0 + 1e-9, 0.02)
    trace = write_trace_csv(tmp_path / "trace.csv", rng.normal(size=len(t)), rng.normal(size=len(t)), t)
    assert cli.main(["analyze", "--trace", str(trace)]) == cli.EXIT_NUMERICAL
    assert not (tmp_path / "period.json").exists()


def test_cli_sweep_empty_list(tmp_path):
    path = write_config(tmp_path / "sweep.env", reynolds=1100, **{"output.directory": tmp_path / "runs"})
    assert cli.main(["sweep", "--config", str(path)]) == 0


def test_cli_run_and_resume(tmp_path, cylinder_mesh_file):
    values = {
        "reynolds": 100,
        "t_end": 0.2,
        "mesh.h_max": 1,
        "scheme.name": "TH",
        "scheme.order": 2,
        "scheme.dt": 0.05,
        "analysis.t_start": 0.1,
        "analysis.t_end": 0.2,
        "analysis.initial_guess": 0.01,
        "output.directory": tmp_path / "runs",
        "output.stride": 1,
        "output.checkpoint_every": 2,
        "output.plots": "false",
    }
    path = write_config(tmp_path / "smoke.env", **values)
    run_dir = tmp_path / "runs" / "TH_2_re100_h1_dt0.05"
    mesh = str(cylinder_mesh_file)

    assert cli.main(["run", "--config", str(path), "--mesh", mesh]) == 0
    table = read_trace_table(run_dir / "trace.csv")
    assert len(table["t"]) == 5
    np.testing.assert_allclose(table["t"], [0.0, 0.05, 0.1, 0.15, 0.2])
    assert np.isnan(table["drag_vol"][0]) and np.all(np.isfinite(table["drag_vol"][1:]))
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["status"] == "ok"
    assert summary["steps"] == 4
    assert math.isfinite(summary["mean_drag"])
    assert summary["period"] is None

    assert cli.main(["run", "--config", str(path), "--mesh", mesh, "--resume", "--set", "t_end=0.3"]) == 0
    table = read_trace_table(run_dir / "trace.csv")
    assert len(table["t"]) == 7
    assert json.loads((run_dir / "summary.json").read_text())["steps"] == 6

    # same output directory, different trajectory
    args = ["run", "--config", str(path), "--mesh", mesh, "--resume",
            "--set", "output.name=TH_2_re100_h1_dt0.05", "--set", "scheme.dt=0.025"]
    assert cli.main(args) == cli.EXIT_USAGE


if __name__ == "__main__":
    pytest.main([__file__])
