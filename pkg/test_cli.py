"""
Tests for the command-line front end.
"""
import json

import pandas as pd
import pytest

from poisson_coalgebra.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main

CURVED_SW = {"system": "sl2.curved_sw", "n": 3, "params": {"kappa": 0.2, "b": [0.1, 0.2, 0.3]}}


def _write_config(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def test_list_shows_sorted_catalog(capsys):
    """Test the listing is sorted and carries claimed classes and references."""
    assert main(["list"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    ids = [line.split()[0] for line in lines]
    assert ids == sorted(ids)
    assert "sl2.evans" in ids
    assert "extra.rs_like" in ids
    [evans] = [line for line in lines if line.startswith("sl2.evans ")]
    assert "Eq. (anha)" in evans
    [geodesic] = [line for line in lines if line.startswith("h6.geodesic")]
    assert "quasi-integrable" in geodesic


def test_verify_passes_and_writes_report(tmp_path, capsys):
    """Test a passing audit exits 0 and records the verified class."""
    out = tmp_path / "out"
    assert main(["verify", "--config", _write_config(tmp_path, CURVED_SW), "--out", str(out)]) == EXIT_OK
    payload = json.loads((out / "report.json").read_text())
    assert payload["report"]["verified_class"] == "QMS"
    assert payload["report"]["passed"]
    assert "verified QMS" in capsys.readouterr().out


def test_flags_override_config(tmp_path):
    """Test --seed and --samples replace the file values in the embedded config."""
    out = tmp_path / "out"
    config = _write_config(tmp_path, {**CURVED_SW, "seed": 1, "samples": 50})
    assert main(["verify", "--config", config, "--seed", "5", "--samples", "40", "--out", str(out)]) == EXIT_OK
    embedded = json.loads((out / "report.json").read_text())["config"]
    assert embedded["seed"] == 5
    assert embedded["samples"] == 40


def test_failed_limit_exits_one(tmp_path):
    """Test a failing configured check gives exit code 1."""
    config = {
        "system": "sl2.evans",
        "n": 2,
        "params": {"c": 1.0, "b": [0.1, 0.2]},
        "functions": {"F": "sqrt(c) * s"},
        "samples": 30,
        "limits": [{"parameter": "c"}],
    }
    assert main(["verify", "--config", _write_config(tmp_path, config), "--out", str(tmp_path)]) == EXIT_FAILED
    assert not json.loads((tmp_path / "report.json").read_text())["report"]["passed"]


@pytest.mark.parametrize("argv", [
    ["verify", "--system", "sl2.nowhere"],
    ["verify"],
    ["verify", "--system", "sl2.evans", "--samples", "0"],
    ["curvature", "--system", "extra.cg"],
])
def test_configuration_errors_exit_two(tmp_path, argv):
    """Test unknown systems, missing ids, invalid values and metric-free systems."""
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG


def test_malformed_config_file_exits_two(tmp_path):
    """Test unreadable JSON is a configuration error."""
    path = tmp_path / "broken.json"
    path.write_text("{\"system\": ")
    assert main(["verify", "--config", str(path)]) == EXIT_CONFIG
    assert main(["verify", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_verify_reports_are_byte_identical(tmp_path):
    """Test two runs of one config file write identical report.json files."""
    config = _write_config(tmp_path, {"system": "sl2.evans", "n": 3, "params": {"b": [0.1, 0.2, 0.3]}, "samples": 30})
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["verify", "--config", config, "--out", str(first)]) == EXIT_OK
    assert main(["verify", "--config", config, "--out", str(second)]) == EXIT_OK
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()


def test_simulate_oscillator(tmp_path):
    """Test a smoke run writes the trajectory table."""
    config = {"system": "sl2.evans", "n": 2, "integrator": {"h": 0.01, "steps": 20}}
    assert main(["simulate", "--config", _write_config(tmp_path, config), "--out", str(tmp_path)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "trajectory.csv")
    assert list(frame.columns[:5]) == ["t", "q1", "q2", "p1", "p2"]
    assert len(frame) == 21


def test_simulate_truncation_exits_one(tmp_path):
    """Test a trajectory crossing the Darboux type I singular locus exits 1."""
    config = {
        "system": "darboux.i",
        "n": 2,
        "integrator": {"h": 1e-3, "steps": 200, "q0": [0.75, 0.75], "p0": [-1.0, -1.0]},
    }
    assert main(["simulate", "--config", _write_config(tmp_path, config), "--out", str(tmp_path)]) == EXIT_FAILED
    summary = json.loads((tmp_path / "summary.json").read_text())["summary"]
    assert summary["truncated"]


def test_simulate_initial_state_on_guard_exits_one(tmp_path):
    """Test a start on a centrifugal singularity is a runtime failure."""
    config = {
        "system": "sl2.evans",
        "n": 2,
        "params": {"b": [0.1, 0.2]},
        "integrator": {"steps": 5, "q0": [0.0, 0.5], "p0": [0.1, 0.1]},
    }
    assert main(["simulate", "--config", _write_config(tmp_path, config), "--out", str(tmp_path)]) == EXIT_FAILED


def test_curvature_table(tmp_path):
    """Test the flat Evans metric gives a passing curvature table."""
    assert main(["curvature", "--system", "sl2.evans", "--n", "2", "--out", str(tmp_path)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "curvature.csv")
    assert list(frame.columns) == ["point", "q1", "q2", "closed", "numeric", "difference"]
    assert len(frame) == 10
