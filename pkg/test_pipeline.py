"""
Tests for the config-driven audit pipeline.
"""
import json

import pandas as pd
import pytest

from poisson_coalgebra.errors import ConfigError
from poisson_coalgebra.models import IntegratorConfig, LimitConfig, RunConfig, SystemClass
from poisson_coalgebra.pipeline import AuditPipeline, function_parameters, load_run_config


def test_user_functions_are_parsed_with_run_parameters():
    """Test bare names listed in params become parameters and placeholders stay symbols."""
    config = RunConfig(system="sl2.evans", n=2, params={"c": 0.5, "b": [0.1, 0.2]}, functions={"F": "c * s^2"})
    assert function_parameters(config) == ["b", "c"]
    entry = AuditPipeline(config).build_entry()
    assert entry.N == 2
    # H at q = (1, 1), p = 0: c * (q^2)^2 + centrifugal terms
    assert entry.evaluate([[1.0, 1.0, 0.0, 0.0]])[0] == pytest.approx(0.5 * 4.0 + 0.05 + 0.1, rel=1e-12)


def test_unknown_parameter_in_function_is_rejected():
    """Test a name that is neither a placeholder nor a parameter fails to build."""
    config = RunConfig(system="sl2.evans", n=2, functions={"F": "c * s"})
    result = AuditPipeline(config).run_verify()
    assert not result["success"]
    assert result["error_type"] == "UnresolvedSymbol"


def test_verify_curved_oscillator(tmp_path):
    """Test a curved Smorodinsky-Winternitz audit writes a passing QMS report."""
    config = RunConfig(system="sl2.curved_sw", n=3, params={"kappa": 0.2, "b": [0.1, 0.2, 0.3]})
    result = AuditPipeline(config, tmp_path).run_verify()
    assert result["success"]
    assert result["error"] is None
    assert result["report"].verified_class == SystemClass.QMS
    payload = json.loads(result["path"].read_text())
    assert payload["config"]["system"] == "sl2.curved_sw"
    assert payload["report"]["verified_class"] == "QMS"


def test_verify_sweeps_configured_limits(tmp_path):
    """Test a z -> 0 sweep is attached to the report."""
    config = RunConfig(
        system="sl2z.free", n=3, params={"z": 0.1}, samples=40, limits=[LimitConfig(parameter="z")]
    )
    result = AuditPipeline(config, tmp_path).run_verify()
    assert result["error"] is None
    [limit] = result["report"].limits
    assert limit.parameter == "z"
    assert limit.values == [0.2, 0.1, 0.05, 0.025]
    assert limit.order >= 0.9
    assert limit.passed


def test_slow_limit_fails_the_run(tmp_path):
    """Test a square-root approach to the limit fails the order check."""
    config = RunConfig(
        system="sl2.evans",
        n=2,
        params={"c": 1.0, "b": [0.1, 0.2]},
        functions={"F": "sqrt(c) * s"},
        samples=30,
        limits=[LimitConfig(parameter="c")],
    )
    result = AuditPipeline(config, tmp_path).run_verify()
    assert not result["success"]
    assert result["error"] is None
    [limit] = result["report"].limits
    assert limit.order == pytest.approx(0.5, abs=0.05)
    assert not limit.passed


def test_unknown_system_is_an_error(tmp_path):
    """Test an unregistered id is reported, not raised."""
    pipeline = AuditPipeline(RunConfig(system="sl2.nowhere"), tmp_path)
    result = pipeline.run_verify()
    assert not result["success"]
    assert result["error_type"] == "UnknownSystem"
    assert pipeline.get_status()["command"] == "verify"
    assert not (tmp_path / "report.json").exists()


def test_reports_are_reproducible_from_embedded_config(tmp_path):
    """Test identical runs and reruns of the embedded config give byte-identical reports."""
    config = RunConfig(system="sl2.evans", n=3, params={"b": [0.1, 0.2, 0.3]}, samples=30, seed=11)
    first = AuditPipeline(config, tmp_path / "first").run_verify()["path"].read_text()
    second = AuditPipeline(config, tmp_path / "second").run_verify()["path"].read_text()
    assert first == second
    embedded = RunConfig.model_validate(json.loads(first)["config"])
    third = AuditPipeline(embedded, tmp_path / "third").run_verify()["path"].read_text()
    assert third == first


def test_simulate_writes_trajectory(tmp_path):
    """Test the oscillator run writes 2N + 1 + monitor columns and a drift summary."""
    config = RunConfig(system="sl2.evans", n=2, integrator=IntegratorConfig(h=0.01, steps=50))
    result = AuditPipeline(config, tmp_path).run_simulate()
    assert result["success"]
    summary = result["summary"]
    frame = pd.read_csv(result["path"])
    assert len(frame) == 51
    assert len(frame.columns) == 5 + len(summary.drift)
    # default start is the centre of the sampling box
    assert frame.loc[0, "q1"] == pytest.approx(0.85)
    assert frame.loc[0, "p1"] == pytest.approx(0.0)
    assert summary.max_drift <= 1e-10
    assert json.loads(result["summary_path"].read_text())["summary"]["steps_taken"] == 50


def test_simulate_truncates_at_singular_locus(tmp_path):
    """Test the Darboux type I run stops before |q| reaches 1 and reports failure."""
    config = RunConfig(
        system="darboux.i",
        n=2,
        integrator=IntegratorConfig(h=1e-3, steps=200, q0=[0.75, 0.75], p0=[-1.0, -1.0]),
    )
    result = AuditPipeline(config, tmp_path).run_simulate()
    assert not result["success"]
    assert result["error"] is None
    assert result["summary"].truncated
    assert result["summary"].truncation_time is not None


def test_simulate_rejects_bad_initial_state(tmp_path):
    """Test q0 of the wrong length is a config error."""
    config = RunConfig(system="sl2.evans", n=2, integrator=IntegratorConfig(q0=[0.5]))
    result = AuditPipeline(config, tmp_path).run_simulate()
    assert result["error_type"] == "ConfigError"


def test_curvature_of_flat_space(tmp_path):
    """Test the Evans metric is flat numerically and in closed form."""
    config = RunConfig(system="sl2.evans", n=3, curvature_points=5)
    result = AuditPipeline(config, tmp_path).run_curvature()
    assert result["success"]
    frame = pd.read_csv(result["path"])
    assert list(frame.columns) == ["point", "q1", "q2", "q3", "closed", "numeric", "difference"]
    assert frame["closed"].abs().max() == 0.0
    assert frame["numeric"].abs().max() <= 1e-10


def test_curvature_of_exponential_deformation(tmp_path):
    """Test g = exp(x) gives scalar curvature 6z at three sites."""
    config = RunConfig(system="sl2z.free", n=3, params={"z": 0.1}, functions={"g": "exp(x)"}, curvature_points=5)
    result = AuditPipeline(config, tmp_path).run_curvature()
    assert result["success"]
    for row in result["rows"]:
        assert row.closed == pytest.approx(0.6, rel=1e-9)
        assert row.difference <= 1e-4


def test_curvature_needs_a_metric(tmp_path):
    """Test systems without a metric are config errors."""
    result = AuditPipeline(RunConfig(system="extra.cg", n=3), tmp_path).run_curvature()
    assert not result["success"]
    assert result["error_type"] == "ConfigError"


def test_load_run_config(tmp_path):
    """Test JSON configs load, accept overrides and reject malformed input."""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"system": "sl2.evans", "n": 2, "params": {"b": [0.1, 0.2]}}))
    config = load_run_config(path, {"seed": 7, "samples": 20})
    assert config.n == 2
    assert config.seed == 7
    assert config.samples == 20
    path.write_text(json.dumps({"system": "sl2.evans", "n": 0}))
    with pytest.raises(ConfigError):
        load_run_config(path)
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
