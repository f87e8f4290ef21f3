"""
Audit pipeline orchestrator driven by a RunConfig.
"""
import time
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import structlog
from pydantic import ValidationError

from .catalog import LINEAR, SQUARED, CatalogEntry, build
from .config import settings
from .dynamics import integrate
from .errors import CoalgebraError, ConfigError
from .exprparse import parse_expression
from .geometry import DEFORMED_ARGUMENT, RADIUS, curvature_frame, curvature_rows
from .models import RunConfig, dump_json, report_payload
from .sampling import SamplingBox, rng_for
from .verify import classify, limit_check

logger = structlog.get_logger()

PLACEHOLDERS = frozenset({SQUARED, LINEAR, RADIUS, DEFORMED_ARGUMENT})
CURVATURE_TOLERANCE = 1e-4
CURVATURE_STREAM = 4

REPORT_FILE = "report.json"
TRAJECTORY_FILE = "trajectory.csv"
SUMMARY_FILE = "summary.json"
CURVATURE_FILE = "curvature.csv"


def load_run_config(path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Read a JSON run configuration and apply flag overrides on top."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        config = RunConfig.model_validate_json(text)
        if overrides:
            config = RunConfig.model_validate({**config.model_dump(), **overrides})
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from None
    return config


def function_parameters(config: RunConfig):
    """Bare names in user functions that resolve to run parameters."""
    return sorted(set(config.params) - PLACEHOLDERS)


class AuditPipeline:
    """Builds one catalog system and runs verification, simulation or curvature jobs on it."""

    def __init__(self, config: RunConfig, output_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.output_dir = Path(output_dir) if output_dir is not None else settings.output_dir
        self.last_run: Optional[Dict[str, Any]] = None
        logger.info("Audit pipeline initialized", system_id=config.system, n=config.n, output_dir=str(self.output_dir))

    def build_entry(self, **overrides: float) -> CatalogEntry:
        """Parse the user functions and build the configured system."""
        names = function_parameters(self.config)
        functions = {key: parse_expression(text, names) for key, text in self.config.functions.items()}
        params = {**self.config.params, **overrides}
        entry = build(self.config.system, self.config.n, params, functions, self.config.options)
        if self.config.box is not None:
            entry = entry.with_box(SamplingBox.from_config(self.config.box))
        return entry

    def _write(self, name: str, text: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        path.write_text(text)
        return path

    def _finish(self, command: str, start_time: float, result: Dict[str, Any]) -> Dict[str, Any]:
        result["duration_seconds"] = time.time() - start_time
        result.setdefault("error_type", None)
        self.last_run = {"command": command, **result}
        return result

    def run_verify(self) -> Dict[str, Any]:
        """Classify the system, sweep the configured limits and write report.json."""
        logger.info("Running verification", system_id=self.config.system, n=self.config.n)
        start_time = time.time()
        config = self.config

        try:
            entry = self.build_entry()
            report = classify(
                entry, samples=config.samples, seed=config.seed, tol=config.tolerance, jobs=config.jobs
            )
            limits = []
            for limit in config.limits:
                target = self.build_entry(**{limit.parameter: 0.0})
                limits.append(
                    limit_check(
                        lambda value, name=limit.parameter: self.build_entry(**{name: value}),
                        target,
                        limit.values,
                        samples=config.samples,
                        seed=config.seed,
                        parameter=limit.parameter,
                    )
                )
            report = report.model_copy(
                update={"limits": limits, "passed": report.passed and all(item.passed for item in limits)}
            )
            payload = {"config": report_payload(config), "report": report_payload(report)}
            path = self._write(REPORT_FILE, dump_json(payload))

            logger.info(
                "Verification completed",
                system_id=entry.id,
                verified_class=report.verified_class.value,
                passed=report.passed,
                limits=len(limits),
            )
            return self._finish(
                "verify", start_time, {"success": report.passed, "report": report, "path": path, "error": None}
            )

        except CoalgebraError as e:
            logger.error("Verification failed", system_id=config.system, error=str(e))
            return self._finish(
                "verify", start_time, {"success": False, "error": str(e), "error_type": type(e).__name__}
            )

    def initial_state(self, entry: CatalogEntry) -> np.ndarray:
        """Configured q0/p0, each defaulting to the centre of the sampling box."""
        integrator = self.config.integrator
        center = entry.box.center(entry.N)
        q0 = center[: entry.N] if integrator.q0 is None else np.asarray(integrator.q0, dtype=float)
        p0 = center[entry.N:] if integrator.p0 is None else np.asarray(integrator.p0, dtype=float)
        if q0.size != entry.N or p0.size != entry.N:
            raise ConfigError(f"q0 and p0 need {entry.N} components each")
        return np.concatenate([q0, p0])

    def run_simulate(self) -> Dict[str, Any]:
        """Integrate from the configured state, write trajectory.csv and the drift summary."""
        logger.info("Running simulation", system_id=self.config.system, n=self.config.n)
        start_time = time.time()
        integrator = self.config.integrator

        try:
            entry = self.build_entry()
            trajectory = integrate(
                entry,
                self.initial_state(entry),
                integrator.h,
                integrator.steps,
                fp_tol=integrator.fp_tol,
                max_iter=integrator.max_iter,
            )
            summary = trajectory.summary()
            path = trajectory.to_csv(self.output_dir / TRAJECTORY_FILE)
            payload = {"config": report_payload(self.config), "summary": report_payload(summary)}
            summary_path = self._write(SUMMARY_FILE, dump_json(payload))

            logger.info(
                "Simulation completed",
                system_id=entry.id,
                steps_taken=summary.steps_taken,
                max_drift=summary.max_drift,
                truncated=summary.truncated,
            )
            return self._finish(
                "simulate",
                start_time,
                {
                    "success": not summary.truncated,
                    "summary": summary,
                    "path": path,
                    "summary_path": summary_path,
                    "error": None,
                },
            )

        except CoalgebraError as e:
            logger.error("Simulation failed", system_id=self.config.system, error=str(e))
            return self._finish(
                "simulate", start_time, {"success": False, "error": str(e), "error_type": type(e).__name__}
            )

    def run_curvature(self) -> Dict[str, Any]:
        """Closed-form and numeric scalar curvature at box points, written to curvature.csv."""
        logger.info("Running curvature table", system_id=self.config.system, n=self.config.n)
        start_time = time.time()

        try:
            entry = self.build_entry()
            if entry.metric is None:
                raise ConfigError(f"system {entry.id} has no metric")
            points = entry.box.sample(entry.N, self.config.curvature_points, rng_for(self.config.seed, CURVATURE_STREAM))
            rows = curvature_rows(entry.metric, points[:, : entry.N], entry.closed_curvature)
            path = self.output_dir / CURVATURE_FILE
            path.parent.mkdir(parents=True, exist_ok=True)
            curvature_frame(rows).to_csv(path, index=False)

            differences = [row.difference for row in rows if row.difference is not None]
            passed = all(
                row.difference <= CURVATURE_TOLERANCE * (1.0 + abs(row.numeric))
                for row in rows
                if row.difference is not None
            )
            logger.info(
                "Curvature table completed",
                system_id=entry.id,
                points=len(rows),
                max_difference=max(differences, default=None),
                passed=passed,
            )
            return self._finish(
                "curvature", start_time, {"success": passed, "rows": rows, "path": path, "error": None}
            )

        except CoalgebraError as e:
            logger.error("Curvature table failed", system_id=self.config.system, error=str(e))
            return self._finish(
                "curvature", start_time, {"success": False, "error": str(e), "error_type": type(e).__name__}
            )

    def get_status(self) -> Dict[str, Any]:
        """Configuration and outcome of the most recent run."""
        status = {"system": self.config.system, "n": self.config.n, "output_dir": str(self.output_dir)}
        if self.last_run is not None:
            status.update(
                {
                    "command": self.last_run["command"],
                    "success": self.last_run["success"],
                    "error": self.last_run["error"],
                    "duration_seconds": self.last_run["duration_seconds"],
                }
            )
        return status
