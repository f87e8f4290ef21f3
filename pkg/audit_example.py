#!/usr/bin/env python3
"""
Coalgebra Audit Pipeline Example
"""
from dotenv import load_dotenv

from poisson_coalgebra.algebras import sl2_config, sl2_spec
from poisson_coalgebra.config import settings
from poisson_coalgebra.extensions import comodule_oscillator, loop_involution_check
from poisson_coalgebra.logging_setup import configure_logging
from poisson_coalgebra.models import IntegratorConfig, LimitConfig, RunConfig
from poisson_coalgebra.pipeline import AuditPipeline

# Load environment variables
load_dotenv()


def main():
    """Main audit example."""
    configure_logging(settings.log_level, settings.log_format)
    print("Poisson Coalgebra Audit Pipeline")
    print("=" * 60)

    # Example 1: classify the curved Smorodinsky-Winternitz system
    print("\nExample 1: Verify sl2.curved_sw at N = 3")
    print("-" * 40)

    config = RunConfig(
        system="sl2.curved_sw",
        n=3,
        params={"omega": 1.0, "kappa": 0.2, "b": [0.1, 0.2, 0.3]},
        limits=[LimitConfig(parameter="kappa")],
    )
    result = AuditPipeline(config).run_verify()
    if result["success"]:
        report = result["report"]
        print(f"Claimed {report.claimed_class.value}, verified {report.verified_class.value}")
        print(f"Duration: {result['duration_seconds']:.2f} seconds")
    else:
        print(f"Failed: {result.get('error') or 'a check did not pass'}")

    # Example 2: a user-defined potential on the deformed space
    print("\nExample 2: Simulate sl2z.potential with U = omega^2 s / 2 + k / s")
    print("-" * 40)

    config = RunConfig(
        system="sl2z.potential",
        n=3,
        params={"z": 0.05, "omega": 1.0, "k": 0.1},
        functions={"U": "omega^2 * s / 2 + k / s"},
        integrator=IntegratorConfig(h=1e-3, steps=2000),
    )
    result = AuditPipeline(config).run_simulate()
    if result["success"]:
        summary = result["summary"]
        print(f"Max drift over {summary.steps_taken} steps: {summary.max_drift:.2e}")
    else:
        print(f"Failed: {result.get('error') or 'trajectory truncated'}")

    # Example 3: curvature of the exponential deformation
    print("\nExample 3: Curvature of g = exp(x)")
    print("-" * 40)

    config = RunConfig(system="sl2z.free", n=3, params={"z": 0.1}, functions={"g": "exp(x)"})
    result = AuditPipeline(config).run_curvature()
    if result["error"] is None:
        for row in result["rows"][:3]:
            print(f"q={row.q}: closed {row.closed:.6f}, numeric {row.numeric:.6f}")

    # Example 4: comodule oscillator and loop coproduct
    print("\nExample 4: Extensions")
    print("-" * 40)

    system = comodule_oscillator(0.1)
    print(f"{{H_sigma, C_sigma}} residual: {system.involution_residual():.2e}")
    loop = loop_involution_check(sl2_spec(), sl2_config(3, b=[0.1, 0.2, 0.3]))
    print(f"Loop Casimirs involutive on {loop.checks} pairs: {loop.passed}")


if __name__ == "__main__":
    main()
