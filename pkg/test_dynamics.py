"""
Tests for the implicit midpoint integrator and trajectory output.
"""
import numpy as np
import pandas as pd
import pytest

from poisson_coalgebra.catalog import curved_sw, darboux, deformed_free, evans
from poisson_coalgebra.dynamics import hamiltons_rhs, implicit_midpoint_step, integrate, integrate_batch
from poisson_coalgebra.errors import DomainError
from poisson_coalgebra.expr import const, p, q, square
from poisson_coalgebra.extensions import comodule_oscillator

START = [0.8, 1.0, 0.1, -0.2]


def test_rhs_of_simple_hamiltonians():
    """Test dq/dt = grad_p H and dp/dt = -grad_q H."""
    dq, dp = hamiltons_rhs(square(p(0)) / 2, [0.3, 0.7])
    assert dq[0] == pytest.approx(0.7)
    assert dp[0] == 0.0
    dq, dp = hamiltons_rhs(q(0), [0.3, 0.7])
    assert dq[0] == 0.0
    assert dp[0] == pytest.approx(-1.0)


def test_zero_step_is_rejected():
    """Test h = 0 raises."""
    with pytest.raises(ValueError):
        implicit_midpoint_step(square(p(0)) / 2, [0.3, 0.7], 0.0)


def test_harmonic_oscillator_conserves_energy():
    """Test quadratic energy is conserved to solver precision."""
    trajectory = integrate(evans(N=2), [1.0, 0.5, 0.0, 0.3], 0.01, 1000)
    assert not trajectory.truncated
    assert trajectory.steps_taken == 1000
    assert trajectory.drift()["H"] <= 1e-10


def test_free_particle_moves_on_straight_lines():
    """Test the midpoint rule is exact for uniform motion."""
    trajectory = integrate(evans(F=const(0.0), N=2), [0.5, 0.6, 0.2, -0.1], 0.05, 40)
    np.testing.assert_allclose(trajectory.states[-1], [0.9, 0.4, 0.2, -0.1], atol=1e-12)


def test_integration_is_reversible():
    """Test stepping back with -h returns to the initial state."""
    entry = evans(b=[0.1, 0.2], N=2)
    forward = integrate(entry, START, 0.01, 200)
    backward = integrate(entry, forward.states[-1], -0.01, 200)
    np.testing.assert_allclose(backward.states[-1], START, atol=1e-9)


@pytest.mark.parametrize("factory", [
    lambda: evans(b=[0.1, 0.2], N=2),
    lambda: darboux("iiib", N=2),
], ids=["evans", "darboux_iiib"])
def test_step_halving_reduces_drift_fourfold(factory):
    """Test second-order convergence of the energy error."""
    entry = factory()
    coarse = integrate(entry, START, 0.02, 100).drift()["H"]
    fine = integrate(entry, START, 0.01, 200).drift()["H"]
    assert 3.5 <= coarse / fine <= 4.5


def test_singular_locus_truncates():
    """Test the Darboux type I flow stops before |q| reaches 1."""
    entry = darboux("i", N=2)
    trajectory = integrate(entry, [0.75, 0.75, -1.0, -1.0], 1e-3, 200)
    assert trajectory.truncated
    assert trajectory.steps_taken < 200
    assert trajectory.truncation_reason
    assert trajectory.summary().truncation_time == pytest.approx(trajectory.times[-1])


def test_initial_state_is_checked():
    """Test wrong dimensions and states on a guard raise."""
    entry = evans(b=[0.1, 0.2], N=2)
    with pytest.raises(DomainError):
        integrate(entry, [0.5, 0.5, 0.1], 0.01, 10)
    with pytest.raises(DomainError):
        integrate(entry, [0.0, 0.5, 0.1, 0.1], 0.01, 10)


def test_trajectory_csv_layout(tmp_path):
    """Test the CSV has time, coordinates, momenta and monitors."""
    trajectory = integrate(evans(b=[0.1, 0.2], N=2), START, 0.01, 20)
    path = trajectory.to_csv(tmp_path / "out" / "trajectory.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns[:5]) == ["t", "q1", "q2", "p1", "p2"]
    assert "H" in frame.columns
    assert len(frame.columns) == 5 + len(trajectory.monitors)
    assert len(frame) == 21
    summary = trajectory.summary()
    assert summary.steps_taken == 20
    assert not summary.truncated


def test_batch_matches_sequential():
    """Test worker threads give the same trajectories in input order."""
    entry = evans(b=[0.1, 0.2], N=2)
    starts = [START, [0.9, 0.7, -0.1, 0.2], [1.1, 0.6, 0.0, 0.0]]
    sequential = integrate_batch(entry, starts, 0.01, 30, jobs=1)
    threaded = integrate_batch(entry, starts, 0.01, 30, jobs=3)
    for first, second in zip(sequential, threaded):
        np.testing.assert_array_equal(first.states, second.states)


@pytest.mark.slow
@pytest.mark.parametrize("factory, x0", [
    (lambda: curved_sw(1.0, 0.1, [0.1, 0.2, 0.3], 3), [0.6, 0.7, 0.8, 0.1, -0.1, 0.2]),
    (lambda: darboux("iiib", N=2), [0.6, 0.8, 0.3, -0.2]),
    (lambda: deformed_free(z=0.05, N=3), [0.6, 0.7, 0.8, 0.1, -0.1, 0.2]),
    (lambda: comodule_oscillator(0.1).as_entry(), [0.6, 0.8, 0.3, -0.2]),
])
def test_long_runs_conserve_integrals(factory, x0):
    """Test 10^4 steps at h = 1e-3 keep every monitored invariant."""
    trajectory = integrate(factory(), x0, 1e-3, 10_000)
    assert not trajectory.truncated
    assert max(trajectory.drift().values()) <= 1e-6
