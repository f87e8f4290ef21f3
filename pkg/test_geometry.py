"""
Tests for metrics and scalar curvature.
"""
import numpy as np
import pytest

from poisson_coalgebra.catalog import darboux, multifold_kepler, taub_nut
from poisson_coalgebra.errors import DimensionMismatch, NonMetric
from poisson_coalgebra.expr import ParamSet, const, cosh, exp, param, square, symbol
from poisson_coalgebra.geometry import (
    DEFORMED_ARGUMENT,
    RADIUS,
    beltrami_metric,
    conformal_metric,
    curvature_frame,
    curvature_rows,
    deformed_curvature_expr,
    deformed_metric,
    flat_metric,
    gaussian_curvature_numeric,
    gaussian_curvature_z,
    scalar_curvature_batch,
    scalar_curvature_conformal,
    scalar_curvature_numeric,
    scalar_curvature_z3,
)
from poisson_coalgebra.sampling import rng_for

r = symbol(RADIUS)
x = symbol(DEFORMED_ARGUMENT)

POINTS = {
    2: [[0.42, 0.56], [0.3, 0.4]],
    3: [[0.3, 0.4, 0.0], [0.2, 0.3, 0.6]],
}


def test_flat_metric_has_zero_curvature():
    """Test the Euclidean metric."""
    for N in (2, 3, 4):
        Q = rng_for(1, N).uniform(0.2, 1.5, size=(5, N))
        np.testing.assert_allclose(scalar_curvature_batch(flat_metric(N), Q), 0.0, atol=1e-14)


@pytest.mark.parametrize("N", [2, 3])
@pytest.mark.parametrize("kappa", [0.3, 0.2, -0.25])
def test_stereographic_sphere(N, kappa):
    """Test f = 2/(1 + kappa r^2) has constant curvature N(N-1)kappa."""
    params = ParamSet(kappa=kappa)
    f = 2 / (1 + param("kappa") * square(r))
    metric = conformal_metric(f, N, params)
    for point in POINTS[N]:
        assert scalar_curvature_numeric(metric, point) == pytest.approx(N * (N - 1) * kappa, rel=1e-9)
        assert scalar_curvature_conformal(f, N, point, params) == pytest.approx(N * (N - 1) * kappa, rel=1e-9)


@pytest.mark.parametrize("N", [2, 3])
def test_poincare_factor_curvature(N):
    """Test f = 1/(1 + kappa r^2) gives 4N(N-1)kappa."""
    params = ParamSet(kappa=0.3)
    f = 1 / (1 + param("kappa") * square(r))
    metric = conformal_metric(f, N, params)
    for point in POINTS[N]:
        assert scalar_curvature_numeric(metric, point) == pytest.approx(4 * N * (N - 1) * 0.3, rel=1e-9)
        assert scalar_curvature_conformal(f, N, point, params) == pytest.approx(4 * N * (N - 1) * 0.3, rel=1e-9)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_beltrami_constant_curvature(N):
    """Test the projective chart metric has curvature N(N-1)kappa."""
    for kappa in (0.2, -0.15):
        metric = beltrami_metric(N, ParamSet(kappa=kappa))
        Q = rng_for(2, N).uniform(0.1, 0.6, size=(4, N))
        np.testing.assert_allclose(scalar_curvature_batch(metric, Q), N * (N - 1) * kappa, rtol=1e-8)


@pytest.mark.parametrize("factory", [
    lambda: darboux("i"),
    lambda: darboux("ii"),
    lambda: darboux("iiia"),
    lambda: darboux("iiib"),
    lambda: darboux("iv"),
    lambda: multifold_kepler(1.0, 0.5, 2.0),
    lambda: taub_nut(0.5),
])
def test_closed_curvature_matches_numeric(factory):
    """Test closed-form conformal curvature against the numeric pipeline."""
    entry = factory()
    Q = entry.box.sample(entry.N, 8, rng_for(3))[:, :entry.N]
    rows = curvature_rows(entry.metric, Q, entry.closed_curvature)
    for row in rows:
        assert row.difference <= 1e-6 * (1.0 + abs(row.numeric))


def test_curvature_is_isotropic():
    """Test a spherically symmetric metric has equal curvature on a sphere."""
    params = ParamSet(k=1.0)
    metric = conformal_metric(square(param("k") + square(r)), 3, params)
    first = scalar_curvature_numeric(metric, [0.6, 0.0, 0.8])
    second = scalar_curvature_numeric(metric, [0.0, 0.8, 0.6])
    third = scalar_curvature_numeric(metric, [0.48, 0.6, 0.64])
    assert first == pytest.approx(second, rel=1e-10)
    assert first == pytest.approx(third, rel=1e-10)


def test_finite_difference_oracle_agrees():
    """Test central-difference derivatives reproduce the jet curvature."""
    params = ParamSet(kappa=0.3)
    metric = conformal_metric(1 / (1 + param("kappa") * square(r)), 3, params)
    point = [0.3, 0.5, 0.7]
    exact = scalar_curvature_numeric(metric, point)
    assert scalar_curvature_numeric(metric, point, h=1e-3) == pytest.approx(exact, rel=1e-4)
    with pytest.raises(ValueError):
        scalar_curvature_numeric(metric, point, h=0.0)


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_deformed_exponential_has_constant_curvature(sign):
    """Test g = exp(+-x) gives K = +-z and R = +-6z for three sites."""
    z = 0.1
    g = exp(sign * x)
    params = ParamSet(z=z)
    for value in (0.05, 0.3, 1.2):
        assert gaussian_curvature_z(g, z, value) == pytest.approx(sign * z, rel=1e-12)
        assert scalar_curvature_z3(g, z, value) == pytest.approx(6 * sign * z, rel=1e-12)
    two = deformed_metric(g, 2, params)
    assert gaussian_curvature_numeric(two, [0.7, 1.1]) == pytest.approx(sign * z, rel=1e-5)
    three = deformed_metric(g, 3, params)
    assert scalar_curvature_numeric(three, [0.5, 0.9, 1.2]) == pytest.approx(6 * sign * z, rel=1e-4)


def test_deformed_closed_forms():
    """Test the undeformed-factor and cosh cases."""
    assert gaussian_curvature_z(const(1.0), 0.1, 0.1) == pytest.approx(-0.1 * np.sinh(0.1), rel=1e-12)
    assert gaussian_curvature_z(const(1.0), 0.1, 0.1) == pytest.approx(-0.010016675001984, rel=1e-10)
    for value in (0.2, 0.9):
        K = gaussian_curvature_z(cosh(x), 0.2, value)
        assert K == pytest.approx(0.2 * np.tanh(value), rel=1e-12)
        assert scalar_curvature_z3(cosh(x), 0.2, value) == pytest.approx(5 * K, rel=1e-12)


@pytest.mark.parametrize("g", [const(1.0), 1 + 0.5 * x, cosh(x)])
@pytest.mark.parametrize("N", [2, 3])
def test_deformed_closed_field_matches_numeric(g, N):
    """Test the closed deformed curvature field against the numeric pipeline."""
    params = ParamSet(z=0.15)
    metric = deformed_metric(g, N, params)
    Q = rng_for(4, N).uniform(0.3, 1.2, size=(5, N))
    rows = curvature_rows(metric, Q, deformed_curvature_expr(g, N))
    for row in rows:
        assert row.difference <= 1e-6 * (1.0 + abs(row.numeric))
    assert deformed_curvature_expr(g, 4) is None


def test_non_metric_factor_is_rejected():
    """Test factors that are not positive-definite raise NonMetric."""
    metric = deformed_metric(const(-1.0), 2, ParamSet(z=0.1))
    with pytest.raises(NonMetric):
        scalar_curvature_numeric(metric, [0.3, 0.4])
    with pytest.raises(NonMetric):
        scalar_curvature_conformal(r - 2, 2, [0.3, 0.4])
    with pytest.raises(NonMetric):
        gaussian_curvature_z(const(-1.0), 0.1, 0.5)
    with pytest.raises(NonMetric):
        conformal_metric(r + symbol("F"), 2)


def test_curvature_frame_layout():
    """Test the curvature table columns and dimension checks."""
    rows = curvature_rows(flat_metric(2), [[0.5, 0.6], [0.7, 0.8]], const(0.0))
    frame = curvature_frame(rows)
    assert list(frame.columns) == ["point", "q1", "q2", "closed", "numeric", "difference"]
    assert frame["difference"].max() <= 1e-14
    with pytest.raises(DimensionMismatch):
        gaussian_curvature_numeric(flat_metric(3), [0.1, 0.2, 0.3])
    with pytest.raises(DimensionMismatch):
        scalar_curvature_numeric(flat_metric(3), [0.1, 0.2])
