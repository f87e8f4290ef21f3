"""
Tests for the generic coalgebra engine.
"""
from fractions import Fraction

import numpy as np
import pytest

from poisson_coalgebra import coalgebra
from poisson_coalgebra.algebras import h6_config, h6_spec, sl2_config, sl2_spec, sl2z_config, sl2z_spec
from poisson_coalgebra.coalgebra import (
    LEFT,
    RIGHT,
    SiteConfig,
    apply_coproduct,
    build_hamiltonian,
    casimir_integrals,
    check_poisson_map,
    coassociativity_residual,
    coproduct_left,
    coproduct_right,
    embed,
    generic_dimension,
    generic_integrability_condition,
    integrability_condition,
    realize,
    realize_tagged,
    support,
)
from poisson_coalgebra.errors import OddDimension, ParameterMismatch, UnknownGenerator, UnresolvedSymbol
from poisson_coalgebra.expr import (
    PhasePoint,
    const,
    evaluate,
    evaluate_batch,
    exp,
    param,
    p,
    q,
    square,
    structurally_equal,
    symbol,
)
from poisson_coalgebra.models import CheckStatus
from poisson_coalgebra.sampling import SamplingBox, rng_for

POINT_2 = PhasePoint([1.0, 2.0], [3.0, 4.0])


def test_primitive_coproduct_is_site_sum():
    """Test the third coproduct of a primitive generator."""
    spec = sl2_spec()
    expected = symbol("Jm", 0) + (symbol("Jm", 1) + symbol("Jm", 2))
    assert structurally_equal(coproduct_left(spec, "Jm", 3), expected)
    assert structurally_equal(coproduct_left(spec, "Jm", 1), symbol("Jm", 0))
    assert spec.is_primitive("Jm")


def test_deformed_two_site_coproduct():
    """Test J- stays primitive and J3 picks up exponential factors."""
    spec = sl2z_spec()
    z = param("z")
    assert structurally_equal(coproduct_left(spec, "Jm", 2), symbol("Jm", 0) + symbol("Jm", 1))
    expected = symbol("J3", 0) * exp(z * symbol("Jm", 1)) + exp(-z * symbol("Jm", 0)) * symbol("J3", 1)
    assert structurally_equal(coproduct_left(spec, "J3", 2), expected)
    assert not spec.is_primitive("J3")


def test_unknown_generator():
    """Test coproducts of undefined generators."""
    with pytest.raises(UnknownGenerator):
        coproduct_left(sl2_spec(), "K", 2)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_left_and_right_full_coproducts_agree(N):
    """Test left and right N-th coproducts coincide on realized generators."""
    spec = sl2z_spec()
    config = sl2z_config(N, b=np.linspace(0.1, 0.4, N), z=0.1)
    params = config.params()
    X = SamplingBox().sample(N, 50, rng_for(5, N))
    for gen in spec.generators:
        left = realize_tagged(spec, coproduct_left(spec, gen, N))
        right = realize_tagged(spec, coproduct_right(spec, gen, N))
        np.testing.assert_allclose(evaluate_batch(left, X, params), evaluate_batch(right, X, params), rtol=1e-10)


def test_right_coproduct_embedding_support():
    """Test a right third coproduct placed in four sites occupies sites 2..4."""
    spec = sl2z_spec()
    placed = realize_tagged(spec, embed(coproduct_right(spec, "J3", 3), 1))
    assert support(placed) == [1, 2, 3]
    config = sl2z_config(4, z=0.1)
    x = np.array([0.5, 0.7, 0.9, 1.1, 0.2, -0.3, 0.4, 0.1])
    moved = x.copy()
    moved[0] = 1.3
    moved[4] = -0.8
    assert evaluate(placed, x, config.params()) == evaluate(placed, moved, config.params())


@pytest.mark.parametrize("spec_factory,config", [
    (sl2_spec, sl2_config(4, [0.3, 0.1, 0.2, 0.5])),
    (sl2z_spec, sl2z_config(4, [0.3, 0.1, 0.2, 0.5], z=0.2)),
    (h6_spec, h6_config(4, [1.0, 0.5, -0.7, 1.2])),
])
def test_coassociativity(spec_factory, config):
    """Test left and right m-fold extensions agree for m up to 4."""
    spec = spec_factory()
    for gen in spec.generators:
        for m in (2, 3, 4):
            assert coassociativity_residual(spec, gen, m, config, samples=50, seed=1) <= 1e-10


def test_realize_sl2():
    """Test realized sl(2,R) generators at a fixed point."""
    system = realize(sl2_spec(), sl2_config(2))
    assert evaluate(system.generators["Jm"], POINT_2, system.params) == 5.0
    assert evaluate(system.generators["Jp"], POINT_2, system.params) == 25.0
    assert evaluate(system.generators["J3"], POINT_2, system.params) == 11.0


def test_realize_h6_central_generator():
    """Test realized M is the constant sum of squared labels."""
    lam = [1.0, 2.0, 0.5]
    system = realize(h6_spec(), h6_config(3, lam))
    X = SamplingBox().sample(3, 10, rng_for(2))
    np.testing.assert_allclose(evaluate_batch(system.generators["M"], X, system.params), 5.25)
    assert system.constants["C1"] == [5.25]


def test_site_config_validation():
    """Test per-site arrays must have exactly N entries."""
    with pytest.raises(ParameterMismatch):
        SiteConfig(3, {"b": [0.1, 0.2]})
    with pytest.raises(ParameterMismatch):
        realize(sl2z_spec(), SiteConfig(2, {"b": [0.0, 0.0]}))


def test_casimir_integrals_sl2():
    """Test C^(2) equals the squared angular momentum and m = 1 gives b_1."""
    spec = sl2_spec()
    config = sl2_config(2)
    left = casimir_integrals(spec, config, LEFT)
    assert set(left) == {("C", 2)}
    assert evaluate(left[("C", 2)], POINT_2, config.params()) == pytest.approx(4.0)

    with_b = sl2_config(3, [0.7, 0.2, 0.4])
    one_site = realize_tagged(spec, apply_coproduct(spec, spec.casimir("C").expr, 1))
    assert evaluate(one_site, PhasePoint([0.9, 1.0, 1.1], [0.3, 0.2, 0.1]), with_b.params()) == pytest.approx(0.7)
    assert realize(spec, with_b).constants["C@site"] == pytest.approx([0.7, 0.2, 0.4])


def test_h6_second_integral_vanishes():
    """Test C^(2) and C_(2) are identically zero for h6."""
    spec = h6_spec()
    config = h6_config(3, [1.0, -0.5, 0.8])
    X = SamplingBox().sample(3, 20, rng_for(9))
    for side in (LEFT, RIGHT):
        integrals = casimir_integrals(spec, config, side)
        np.testing.assert_allclose(evaluate_batch(integrals[("C", 2)], X, config.params()), 0.0, atol=1e-12)


def test_common_integral_left_equals_right():
    """Test C^(N) and C_(N) coincide."""
    spec = sl2z_spec()
    config = sl2z_config(3, [0.2, 0.3, 0.1], z=0.05)
    X = SamplingBox().sample(3, 30, rng_for(4))
    left = casimir_integrals(spec, config, LEFT)[("C", 3)]
    right = casimir_integrals(spec, config, RIGHT)[("C", 3)]
    np.testing.assert_allclose(evaluate_batch(left, X, config.params()), evaluate_batch(right, X, config.params()), rtol=1e-10)


def test_right_integrals_use_right_coproduct(monkeypatch):
    """Test C_(m) is built from the right coproduct and agrees with the shifted left one."""
    spec = sl2z_spec()
    config = sl2z_config(4, [0.2, 0.3, 0.1, 0.4], z=0.05)
    calls = []
    original = coalgebra.coproduct_right

    def recording(spec, gen, m):
        calls.append((gen, m))
        return original(spec, gen, m)

    monkeypatch.setattr(coalgebra, "coproduct_right", recording)
    casimir_integrals(spec, config, LEFT)
    assert calls == []
    right = casimir_integrals(spec, config, RIGHT)
    assert {2, 3, 4} <= {m for _, m in calls}

    X = SamplingBox().sample(4, 30, rng_for(21))
    for m in (2, 3):
        shifted = realize_tagged(spec, embed(apply_coproduct(spec, spec.casimir("C").expr, m, LEFT), 4 - m))
        np.testing.assert_allclose(
            evaluate_batch(right[("C", m)], X, config.params()),
            evaluate_batch(shifted, X, config.params()),
            rtol=1e-10,
        )


def test_build_hamiltonian():
    """Test Hamiltonians built from generator functions."""
    spec = sl2_spec()
    system = realize(spec, sl2_config(3))
    Jm, Jp, J3 = symbol("Jm"), symbol("Jp"), symbol("J3")
    H = build_hamiltonian(system, Jp / 2)
    x = PhasePoint([0.5, 0.6, 0.7], [0.1, -0.2, 0.3])
    assert evaluate(H, x, system.params) == pytest.approx(0.5 * (0.01 + 0.04 + 0.09))

    casimir = build_hamiltonian(system, Jm * Jp - square(J3))
    top = casimir_integrals(spec, system.config, LEFT)[("C", 3)]
    assert evaluate(casimir, x, system.params) == pytest.approx(evaluate(top, x, system.params))

    with pytest.raises(UnresolvedSymbol):
        build_hamiltonian(system, Jp + symbol("F"))


@pytest.mark.parametrize("N", [2, 3, 4])
def test_poisson_map_sl2(N):
    """Test the realized coproduct is a Poisson map for sl(2,R)."""
    report = check_poisson_map(sl2_spec(), sl2_config(N, np.linspace(0.1, 0.5, N)), samples=100, tol=1e-9, seed=1)
    assert report.passed
    assert report.max_residual <= 1e-10


@pytest.mark.parametrize("N,z", [(2, 0.05), (2, 0.2), (3, 0.2)])
def test_poisson_map_sl2z(N, z):
    """Test the deformed coproduct is a Poisson map."""
    report = check_poisson_map(sl2z_spec(), sl2z_config(N, [0.2] * N, z=z), samples=100, tol=1e-9, seed=2)
    assert report.passed


@pytest.mark.parametrize("N", [2, 3])
def test_poisson_map_h6(N):
    """Test the h6 realization closes its brackets."""
    report = check_poisson_map(h6_spec(), h6_config(N, [1.0, -0.6, 0.9][:N]), samples=100, tol=1e-9, seed=3, jobs=2)
    assert report.passed
    assert len(report.pairs) == 15


def test_poisson_map_negative_control():
    """Test a corrupted bracket table is reported as a failure."""
    spec = sl2_spec().with_brackets({("J3", "Jp"): 3 * symbol("Jp")}, name="sl2-corrupted")
    report = check_poisson_map(spec, sl2_config(2), samples=20, tol=1e-9, seed=1)
    assert not report.passed
    failed = [pair for pair in report.pairs if pair.status == CheckStatus.FAILED]
    assert [(pair.first, pair.second) for pair in failed] == [("Jp", "J3")] or [
        (pair.first, pair.second) for pair in failed
    ] == [("J3", "Jp")]


def test_poisson_map_deterministic():
    """Test identical seeds give identical reports."""
    first = check_poisson_map(sl2_spec(), sl2_config(3), samples=30, seed=8)
    second = check_poisson_map(sl2_spec(), sl2_config(3), samples=30, seed=8, jobs=3)
    assert first.model_dump() == second.model_dump()


def test_integrability_counting():
    """Test the integrability and generic-dimension conditions."""
    for N in (2, 3, 10):
        assert integrability_condition(1, 1, N)
    assert not integrability_condition(2, 1, 3)
    assert not integrability_condition(2, 2, 2)
    assert integrability_condition(1, 2, 2)
    assert generic_dimension(3, 1) == Fraction(1)
    assert generic_dimension(6, 2) == Fraction(2)
    with pytest.raises(OddDimension):
        generic_dimension(4, 1)
    assert generic_integrability_condition(3, 1, 1, 5)
    assert not generic_integrability_condition(6, 2, 1, 4)


def test_constant_expression_has_no_support():
    """Test support of constants and single-site fields."""
    assert support(const(2.0)) == []
    assert support(square(q(2)) + p(2)) == [2]
