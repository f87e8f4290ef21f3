"""
Tests for the catalog of Hamiltonian families.
"""
import numpy as np
import pytest

from poisson_coalgebra.catalog import (
    BELTRAMI,
    CATALOG,
    POINCARE,
    build,
    conformal_free,
    curved_evans,
    curved_kc,
    curved_sw,
    darboux,
    deformed_free,
    deformed_potential,
    em_fields_3d,
    em_flat,
    evans,
    extras,
    field_residuals,
    free_constant_curvature,
    h6_em,
    h6_em_fields_3d,
    h6_geodesic,
    list_systems,
    minimal_coupling_residual,
    multifold_kepler,
    taub_nut,
)
from poisson_coalgebra.errors import (
    EmptySamplingBox,
    NonMetric,
    ParameterMismatch,
    UnknownSystem,
    UnresolvedSymbol,
)
from poisson_coalgebra.expr import const, jets_batch, normalized_bracket, param, sqrt, symbol
from poisson_coalgebra.geometry import RADIUS
from poisson_coalgebra.models import SystemClass
from poisson_coalgebra.sampling import rng_for

s = symbol("s")


def _split(X):
    N = X.shape[1] // 2
    return X[:, :N], X[:, N:]


def _dimension(system_id):
    return 4 if system_id.startswith("h6.") else 3


def test_registry_listing():
    """Test every family is registered once and listed in order."""
    ids = [info.id for info in list_systems()]
    assert ids == sorted(ids)
    assert len(ids) == 27
    for expected in ("sl2.evans", "darboux.iv", "sl2z.potential", "h6.geodesic", "extra.rs_like"):
        assert expected in CATALOG
    assert CATALOG["sl2.curved_sw"].claimed_class == SystemClass.MS
    assert CATALOG["h6.natural"].claimed_class == SystemClass.QUASI_INTEGRABLE
    assert all(info.reference for info in list_systems())
    assert CATALOG["sl2.curved_sw"].reference == "Eq. (ec)"


@pytest.mark.parametrize("system_id", sorted(CATALOG))
def test_every_system_builds_and_evaluates(system_id):
    """Test default construction and finite energies on the box."""
    N = _dimension(system_id)
    entry = build(system_id, N=N)
    assert entry.id.startswith(system_id.split(".")[0])
    X = entry.box.sample(N, 40, rng_for(1, N))
    assert np.all(np.isfinite(entry.evaluate(X)))
    assert entry.claimed_class == CATALOG[system_id].claimed_class


@pytest.mark.parametrize("system_id", [key for key in sorted(CATALOG) if not key.startswith("extra.")])
def test_hamiltonian_commutes_with_integrals(system_id):
    """Test {H, C} = 0 for every integral of the family."""
    N = _dimension(system_id)
    entry = build(system_id, N=N)
    integrals = [item.expr for item in entry.integrals.labeled()]
    assert integrals
    X = entry.box.sample(N, 60, rng_for(2, N))
    jets = jets_batch([entry.hamiltonian, *integrals], X, entry.params)
    for other in jets[1:]:
        assert np.max(normalized_bracket(jets[0].gradients, other.gradients)) <= 1e-9


def test_evans_explicit_form():
    """Test the flat Evans Hamiltonian against its coordinate form."""
    b = [0.2, 0.3, 0.1]
    entry = evans(b=b, params={"omega": 2.0})
    X = entry.box.sample(3, 30, rng_for(3))
    Q, P = _split(X)
    expected = 0.5 * np.sum(P ** 2 + np.array(b) / Q ** 2, axis=1) + 2.0 * np.sum(Q ** 2, axis=1)
    np.testing.assert_allclose(entry.evaluate(X), expected, rtol=1e-12)


def test_curved_sw_poincare_form():
    """Test the curved oscillator in Poincare coordinates."""
    kappa, omega, b = 0.2, 1.5, [0.1, 0.2, 0.3]
    entry = curved_sw(omega, kappa, b, 3, POINCARE)
    X = entry.box.sample(3, 30, rng_for(4))
    Q, P = _split(X)
    r2 = np.sum(Q ** 2, axis=1)
    Jp = np.sum(P ** 2 + np.array(b) / Q ** 2, axis=1)
    expected = 0.5 * (1 + kappa * r2) ** 2 * Jp + omega ** 2 * r2 / (2 * (1 - kappa * r2) ** 2)
    np.testing.assert_allclose(entry.evaluate(X), expected, rtol=1e-12)
    assert entry.claimed_class == SystemClass.MS
    assert entry.notes


def test_curved_kc_beltrami_form():
    """Test the curved Kepler-Coulomb system in Beltrami coordinates."""
    kappa, k = -0.2, 0.7
    entry = curved_kc(k, kappa, None, 3, BELTRAMI)
    X = entry.box.sample(3, 30, rng_for(5))
    Q, P = _split(X)
    r2 = np.sum(Q ** 2, axis=1)
    J3 = np.sum(Q * P, axis=1)
    expected = 0.5 * (1 + kappa * r2) * (np.sum(P ** 2, axis=1) + kappa * J3 ** 2) - k / np.sqrt(r2)
    np.testing.assert_allclose(entry.evaluate(X), expected, rtol=1e-12)
    assert entry.metric.name == "beltrami"


def test_curved_box_shrinks():
    """Test the curved box keeps |kappa| N q^2 below the margin."""
    assert curved_evans(kappa=0.3, N=2).box.q_high == pytest.approx(np.sqrt(1.5))
    assert curved_evans(kappa=0.0, N=2).box.q_high == 1.5
    assert free_constant_curvature(BELTRAMI, -0.2, 3).box.q_high == pytest.approx(np.sqrt(1.5))
    with pytest.raises(EmptySamplingBox):
        curved_evans(kappa=10.0, N=3)
    with pytest.raises(ParameterMismatch):
        curved_evans(chart="stereo")


def test_taub_nut_is_multifold_kepler():
    """Test Taub-NUT equals the multifold Kepler space with nu = 1."""
    m = 0.4
    first = taub_nut(m)
    second = multifold_kepler(4 * m, 1.0, 1.0)
    X = first.box.sample(3, 30, rng_for(6))
    np.testing.assert_allclose(first.evaluate(X), second.evaluate(X), rtol=1e-12)


def test_darboux_iiib_form():
    """Test p^2/(2(k + q^2)) for the type IIIb space."""
    entry = darboux("iiib", N=3, params={"k": 2.0})
    X = entry.box.sample(3, 30, rng_for(7))
    Q, P = _split(X)
    expected = np.sum(P ** 2, axis=1) / (2 * (2.0 + np.sum(Q ** 2, axis=1)))
    np.testing.assert_allclose(entry.evaluate(X), expected, rtol=1e-12)
    with pytest.raises(UnknownSystem):
        darboux("v")


def test_darboux_boxes_avoid_singular_radius():
    """Test the type I, II and IV boxes keep ln|q| and sin(ln|q|) away from zero."""
    for variant in ("i", "ii"):
        assert darboux(variant).box.q_low == 0.9
    box = darboux("iv").box
    assert (box.q_low, box.q_high) == (1.0, 1.8)
    assert darboux("iv").guards


def test_conformal_factor_must_be_positive():
    """Test a conformal factor changing sign on the box is rejected."""
    with pytest.raises(NonMetric):
        conformal_free(f=1 - symbol(RADIUS))
    entry = conformal_free(f=sqrt(1 + symbol(RADIUS)))
    assert entry.metric is not None


def test_user_functions_are_checked():
    """Test stray placeholders and a wrong g(0)."""
    with pytest.raises(UnresolvedSymbol):
        evans(F=s + symbol("y"))
    with pytest.raises(ParameterMismatch):
        deformed_free(g=2 + symbol("x"))
    with pytest.raises(ParameterMismatch):
        evans(b=[0.1, 0.2])
    with pytest.raises(ParameterMismatch):
        build("sl2.evans", functions={"G": s})
    with pytest.raises(ParameterMismatch):
        build("sl2.evans", options={"chart": POINCARE})
    with pytest.raises(UnknownSystem):
        build("sl2.nothing")


def test_build_passes_options_and_parameters():
    """Test the registry maps flat parameters and options onto constructors."""
    entry = build("sl2.curved_evans", N=2, params={"kappa": -0.2, "b": [0.1, 0.2]}, options={"chart": BELTRAMI})
    assert entry.params["kappa"] == -0.2
    assert list(entry.params["b"]) == [0.1, 0.2]
    assert entry.metric.name == "beltrami"
    scaled = build("sl2.evans", params={"omega": 3.0}, functions={"F": param("omega") * s})
    assert scaled.params["omega"] == 3.0


def test_deformed_potential_small_z_limit():
    """Test the deformed Evans system approaches the flat one as z -> 0."""
    b = [0.1, 0.2, 0.3]
    deformed = deformed_potential(U=s / 2, z=1e-7, b=b)
    flat = evans(F=s / 2, b=b)
    X = flat.box.sample(3, 30, rng_for(8))
    np.testing.assert_allclose(deformed.evaluate(X), flat.evaluate(X), rtol=1e-5)


def test_em_fields_are_consistent():
    """Test E = -grad psi, vanishing magnetic field and minimal coupling."""
    F, G, e, b = s / 2, 0.3 + 0.1 * s, 1.5, [0.2, 0.1, 0.4]
    fields = em_fields_3d(F, G, e, b)
    X = np.hstack([rng_for(9).uniform(0.3, 1.2, size=(20, 3)), rng_for(10).uniform(-1, 1, size=(20, 3))])
    residuals = field_residuals(fields, X)
    assert residuals["electric"] <= 1e-10
    assert residuals["magnetic"] <= 1e-12
    entry = em_flat(F, G, e, b)
    assert minimal_coupling_residual(entry, fields, X) <= 1e-12


def test_h6_em_minimal_coupling():
    """Test the h6 potentials rebuild the electromagnetic Hamiltonian."""
    F, G, R = 0.2 + 0.1 * s, 0.3 * symbol("a"), s / 2
    lam = [1.0, 0.6, -0.8]
    fields = h6_em_fields_3d(F, G, R, e=2.0, lam=lam)
    entry = h6_em(F, G, R, lam, N=3)
    X = entry.box.sample(3, 30, rng_for(11))
    assert minimal_coupling_residual(entry, fields, X) <= 1e-12


def test_h6_geodesic_metric_check():
    """Test the kinetic form is checked for positive-definiteness."""
    assert not h6_geodesic().non_metric
    flagged = h6_geodesic(F=const(-0.5))
    assert flagged.non_metric
    assert any(note.startswith("non-metric") for note in flagged.notes)
    with_potential = h6_geodesic(U=s / 2)
    assert "U" in with_potential.user_functions


def test_extras_have_no_integral_family():
    """Test the extra systems expose only their energy."""
    for name in ("cg", "cg_general", "cg_gd", "cg_deformed", "h4_chain", "rs_like"):
        entry = extras(name, N=3)
        assert entry.integrals.is_empty()
        assert entry.claimed_class == SystemClass.INTEGRABLE
        assert entry.notes
    assert list(extras("cg_general", N=4).params["kappa"]) == pytest.approx([0.1, 0.233333, 0.366667, 0.5], rel=1e-5)
    assert extras("h4_chain").box.p_low == 0.2
    with pytest.raises(UnknownSystem):
        extras("toda")


def test_calogero_gaudin_value():
    """Test the Calogero-Gaudin Hamiltonian at a fixed point."""
    entry = extras("cg", N=2)
    x = np.array([[0.4, 0.1, 0.5, -0.3]])
    expected = 2 * 0.5 * -0.3 * (1 - np.cos(0.3))
    assert entry.evaluate(x)[0] == pytest.approx(expected, rel=1e-12)
    deformed = extras("cg_deformed", N=2, params={"z": 1e-9})
    assert deformed.evaluate(x)[0] == pytest.approx(expected, rel=1e-6)
