"""
Catalog of Hamiltonian families with coalgebra symmetry.

Every constructor returns a CatalogEntry holding the realized Hamiltonian, its
integral family, a sampling box that avoids the family's singular loci and the
class the construction claims. User functions are Expressions in placeholder
symbols:

    s  squared radius q^2 (J_- for sl(2,R), B_- for h6)
    r  radius |q|
    x  deformed argument z q^2
    a  projection lambda.q (A_- for h6)
"""
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from .algebras import (
    IntegralFamily,
    h6_generators,
    h6_integrals,
    sl2_generators,
    sl2_integrals,
    sl2z_generators,
    sl2z_integrals,
)
from .errors import (
    DimensionMismatch,
    NonMetric,
    ParameterMismatch,
    UnknownSystem,
    UnresolvedSymbol,
)
from .expr import (
    Expression,
    ParamSet,
    as_expr,
    const,
    cos,
    cosh,
    differentiate,
    esum,
    evaluate_batch,
    exp,
    free_symbols,
    jets_batch,
    ln,
    p,
    param,
    parameters,
    power,
    q,
    sin,
    sinhc,
    sqrt,
    square,
    substitute,
    symbol,
)
from .geometry import (
    DEFORMED_ARGUMENT,
    RADIUS,
    MetricField,
    beltrami_metric,
    check_positive_definite,
    conformal_curvature_expr,
    conformal_metric,
    deformed_curvature_expr,
    deformed_metric,
    flat_metric,
)
from .models import SystemClass
from .sampling import DEFAULT_BOX, SamplingBox, rng_for

logger = structlog.get_logger()

SQUARED = "s"
LINEAR = "a"

POINCARE = "poincare"
BELTRAMI = "beltrami"
CHARTS = (POINCARE, BELTRAMI)

# |kappa| N q_max^2 stays below this on curved boxes
CURVED_BOX_MARGIN = 0.9


@dataclass(frozen=True)
class CatalogEntry:
    """A realized Hamiltonian with its integrals and sampling metadata."""
    id: str
    N: int
    hamiltonian: Expression
    integrals: IntegralFamily
    params: ParamSet
    box: SamplingBox
    claimed_class: SystemClass
    description: str
    notes: Tuple[str, ...] = ()
    user_functions: Tuple[str, ...] = ()
    metric: Optional[MetricField] = None
    closed_curvature: Optional[Expression] = None
    guards: Tuple[Expression, ...] = ()
    non_metric: bool = False
    # strongest class the built integral family can certify, when weaker than the claim
    certifiable_class: Optional[SystemClass] = None

    @property
    def expected_class(self) -> SystemClass:
        expected = self.certifiable_class or self.claimed_class
        # with two sites 2N-3 = N-1 integrals only give integrability
        if self.N <= 2 and expected.at_least(SystemClass.INTEGRABLE):
            return SystemClass.INTEGRABLE
        return expected

    def evaluate(self, X) -> np.ndarray:
        return evaluate_batch(self.hamiltonian, X, self.params)

    def with_box(self, box: SamplingBox) -> "CatalogEntry":
        return replace(self, box=box)

    def with_notes(self, *notes: str) -> "CatalogEntry":
        return replace(self, notes=self.notes + tuple(notes))


@dataclass(frozen=True)
class EMFields:
    """Scalar potential, vector potential and (when known) electric field over q."""
    psi: Expression
    A: Tuple[Expression, ...]
    E: Optional[Tuple[Expression, ...]] = None
    params: ParamSet = field(default_factory=ParamSet)


# Composition helpers
def _apply(fn, **arguments: Expression) -> Expression:
    """Bind a user function's placeholders; anything else is rejected."""
    fn = as_expr(fn)
    stray = sorted(name for name, site in free_symbols(fn) if site is not None or name not in arguments)
    if stray:
        raise UnresolvedSymbol(stray[0])
    return substitute(fn, arguments)


def _realize(H: Expression, generators: Mapping[str, Expression]) -> Expression:
    stray = sorted(name for name, site in free_symbols(H) if site is not None or name not in generators)
    if stray:
        raise UnresolvedSymbol(stray[0])
    return substitute(H, generators)


def _gens(*names: str) -> List[Expression]:
    return [symbol(name) for name in names]


def _scalars(params: Optional[Mapping[str, float]]) -> Dict[str, float]:
    return {k: v for k, v in dict(params or {}).items()}


def _entry_params(family: IntegralFamily, *extra: Mapping[str, float]) -> ParamSet:
    values = dict(family.params)
    for item in extra:
        values.update(item)
    return ParamSet(values)


def _centrifugal_guards(N: int, b: Optional[Sequence[float]]) -> Tuple[Expression, ...]:
    if b is None or not any(float(v) for v in b):
        return ()
    return tuple(q(i) for i in range(N))


def _sites(N: int, b: Optional[Sequence[float]]) -> List[float]:
    values = [0.0] * N if b is None else [float(v) for v in b]
    if len(values) != N:
        raise ParameterMismatch(f"'b' needs {N} entries, got {len(values)}")
    return values


def _sample_positive(fn: Expression, N: int, box: SamplingBox, params: ParamSet, what: str) -> None:
    X = box.sample(N, 200, rng_for(0, N))
    values = evaluate_batch(fn, X, params)
    if not np.all(values > 0):
        raise NonMetric(f"{what} must be positive on the sampling box")


# sl(2,R) flat systems
def evans(
    F=None,
    b: Optional[Sequence[float]] = None,
    N: int = 3,
    params: Optional[Mapping[str, float]] = None,
) -> CatalogEntry:
    """p^2/2 + F(q^2) + sum b_i/(2 q_i^2)."""
    scalars = {"omega": 1.0, **_scalars(params)}
    F = symbol(SQUARED) * square(param("omega")) / 2 if F is None else F
    Jm, Jp = _gens("Jm", "Jp")
    H = Jp / 2 + _apply(F, s=Jm)
    b = _sites(N, b)
    family = sl2_integrals(N, b)
    return CatalogEntry(
        id="sl2.evans",
        N=N,
        hamiltonian=_realize(H, sl2_generators(N)),
        integrals=family,
        params=_entry_params(family, scalars),
        box=DEFAULT_BOX,
        claimed_class=SystemClass.QMS,
        description="flat Evans system: central potential F(q^2) plus centrifugal barriers",
        user_functions=("F",),
        metric=flat_metric(N),
        closed_curvature=const(0.0),
        guards=_centrifugal_guards(N, b),
    )


def em_flat(
    F=None,
    G=None,
    e: float = 1.0,
    b: Optional[Sequence[float]] = None,
    N: int = 3,
    params: Optional[Mapping[str, float]] = None,
) -> CatalogEntry:
    """p^2/2 - e (q.p) G(q^2) + e F(q^2) + sum b_i/(2 q_i^2)."""
    scalars = {"omega": 1.0, **_scalars(params), "e": e}
    F = symbol(SQUARED) * square(param("omega")) / 2 if F is None else F
    G = const(0.2) if G is None else G
    Jm, Jp, J3 = _gens("Jm", "Jp", "J3")
    charge = param("e")
    H = Jp / 2 - charge * J3 * _apply(G, s=Jm) + charge * _apply(F, s=Jm)
    b = _sites(N, b)
    family = sl2_integrals(N, b)
    return CatalogEntry(
        id="sl2.em",
        N=N,
        hamiltonian=_realize(H, sl2_generators(N)),
        integrals=family,
        params=_entry_params(family, scalars),
        box=DEFAULT_BOX,
        claimed_class=SystemClass.QMS,
        description="velocity-dependent electromagnetic Hamiltonian with vanishing magnetic field",
        user_functions=("F", "G"),
        metric=flat_metric(N),
        closed_curvature=const(0.0),
        guards=_centrifugal_guards(N, b),
    )


def em_fields_3d(
    F=None,
    G=None,
    e: float = 1.0,
    b: Optional[Sequence[float]] = None,
    params: Optional[Mapping[str, float]] = None,
) -> EMFields:
    """psi = F - (e/2) q^2 G^2 + sum b_i/(2 e q_i^2), A = q G, E = (e G^2 + 2 e q^2 G G' - 2 F') q + b_i/(e q_i^3)."""
    N = 3
    F = symbol(SQUARED) * square(param("omega")) / 2 if F is None else as_expr(F)
    G = const(0.2) if G is None else as_expr(G)
    _apply(F, s=symbol(SQUARED))
    _apply(G, s=symbol(SQUARED))
    charge = param("e")
    s = esum(square(q(i)) for i in range(N))
    Fs, Gs = _apply(F, s=s), _apply(G, s=s)
    dF, dG = _apply(differentiate(F, SQUARED), s=s), _apply(differentiate(G, SQUARED), s=s)
    b_sym = [param("b", i) for i in range(N)]
    psi = Fs - charge / 2 * s * square(Gs) + esum(b_sym[i] / (2 * charge * square(q(i))) for i in range(N))
    A = tuple(q(i) * Gs for i in range(N))
    radial = charge * square(Gs) + 2 * charge * s * Gs * dG - 2 * dF
    E = tuple(radial * q(i) + b_sym[i] / (charge * power(q(i), 3)) for i in range(N))
    values = {"omega": 1.0, **_scalars(params), "e": e, "b": _sites(N, b)}
    return EMFields(psi=psi, A=A, E=E, params=ParamSet(values))


def field_residuals(fields: EMFields, X: np.ndarray) -> Dict[str, float]:
    """Max |E + grad psi| and max |curl A| over the rows of X."""
    N = len(fields.A)
    jets = jets_batch([fields.psi, *fields.A], X, fields.params)
    grad_psi = jets[0].gradients[:, :N]
    dA = np.stack([item.gradients[:, :N] for item in jets[1:]], axis=1)  # dA[p, i, k] = d_k A_i
    curl = np.stack(
        [dA[:, 2, 1] - dA[:, 1, 2], dA[:, 0, 2] - dA[:, 2, 0], dA[:, 1, 0] - dA[:, 0, 1]], axis=1
    )
    result = {"magnetic": float(np.max(np.abs(curl)))}
    if fields.E is not None:
        E = np.stack([evaluate_batch(component, X, fields.params) for component in fields.E], axis=1)
        scale = 1.0 + np.abs(grad_psi)
        result["electric"] = float(np.max(np.abs(E + grad_psi) / scale))
    return result


def minimal_coupling_residual(entry: CatalogEntry, fields: EMFields, X: np.ndarray) -> float:
    """Max relative |H - (p - e A)^2/2 - e psi| over the rows of X."""
    N = len(fields.A)
    charge = param("e")
    coupled = esum(square(p(i) - charge * fields.A[i]) for i in range(N)) / 2 + charge * fields.psi
    params = entry.params.merged(fields.params)
    H = evaluate_batch(entry.hamiltonian, X, params)
    rebuilt = evaluate_batch(coupled, X, params)
    return float(np.max(np.abs(H - rebuilt) / (1.0 + np.abs(H))))


# sl(2,R) constant curvature
def _curved_box(kappa: float, N: int, box: SamplingBox = DEFAULT_BOX) -> SamplingBox:
    if kappa == 0.0:
        return box
    q_high = min(box.q_high, math.sqrt(CURVED_BOX_MARGIN / (abs(kappa) * N)))
    return box.with_q(q_high=q_high)


def _kinetic(chart: str) -> Expression:
    Jm, Jp, J3 = _gens("Jm", "Jp", "J3")
    kappa = param("kappa")
    if chart == POINCARE:
        return square(1 + kappa * Jm) * Jp / 2
    if chart == BELTRAMI:
        return (1 + kappa * Jm) * (Jp + kappa * square(J3)) / 2
    raise ParameterMismatch(f"unknown chart '{chart}', expected one of {CHARTS}")


def _chart_geometry(chart: str, N: int, params: ParamSet) -> Tuple[MetricField, Expression]:
    if chart == POINCARE:
        f = 1 / (1 + param("kappa") * square(symbol(RADIUS)))
        return conformal_metric(f, N, params, "poincare"), conformal_curvature_expr(f, N)
    return beltrami_metric(N, params), N * (N - 1) * param("kappa")


def _curved_guards(N: int, b: Sequence[float], chart: str) -> Tuple[Expression, ...]:
    Jm = esum(square(q(i)) for i in range(N))
    kappa = param("kappa")
    guards = [1 + kappa * Jm]
    if chart == POINCARE:
        guards.append(1 - kappa * Jm)
    return tuple(guards) + _centrifugal_guards(N, b)


def curved_evans(
    U=None,
    kappa: float = 0.1,
    b: Optional[Sequence[float]] = None,
    N: int = 3,
    chart: str = POINCARE,
    params: Optional[Mapping[str, float]] = None,
    system_id: str = "sl2.curved_evans",
    claimed_class: SystemClass = SystemClass.QMS,
    certifiable_class: Optional[SystemClass] = None,
    description: str = "curved Evans system on a space of constant curvature kappa",
    notes: Tuple[str, ...] = (),
) -> CatalogEntry:
    """T(chart) + U(radial function) with the chart's squared geodesic radius argument."""
    scalars = {"omega": 1.0, **_scalars(params), "kappa": kappa}
    U = symbol(SQUARED) * square(param("omega")) / 2 if U is None else U
    Jm = symbol("Jm")
    argument = 4 * Jm / square(1 - param("kappa") * Jm) if chart == POINCARE else Jm
    H = _kinetic(chart) + _apply(U, s=argument)
    b = _sites(N, b)
    family = sl2_integrals(N, b)
    entry_params = _entry_params(family, scalars)
    metric, closed = _chart_geometry(chart, N, entry_params)
    return CatalogEntry(
        id=system_id,
        N=N,
        hamiltonian=_realize(H, sl2_generators(N)),
        integrals=family,
        params=entry_params,
        box=_curved_box(kappa, N),
        claimed_class=claimed_class,
        certifiable_class=certifiable_class,
        description=f"{description} ({chart} chart)",
        notes=notes,
        user_functions=("U",),
        metric=metric,
        closed_curvature=closed,
        guards=_curved_guards(N, b, chart),
    )


def free_constant_curvature(chart: str = POINCARE, kappa: float = 0.1, N: int = 3) -> CatalogEntry:
    """Geodesic motion on the sphere (kappa > 0) or hyperbolic space (kappa < 0)."""
    return curved_evans(
        U=const(0.0),
        kappa=kappa,
        N=N,
        chart=chart,
        system_id=f"sl2.free_{chart}",
        description="free motion on a space of constant curvature kappa",
    )


def curved_sw(
    omega: float = 1.0,
    kappa: float = 0.1,
    b: Optional[Sequence[float]] = None,
    N: int = 3,
    chart: str = POINCARE,
) -> CatalogEntry:
    """Higgs oscillator plus centrifugal terms on a curved space."""
    # U(4 q^2/(1 - kappa q^2)^2) = omega^2 q^2 / (2 (1 - kappa q^2)^2) in Poincare coordinates
    scale = 8 if chart == POINCARE else 2
    return curved_evans(
        U=square(param("omega")) * symbol(SQUARED) / scale,
        kappa=kappa,
        b=b,
        N=N,
        chart=chart,
        params={"omega": omega},
        system_id="sl2.curved_sw",
        claimed_class=SystemClass.MS,
        certifiable_class=SystemClass.QMS,
        description="curved Smorodinsky-Winternitz system",
        notes=("maximal superintegrability relies on an extra integral not built here; verified class is QMS",),
    )


def curved_kc(
    k: float = 1.0,
    kappa: float = 0.1,
    b: Optional[Sequence[float]] = None,
    N: int = 3,
    chart: str = POINCARE,
) -> CatalogEntry:
    """Kepler-Coulomb potential plus centrifugal terms on a curved space."""
    # -k (J_-/(1 - kappa J_-)^2)^(-1/2) is -2k/sqrt(s) in the Poincare radial argument
    scale = 2 if chart == POINCARE else 1
    return curved_evans(
        U=-scale * param("k") / sqrt(symbol(SQUARED)),
        kappa=kappa,
        b=b,
        N=N,
        chart=chart,
        params={"k": k},
        system_id="sl2.curved_kc",
        claimed_class=SystemClass.MS,
        certifiable_class=SystemClass.QMS,
        description="curved generalized Kepler-Coulomb system",
        notes=("maximal superintegrability relies on a quartic integral not built here; verified class is QMS",),
    )


# sl(2,R) conformally flat spaces
def _conformal(
    system_id: str,
    description: str,
    H: Expression,
    f: Expression,
    N: int,
    b: Sequence[float],
    scalars: Mapping[str, float],
    box: SamplingBox,
    user_functions: Tuple[str, ...],
    guards: Tuple[Expression, ...] = (),
    claimed_class: SystemClass = SystemClass.QMS,
    notes: Tuple[str, ...] = (),
) -> CatalogEntry:
    family = sl2_integrals(N, b)
    params = _entry_params(family, scalars)
    f_of_q = _apply(f, r=sqrt(esum(square(q(i)) for i in range(N))))
    _sample_positive(f_of_q, N, box, params, "conformal factor")
    return CatalogEntry(
        id=system_id,
        N=N,
        hamiltonian=_realize(H, sl2_generators(N)),
        integrals=family,
        params=params,
        box=box,
        claimed_class=claimed_class,
        description=description,
        notes=notes,
        user_functions=user_functions,
        metric=conformal_metric(f, N, params, system_id),
        closed_curvature=conformal_curvature_expr(f, N),
        guards=(f_of_q,) + tuple(guards) + _centrifugal_guards(N, b),
    )


def conformal_free(
    f=None,
    N: int = 3,
    params: Optional[Mapping[str, float]] = None,
    box: SamplingBox = DEFAULT_BOX,
) -> CatalogEntry:
    """p^2 / (2 f(|q|)^2): geodesic flow of f(|q|)^2 dq^2."""
    scalars = {"k": 1.0, **_scalars(params)}
    f = sqrt(param("k") + square(symbol(RADIUS))) if f is None else as_expr(f)
    Jm, Jp = _gens("Jm", "Jp")
    H = Jp / (2 * square(_apply(f, r=sqrt(Jm))))
    return _conformal(
        "sl2.conformal_free",
        "geodesic motion on a spherically symmetric space f(|q|)^2 dq^2",
        H, f, N, [0.0] * N, scalars, box, ("f",),
    )


def conformal_potential(
    f=None,
    U=None,
    b: Optional[Sequence[float]] = None,
    N: int = 3,
    params: Optional[Mapping[str, float]] = None,
    box: SamplingBox = DEFAULT_BOX,
) -> CatalogEntry:
    """J_+/(2 f^2) + U(|q|), centrifugal terms included through J_+."""
    scalars = {"k": 1.0, "omega": 1.0, **_scalars(params)}
    f = sqrt(param("k") + square(symbol(RADIUS))) if f is None else as_expr(f)
    U = square(param("omega") * symbol(RADIUS)) / 2 if U is None else U
    Jm, Jp = _gens("Jm", "Jp")
    r = sqrt(Jm)
    H = Jp / (2 * square(_apply(f, r=r))) + _apply(U, r=r)
    return _conformal(
        "sl2.conformal_potential",
        "central potential and centrifugal terms on a spherically symmetric space",
        H, f, N, _sites(N, b), scalars, box, ("f", "U"),
    )


DARBOUX_VARIANTS = ("i", "ii", "iiia", "iiib", "iv")


def _darboux_data(variant: str) -> Tuple[Expression, Expression, str]:
    """(T over J_-, J_+; f(r); description) for one Darboux space."""
    Jm, Jp = _gens("Jm", "Jp")
    r = symbol(RADIUS)
    log_radius = ln(sqrt(Jm))
    if variant == "i":
        return Jm * Jp / (2 * log_radius), sqrt(ln(r)) / r, "Darboux space of type I"
    if variant == "ii":
        kinetic = Jm * square(log_radius) * Jp / (2 * (1 + square(log_radius)))
        return kinetic, sqrt(1 + square(ln(r))) / (r * ln(r)), "Darboux space of type II"
    if variant == "iiia":
        return square(Jm) * Jp / (2 * (1 + sqrt(Jm))), sqrt(1 + r) / square(r), "Darboux space of type IIIa"
    if variant == "iiib":
        k = param("k")
        return Jp / (2 * (k + Jm)), sqrt(k + square(r)), "Darboux space of type IIIb"
    if variant == "iv":
        a = param("a")
        kinetic = Jm * square(sin(log_radius)) * Jp / (2 * (a + cos(log_radius)))
        f = sqrt(a + cos(ln(r))) / (r * sin(ln(r)))
        return kinetic, f, "Darboux space of type IV"
    raise UnknownSystem(f"unknown Darboux variant '{variant}', expected one of {DARBOUX_VARIANTS}")


def darboux(variant: str, N: int = 3, params: Optional[Mapping[str, float]] = None) -> CatalogEntry:
    """Geodesic flow on the N-dimensional spherically symmetric Darboux spaces."""
    scalars = {"k": 1.0, "a": 2.0, **_scalars(params)}
    kinetic, f, description = _darboux_data(variant)
    box = DEFAULT_BOX
    guards: Tuple[Expression, ...] = ()
    log_radius = ln(sqrt(esum(square(q(i)) for i in range(N))))
    if variant in ("i", "ii"):
        box = SamplingBox(0.9, 1.5)
        guards = (log_radius,)
    elif variant == "iv":
        box = SamplingBox(1.0, 1.8)
        guards = (sin(log_radius),)
    notes = ("an extra quadratic integral exists but is not built here",) if variant.startswith("iii") else ()
    return _conformal(
        f"darboux.{variant}", description, kinetic, f, N, [0.0] * N, scalars, box, (), guards, notes=notes,
    )


def multifold_kepler(alpha: float = 1.0, beta: float = 1.0, nu: float = 2.0, N: int = 3) -> CatalogEntry:
    """Iwai-Katayama generalization of the Taub-NUT space."""
    Jm, Jp = _gens("Jm", "Jp")
    a, b, n = param("alpha"), param("beta"), param("nu")
    H = power(Jm, 1 - 1 / (2 * n)) * Jp / (2 * (a + b * power(Jm, 1 / (2 * n))))
    r = symbol(RADIUS)
    f = sqrt((a + b * power(r, 1 / n)) / power(r, 2 - 1 / n))
    scalars = {"alpha": alpha, "beta": beta, "nu": nu}
    return _conformal(
        "sl2.multifold_kepler", "multifold Kepler space", H, f, N, [0.0] * N, scalars, DEFAULT_BOX, (),
    )


def taub_nut(m: float = 1.0, N: int = 3) -> CatalogEntry:
    """sqrt(J_-) J_+ / (2 (4m + sqrt(J_-)))."""
    Jm, Jp = _gens("Jm", "Jp")
    mass = param("m")
    H = sqrt(Jm) * Jp / (2 * (4 * mass + sqrt(Jm)))
    r = symbol(RADIUS)
    f = sqrt((4 * mass + r) / r)
    return _conformal("sl2.taub_nut", "generalized Taub-NUT space", H, f, N, [0.0] * N, {"m": m}, DEFAULT_BOX, ())


# sl_z(2,R)
def _check_g(g: Expression, params: ParamSet) -> None:
    at_origin = evaluate_batch(_apply(g, x=const(0.0)), np.zeros((1, 2)), params)[0]
    if abs(at_origin - 1.0) > 1e-12:
        raise ParameterMismatch(f"g(0) must equal 1, got {at_origin!r}")


def _deformed(
    system_id: str,
    description: str,
    g,
    U,
    z: float,
    b: Sequence[float],
    N: int,
    scalars: Mapping[str, float],
    user_functions: Tuple[str, ...],
) -> CatalogEntry:
    g = const(1.0) if g is None else as_expr(g)
    family = sl2z_integrals(N, b, z)
    params = _entry_params(family, scalars)
    _apply(g, x=symbol(DEFORMED_ARGUMENT))
    _check_g(g, params)
    Jm, Jp = _gens("Jm", "Jp")
    H = Jp * _apply(g, x=param("z") * Jm) / 2
    if U is not None:
        H = H + _apply(U, s=Jm)
    return CatalogEntry(
        id=system_id,
        N=N,
        hamiltonian=_realize(H, sl2z_generators(N)),
        integrals=family,
        params=params,
        box=DEFAULT_BOX,
        claimed_class=SystemClass.QMS,
        description=description,
        user_functions=user_functions,
        metric=deformed_metric(g, N, params),
        closed_curvature=deformed_curvature_expr(g, N),
        guards=_centrifugal_guards(N, b),
    )


def deformed_free(g=None, z: float = 0.1, N: int = 3, params: Optional[Mapping[str, float]] = None) -> CatalogEntry:
    """J_+ g(z J_-) / 2 on the deformed realization."""
    return _deformed(
        "sl2z.free",
        "geodesic flow on a deformed coalgebra space",
        g, None, z, [0.0] * N, N, _scalars(params), ("g",),
    )


def deformed_potential(
    g=None,
    U=None,
    z: float = 0.1,
    b: Optional[Sequence[float]] = None,
    N: int = 3,
    params: Optional[Mapping[str, float]] = None,
) -> CatalogEntry:
    """J_+ g(z J_-) / 2 + U(J_-) with deformed centrifugal terms.

    U takes J_- itself as its argument, not z J_-, so that z -> 0 gives the
    flat Evans system with the same U.
    """
    scalars = {"omega": 1.0, **_scalars(params)}
    U = square(param("omega")) * symbol(SQUARED) / 2 if U is None else U
    return _deformed(
        "sl2z.potential",
        "deformed Evans system with deformed centrifugal terms",
        g, U, z, _sites(N, b), N, scalars, ("g", "U"),
    )


# h6
def _h6_entry(
    system_id: str,
    description: str,
    H: Expression,
    lam: Optional[Sequence[float]],
    N: int,
    scalars: Mapping[str, float],
    user_functions: Tuple[str, ...],
    notes: Tuple[str, ...] = (),
) -> CatalogEntry:
    family = h6_integrals(N, lam)
    return CatalogEntry(
        id=system_id,
        N=N,
        hamiltonian=_realize(H, h6_generators(N)),
        integrals=family,
        params=_entry_params(family, scalars),
        box=DEFAULT_BOX,
        claimed_class=SystemClass.QUASI_INTEGRABLE,
        description=description,
        notes=notes,
        user_functions=user_functions,
    )


def _h6_function(fn) -> Expression:
    return _apply(fn, a=symbol("Am"), s=symbol("Bm"))


def h6_natural(
    F=None,
    lam: Optional[Sequence[float]] = None,
    N: int = 4,
    params: Optional[Mapping[str, float]] = None,
) -> CatalogEntry:
    """p^2/2 + F(lambda.q, q^2)."""
    scalars = {"omega": 1.0, **_scalars(params)}
    if F is None:
        F = square(param("omega")) * symbol(SQUARED) / 2 + 0.3 * symbol(LINEAR)
    H = symbol("Bp") / 2 + _h6_function(F)
    return _h6_entry("h6.natural", "natural system with a non-central potential F(lambda.q, q^2)", H, lam, N, scalars, ("F",))


def h6_em(
    F=None,
    G=None,
    R=None,
    lam: Optional[Sequence[float]] = None,
    N: int = 4,
    params: Optional[Mapping[str, float]] = None,
) -> CatalogEntry:
    """B_+/2 + K F + A_+ G + R, all functions of (A_-, B_-)."""
    scalars = {"omega": 1.0, **_scalars(params)}
    F = const(0.1) if F is None else F
    G = 0.2 * symbol(LINEAR) if G is None else G
    R = square(param("omega")) * symbol(SQUARED) / 2 if R is None else R
    K, Ap, Bp = _gens("K", "Ap", "Bp")
    H = Bp / 2 + K * _h6_function(F) + Ap * _h6_function(G) + _h6_function(R)
    return _h6_entry("h6.em", "electromagnetic Hamiltonian linear in the momenta", H, lam, N, scalars, ("F", "G", "R"))


def h6_em_fields_3d(
    F=None,
    G=None,
    R=None,
    e: float = 1.0,
    lam: Optional[Sequence[float]] = None,
    params: Optional[Mapping[str, float]] = None,
) -> EMFields:
    """Potentials A_i = -(q_i F + lambda_i G)/e and the scalar psi for three sites."""
    N = 3
    F = const(0.1) if F is None else as_expr(F)
    G = 0.2 * symbol(LINEAR) if G is None else as_expr(G)
    R = square(param("omega")) * symbol(SQUARED) / 2 if R is None else as_expr(R)
    generators = h6_generators(N)
    Am, Bm, M = generators["Am"], generators["Bm"], generators["M"]
    Fq, Gq, Rq = (_apply(fn, a=Am, s=Bm) for fn in (F, G, R))
    charge = param("e")
    A = tuple(-(q(i) * Fq + param("lam", i) * Gq) / charge for i in range(N))
    psi = Rq / charge - M * Fq / (2 * charge) - (Bm * square(Fq) + 2 * Am * Fq * Gq + M * square(Gq)) / (2 * charge)
    values = {"omega": 1.0, **_scalars(params), "e": e, "lam": [1.0] * N if lam is None else list(lam)}
    return EMFields(psi=psi, A=A, params=ParamSet(values))


def h6_geodesic(
    F=None,
    G=None,
    R=None,
    S=None,
    U=None,
    lam: Optional[Sequence[float]] = None,
    N: int = 4,
    params: Optional[Mapping[str, float]] = None,
    check_points: int = 100,
) -> CatalogEntry:
    """B_+ F + A_+^2 G + (K + M/2)^2 R + (K + M/2) A_+ S (+ U), quadratic in the momenta."""
    scalars = _scalars(params)
    F = 0.5 + 0.05 * symbol(SQUARED) if F is None else F
    G = const(0.1) if G is None else G
    R = const(0.1) if R is None else R
    S = 0.02 * symbol(LINEAR) if S is None else S
    K, Ap, Bp, M = _gens("K", "Ap", "Bp", "M")
    shifted = K + M / 2
    H = (
        Bp * _h6_function(F)
        + square(Ap) * _h6_function(G)
        + square(shifted) * _h6_function(R)
        + shifted * Ap * _h6_function(S)
    )
    user_functions: Tuple[str, ...] = ("F", "G", "R", "S")
    if U is not None:
        H = H + _h6_function(U)
        user_functions += ("U",)
    entry = _h6_entry("h6.geodesic", "geodesic flow on an h6 coalgebra space", H, lam, N, scalars, user_functions)
    # the kinetic part must define a metric: positive-definite p-Hessian on the box
    X = entry.box.sample(N, check_points, rng_for(1, N))
    hessians = jets_batch([entry.hamiltonian], X, entry.params, order=2)[0].hessians[:, N:, N:]
    try:
        check_positive_definite(hessians, X[:, :N], "h6 kinetic form")
    except NonMetric as exc:
        logger.warning("Quadratic form is not a metric on the sampling box", system_id=entry.id, error=str(exc))
        return replace(entry, non_metric=True, notes=entry.notes + (f"non-metric: {exc}",))
    return entry


# Integrable systems outside the bundled coalgebras
EXTRA_SYSTEMS = ("cg", "cg_general", "cg_gd", "cg_deformed", "h4_chain", "rs_like")


def _pairs(N: int):
    return ((i, j) for i in range(N) for j in range(i + 1, N))


def _cg(momenta: Sequence[Expression], N: int) -> Expression:
    return esum(2 * momenta[i] * momenta[j] * (1 - cos(q(i) - q(j))) for i, j in _pairs(N))


def _extra_hamiltonian(system: str, N: int) -> Tuple[Expression, str]:
    if system == "cg":
        return _cg([p(i) for i in range(N)], N), "Calogero-Gaudin system"
    if system == "cg_general":
        kappa = [param("kappa", i) for i in range(N)]
        total = square(esum(p(i) for i in range(N)))
        coupling = esum(
            p(i) * p(j) * ((kappa[i] + kappa[j]) * cos(q(i) - q(j)) - (kappa[i] - kappa[j]) * cos(q(i) + q(j)))
            for i in range(N) for j in range(N)
        )
        return total + coupling / 2, "generalized Calogero-Gaudin system"
    if system == "cg_gd":
        b = param("b")
        H = esum(
            -p(i) * p(j) * square(q(i) - q(j)) - b * (p(i) - p(j)) * (q(i) - q(j)) for i, j in _pairs(N)
        )
        return H + square(b) * N * N / 4, "Calogero-Gaudin system in Gelfand-Dyson variables"
    if system == "cg_deformed":
        z = param("z")
        momenta = [
            p(k) * sinhc(z * p(k) / 2)
            * exp(-z / 2 * esum(p(i) for i in range(k)) + z / 2 * esum(p(j) for j in range(k + 1, N)))
            for k in range(N)
        ]
        return _cg(momenta, N), "deformed Calogero-Gaudin system with non-local momenta"
    if system == "h4_chain":
        lam, mu = param("lam"), param("mu")
        H = (lam + mu) * esum(p(i) for i in range(N)) + 2 * mu * esum(
            sqrt(p(i) * p(j)) * cosh(q(i) - q(j)) for i, j in _pairs(N)
        )
        return H, "oscillator-algebra chain of coupled sites"
    if system == "rs_like":
        z = param("z")
        H = esum(
            cosh(p(i)) * exp(-z / 2 * esum(q(j) for j in range(i)) + z / 2 * esum(q(k) for k in range(i + 1, N)))
            for i in range(N)
        )
        return H, "Ruijsenaars-Schneider analogue (p_i read as rapidities)"
    raise UnknownSystem(f"unknown system 'extra.{system}'")


def extras(system: str, N: int = 3, params: Optional[Mapping[str, float]] = None) -> CatalogEntry:
    """Hamiltonians with other coalgebra symmetries; only the energy is monitored."""
    defaults: Dict[str, object] = {"z": 0.1, "b": 0.5, "lam": 1.0, "mu": 0.5, "kappa": list(np.linspace(0.1, 0.5, N))}
    H, description = _extra_hamiltonian(system, N)
    used = {name for name, _ in parameters(H)}
    values = {name: value for name, value in defaults.items() if name in used}
    values.update(_scalars(params))
    box = DEFAULT_BOX.with_p(0.2, 1.5) if system == "h4_chain" else DEFAULT_BOX
    guards = tuple(p(i) for i in range(N)) if system == "h4_chain" else ()
    return CatalogEntry(
        id=f"extra.{system}",
        N=N,
        hamiltonian=H,
        integrals=IntegralFamily(N=N),
        params=ParamSet(values),
        box=box,
        claimed_class=SystemClass.INTEGRABLE,
        description=description,
        notes=("integrals come from a realization not built here; only energy conservation is checked",),
        guards=guards,
    )


# Registry
@dataclass(frozen=True)
class SystemInfo:
    """Listing metadata and the builder used by the command line."""
    id: str
    claimed_class: SystemClass
    description: str
    reference: str
    builder: Callable[..., CatalogEntry]
    functions: Tuple[str, ...] = ()
    options: Tuple[str, ...] = ()


def _take(params: Dict[str, object], name: str, default=None):
    return params.pop(name, default)


def _sites_option(params: Dict[str, object], name: str):
    value = params.pop(name, None)
    return None if value is None else list(value)


def _build_evans(N, params, functions, options):
    return evans(functions.get("F"), _sites_option(params, "b"), N, params)


def _build_em(N, params, functions, options):
    e = _take(params, "e", 1.0)
    return em_flat(functions.get("F"), functions.get("G"), e, _sites_option(params, "b"), N, params)


def _build_free(chart):
    def build(N, params, functions, options):
        return free_constant_curvature(chart, _take(params, "kappa", 0.1), N)
    return build


def _build_curved_evans(N, params, functions, options):
    kappa = _take(params, "kappa", 0.1)
    b = _sites_option(params, "b")
    return curved_evans(functions.get("U"), kappa, b, N, options.get("chart", POINCARE), params)


def _build_curved_sw(N, params, functions, options):
    return curved_sw(
        _take(params, "omega", 1.0), _take(params, "kappa", 0.1), _sites_option(params, "b"), N,
        options.get("chart", POINCARE),
    )


def _build_curved_kc(N, params, functions, options):
    return curved_kc(
        _take(params, "k", 1.0), _take(params, "kappa", 0.1), _sites_option(params, "b"), N,
        options.get("chart", POINCARE),
    )


def _build_conformal_free(N, params, functions, options):
    return conformal_free(functions.get("f"), N, params)


def _build_conformal_potential(N, params, functions, options):
    return conformal_potential(functions.get("f"), functions.get("U"), _sites_option(params, "b"), N, params)


def _build_darboux(variant):
    def build(N, params, functions, options):
        return darboux(variant, N, params)
    return build


def _build_multifold(N, params, functions, options):
    return multifold_kepler(_take(params, "alpha", 1.0), _take(params, "beta", 1.0), _take(params, "nu", 2.0), N)


def _build_taub_nut(N, params, functions, options):
    return taub_nut(_take(params, "m", 1.0), N)


def _build_deformed_free(N, params, functions, options):
    return deformed_free(functions.get("g"), _take(params, "z", 0.1), N, params)


def _build_deformed_potential(N, params, functions, options):
    z = _take(params, "z", 0.1)
    return deformed_potential(functions.get("g"), functions.get("U"), z, _sites_option(params, "b"), N, params)


def _build_h6_natural(N, params, functions, options):
    return h6_natural(functions.get("F"), _sites_option(params, "lam"), N, params)


def _build_h6_em(N, params, functions, options):
    return h6_em(functions.get("F"), functions.get("G"), functions.get("R"), _sites_option(params, "lam"), N, params)


def _build_h6_geodesic(N, params, functions, options):
    return h6_geodesic(
        functions.get("F"), functions.get("G"), functions.get("R"), functions.get("S"), functions.get("U"),
        _sites_option(params, "lam"), N, params,
    )


def _build_extra(system):
    def build(N, params, functions, options):
        return extras(system, N, params)
    return build


_QMS, _MS = SystemClass.QMS, SystemClass.MS

_DARBOUX_REF = "Table 3"
_EXTRA_REFS = {
    "cg": "Eq. (he)",
    "cg_general": "Eq. (qq1)",
    "cg_gd": "Eq. (hk)",
    "cg_deformed": "Eq. (lp)",
    "h4_chain": "Eq. (qq2)",
    "rs_like": "Eq. (qq2RS)",
}

CATALOG: Dict[str, SystemInfo] = {
    info.id: info
    for info in [
        SystemInfo(
            "sl2.evans", _QMS, "flat Evans system with centrifugal barriers", "Eq. (anha)", _build_evans, ("F",),
        ),
        SystemInfo(
            "sl2.em", _QMS, "electromagnetic Hamiltonian, vanishing magnetic field", "Eq. (cf)", _build_em,
            ("F", "G"),
        ),
        SystemInfo(
            "sl2.free_poincare", _QMS, "free motion, constant curvature, Poincare chart", "Eq. (dd)",
            _build_free(POINCARE),
        ),
        SystemInfo(
            "sl2.free_beltrami", _QMS, "free motion, constant curvature, Beltrami chart", "Eq. (dd)",
            _build_free(BELTRAMI),
        ),
        SystemInfo(
            "sl2.curved_evans", _QMS, "curved Evans system", "Eq. (eb)", _build_curved_evans, ("U",), ("chart",),
        ),
        SystemInfo(
            "sl2.curved_sw", _MS, "curved Smorodinsky-Winternitz system", "Eq. (ec)", _build_curved_sw, (),
            ("chart",),
        ),
        SystemInfo(
            "sl2.curved_kc", _MS, "curved generalized Kepler-Coulomb system", "Eq. (ee)", _build_curved_kc, (),
            ("chart",),
        ),
        SystemInfo(
            "sl2.conformal_free", _QMS, "geodesic flow of f(|q|)^2 dq^2", "Eq. (H0)", _build_conformal_free, ("f",),
        ),
        SystemInfo(
            "sl2.conformal_potential", _QMS, "central potential on f(|q|)^2 dq^2", "Eq. (H1)",
            _build_conformal_potential, ("f", "U"),
        ),
        SystemInfo("sl2.multifold_kepler", _QMS, "multifold Kepler space", _DARBOUX_REF, _build_multifold),
        SystemInfo("sl2.taub_nut", _QMS, "generalized Taub-NUT space", _DARBOUX_REF, _build_taub_nut),
        *[
            SystemInfo(f"darboux.{v}", _QMS, f"Darboux space of type {v.upper()}", _DARBOUX_REF, _build_darboux(v))
            for v in DARBOUX_VARIANTS
        ],
        SystemInfo(
            "sl2z.free", _QMS, "deformed geodesic flow J_+ g(z J_-)/2", "Eq. (bbfff)", _build_deformed_free, ("g",),
        ),
        SystemInfo(
            "sl2z.potential", _QMS, "deformed Evans system", "Eq. (ahaa)", _build_deformed_potential, ("g", "U"),
        ),
        SystemInfo(
            "h6.natural", SystemClass.QUASI_INTEGRABLE, "natural system F(lambda.q, q^2)", "Eq. (eucla)",
            _build_h6_natural, ("F",),
        ),
        SystemInfo(
            "h6.em", SystemClass.QUASI_INTEGRABLE, "electromagnetic h6 Hamiltonian", "Eq. (electro)", _build_h6_em,
            ("F", "G", "R"),
        ),
        SystemInfo(
            "h6.geodesic", SystemClass.QUASI_INTEGRABLE, "geodesic flow on an h6 coalgebra space", "Eq. (geod)",
            _build_h6_geodesic, ("F", "G", "R", "S", "U"),
        ),
        *[
            SystemInfo(
                f"extra.{name}", SystemClass.INTEGRABLE, _extra_hamiltonian(name, 2)[1], _EXTRA_REFS[name],
                _build_extra(name),
            )
            for name in EXTRA_SYSTEMS
        ],
    ]
}


def list_systems() -> List[SystemInfo]:
    return [CATALOG[key] for key in sorted(CATALOG)]


def get_info(system_id: str) -> SystemInfo:
    try:
        return CATALOG[system_id]
    except KeyError:
        raise UnknownSystem(f"unknown system '{system_id}'") from None


def build(
    system_id: str,
    N: int = 3,
    params: Optional[Mapping[str, object]] = None,
    functions: Optional[Mapping[str, Expression]] = None,
    options: Optional[Mapping[str, str]] = None,
) -> CatalogEntry:
    """Construct a registered system from flat parameter, function and option maps."""
    info = get_info(system_id)
    functions = dict(functions or {})
    unknown = sorted(set(functions) - set(info.functions))
    if unknown:
        raise ParameterMismatch(f"{system_id} accepts functions {list(info.functions)}, got {unknown}")
    options = dict(options or {})
    unknown = sorted(set(options) - set(info.options))
    if unknown:
        raise ParameterMismatch(f"{system_id} accepts options {list(info.options)}, got {unknown}")
    if N < 1:
        raise DimensionMismatch(f"N must be positive, got {N}")
    entry = info.builder(N, dict(params or {}), functions, options)
    logger.info("Catalog entry built", system_id=entry.id, n=N, integrals=len(entry.integrals))
    return entry
