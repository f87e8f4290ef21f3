"""
Bundled coalgebras: sl(2,R), its deformation sl_z(2,R) and the two-photon h6.

Each comes as a CoalgebraSpec for the generic engine together with the
closed-form N-site realizations and integral families, which serve as an
independent oracle for the recursion.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import structlog

from .coalgebra import (
    LEFT,
    RIGHT,
    Casimir,
    CoalgebraSpec,
    SiteConfig,
    casimir_integrals,
    primitive_rule,
)
from .errors import ParameterMismatch, UnknownGenerator, UnresolvedSymbol
from .expr import (
    Expression,
    ParamSet,
    cosh,
    esum,
    exp,
    free_symbols,
    p,
    param,
    q,
    sinhc,
    square,
    substitute,
    symbol,
)

logger = structlog.get_logger()

SL2_GENERATORS = ("Jm", "Jp", "J3")
H6_GENERATORS = ("K", "Ap", "Am", "Bp", "Bm", "M")

GROUP_LEFT = "left"
GROUP_RIGHT = "right"
GROUP_COMMON = "common"
GROUP_EXTRA = "extra"


@dataclass(frozen=True)
class LabeledIntegral:
    """An integral of motion with its display label and involution group."""
    label: str
    expr: Expression
    group: str


@dataclass
class IntegralFamily:
    """Left integrals C^(m) and right integrals C_(m), m = first..N."""
    N: int
    left: Dict[int, Expression] = field(default_factory=dict)
    right: Dict[int, Expression] = field(default_factory=dict)
    extra: Dict[str, Expression] = field(default_factory=dict)
    params: ParamSet = field(default_factory=ParamSet)
    name: str = "C"

    def labeled(self) -> List[LabeledIntegral]:
        """Ordered integrals; C^(N) = C_(N) is listed once as the common integral."""
        items: List[LabeledIntegral] = []
        for m in sorted(self.left):
            group = GROUP_COMMON if m == self.N else GROUP_LEFT
            items.append(LabeledIntegral(f"{self.name}^({m})", self.left[m], group))
        for m in sorted(self.right):
            if m == self.N and self.N in self.left:
                continue
            group = GROUP_COMMON if m == self.N else GROUP_RIGHT
            items.append(LabeledIntegral(f"{self.name}_({m})", self.right[m], group))
        for label, expr in self.extra.items():
            items.append(LabeledIntegral(label, expr, GROUP_EXTRA))
        return items

    def __len__(self) -> int:
        return len(self.labeled())

    def is_empty(self) -> bool:
        return not (self.left or self.right or self.extra)


def family_from_engine(spec: CoalgebraSpec, config: SiteConfig, name: Optional[str] = None) -> IntegralFamily:
    """Integral family produced by the generic coproduct recursion."""
    source = spec.integral_sources[0]
    left = casimir_integrals(spec, config, LEFT)
    right = casimir_integrals(spec, config, RIGHT)
    return IntegralFamily(
        N=config.N,
        left={m: e for (c, m), e in left.items() if c == source.name},
        right={m: e for (c, m), e in right.items() if c == source.name},
        params=config.params(),
        name=name or source.name,
    )


def _check_sites(name: str, values: Optional[Sequence[float]], N: int) -> List[float]:
    if values is None:
        return [0.0] * N
    values = [float(v) for v in values]
    if len(values) != N:
        raise ParameterMismatch(f"'{name}' needs {N} entries, got {len(values)}")
    return values


def _gen(name: str, site: Optional[int] = None) -> Expression:
    return symbol(name, site)


# sl(2,R)
@lru_cache(maxsize=None)
def sl2_spec() -> CoalgebraSpec:
    """sl(2,R) with primitive coproduct and the centrifugal one-site realization."""
    Jm, Jp, J3 = (_gen(g) for g in SL2_GENERATORS)
    b = param("b", 0)
    return CoalgebraSpec(
        name="sl2",
        generators=SL2_GENERATORS,
        brackets={("J3", "Jp"): 2 * Jp, ("J3", "Jm"): -2 * Jm, ("Jm", "Jp"): 4 * J3},
        casimirs=(Casimir("C", Jm * Jp - square(J3)),),
        coproduct={g: primitive_rule(g) for g in SL2_GENERATORS},
        realization={
            "Jm": square(q(0)),
            "Jp": square(p(0)) + b / square(q(0)),
            "J3": q(0) * p(0),
        },
        site_parameters=("b",),
    )


def sl2_config(N: int, b: Optional[Sequence[float]] = None) -> SiteConfig:
    return SiteConfig(N, {"b": _check_sites("b", b, N)})


def sl2_generators(N: int) -> Dict[str, Expression]:
    """Closed-form realized generators: q^2, p^2 + sum b_i/q_i^2, q.p."""
    return {
        "Jm": esum(square(q(i)) for i in range(N)),
        "Jp": esum(square(p(i)) + param("b", i) / square(q(i)) for i in range(N)),
        "J3": esum(q(i) * p(i) for i in range(N)),
    }


def _sl2_block(i: int, j: int) -> Expression:
    b_i, b_j = param("b", i), param("b", j)
    return (
        square(q(i) * p(j) - q(j) * p(i))
        + b_i * square(q(j)) / square(q(i))
        + b_j * square(q(i)) / square(q(j))
    )


def _sl2_window(start: int, stop: int) -> Expression:
    pairs = esum(_sl2_block(i, j) for i in range(start, stop) for j in range(i + 1, stop))
    return pairs + esum(param("b", i) for i in range(start, stop))


def sl2_integrals(N: int, b: Optional[Sequence[float]] = None) -> IntegralFamily:
    """Closed-form C^(m) and C_(m), m = 2..N."""
    if N < 2:
        raise ParameterMismatch("sl2 integrals need at least 2 sites")
    values = _check_sites("b", b, N)
    return IntegralFamily(
        N=N,
        left={m: _sl2_window(0, m) for m in range(2, N + 1)},
        right={m: _sl2_window(N - m, N) for m in range(2, N + 1)},
        params=ParamSet(b=values),
    )


# sl_z(2,R)
def _s(i: int) -> Expression:
    """sinh(z q_i^2)/(z q_i^2)."""
    return sinhc(param("z") * square(q(i)))


@lru_cache(maxsize=None)
def sl2z_spec() -> CoalgebraSpec:
    """Non-standard deformation sl_z(2,R); J- stays primitive."""
    Jm, Jp, J3 = (_gen(g) for g in SL2_GENERATORS)
    z = param("z")
    b = param("b", 0)
    s0 = _s(0)

    def deformed(g: str) -> Expression:
        return _gen(g, 0) * exp(z * _gen("Jm", 1)) + exp(-z * _gen("Jm", 0)) * _gen(g, 1)

    return CoalgebraSpec(
        name="sl2z",
        generators=SL2_GENERATORS,
        brackets={
            ("J3", "Jp"): 2 * Jp * cosh(z * Jm),
            ("J3", "Jm"): -2 * Jm * sinhc(z * Jm),
            ("Jm", "Jp"): 4 * J3,
        },
        casimirs=(Casimir("C", Jm * sinhc(z * Jm) * Jp - square(J3)),),
        coproduct={"Jm": primitive_rule("Jm"), "Jp": deformed("Jp"), "J3": deformed("J3")},
        realization={
            "Jm": square(q(0)),
            "Jp": s0 * square(p(0)) + b / (square(q(0)) * s0),
            "J3": s0 * q(0) * p(0),
        },
        site_parameters=("b",),
        shared_parameters=("z",),
    )


def sl2z_config(N: int, b: Optional[Sequence[float]] = None, z: float = 0.0) -> SiteConfig:
    return SiteConfig(N, {"b": _check_sites("b", b, N)}, {"z": z})


def _partial_sq(start: int, stop: int) -> Expression:
    return esum(square(q(k)) for k in range(start, stop))


def sl2z_generators(N: int) -> Dict[str, Expression]:
    """Closed-form deformed N-site realization with ordered exponential weights."""
    z = param("z")
    weights = [exp(-z * _partial_sq(0, i) + z * _partial_sq(i + 1, N)) for i in range(N)]
    return {
        "Jm": _partial_sq(0, N),
        "Jp": esum(
            (_s(i) * square(p(i)) + param("b", i) / (square(q(i)) * _s(i))) * weights[i] for i in range(N)
        ),
        "J3": esum(_s(i) * q(i) * p(i) * weights[i] for i in range(N)),
    }


def _sl2z_block(i: int, j: int) -> Expression:
    b_i, b_j = param("b", i), param("b", j)
    s_i, s_j = _s(i), _s(j)
    return (
        s_i * s_j * square(q(i) * p(j) - q(j) * p(i))
        + b_i * square(q(j)) * s_j / (square(q(i)) * s_i)
        + b_j * square(q(i)) * s_i / (square(q(j)) * s_j)
    )


def _sl2z_window(start: int, stop: int) -> Expression:
    z = param("z")
    pair_terms = []
    for i in range(start, stop):
        for j in range(i + 1, stop):
            weight = exp(
                -2 * z * _partial_sq(start, i)
                - z * square(q(i))
                + z * square(q(j))
                + 2 * z * _partial_sq(j + 1, stop)
            )
            pair_terms.append(_sl2z_block(i, j) * weight)
    b_terms = [
        param("b", i) * exp(-2 * z * _partial_sq(start, i) + 2 * z * _partial_sq(i + 1, stop))
        for i in range(start, stop)
    ]
    return esum(pair_terms) + esum(b_terms)


def sl2z_integrals(N: int, b: Optional[Sequence[float]] = None, z: float = 0.0) -> IntegralFamily:
    """Closed-form deformed C^(m) and C_(m); z = 0 reproduces the sl(2,R) family."""
    if N < 2:
        raise ParameterMismatch("sl2z integrals need at least 2 sites")
    values = _check_sites("b", b, N)
    return IntegralFamily(
        N=N,
        left={m: _sl2z_window(0, m) for m in range(2, N + 1)},
        right={m: _sl2z_window(N - m, N) for m in range(2, N + 1)},
        params=ParamSet(b=values, z=z),
    )


# h6
def h6_working_casimir() -> Expression:
    """C = C2/C1 = M B+ B- - B+ A-^2 - B- A+^2 - M (K + M/2)^2 + 2 A- A+ (K + M/2)."""
    K, Ap, Am, Bp, Bm, M = (_gen(g) for g in H6_GENERATORS)
    shifted = K + M / 2
    return M * Bp * Bm - Bp * square(Am) - Bm * square(Ap) - M * square(shifted) + 2 * Am * Ap * shifted


@lru_cache(maxsize=None)
def h6_spec() -> CoalgebraSpec:
    """Two-photon coalgebra with primitive coproduct and the lambda-labelled realization."""
    K, Ap, Am, Bp, Bm, M = (_gen(g) for g in H6_GENERATORS)
    lam = param("lam", 0)
    c2 = (M * Bp - square(Ap)) * (M * Bm - square(Am)) - square(M * K - Am * Ap + square(M) / 2)
    return CoalgebraSpec(
        name="h6",
        generators=H6_GENERATORS,
        brackets={
            ("K", "Ap"): Ap,
            ("K", "Am"): -Am,
            ("Am", "Ap"): M,
            ("K", "Bp"): 2 * Bp,
            ("K", "Bm"): -2 * Bm,
            ("Bm", "Bp"): 4 * K + 2 * M,
            ("Ap", "Bm"): -2 * Am,
            ("Am", "Bp"): 2 * Ap,
        },
        casimirs=(Casimir("C1", M, linear=True), Casimir("C2", c2)),
        coproduct={g: primitive_rule(g) for g in H6_GENERATORS},
        realization={
            "Ap": lam * p(0),
            "Am": lam * q(0),
            "K": q(0) * p(0) - square(lam) / 2,
            "Bp": square(p(0)),
            "Bm": square(q(0)),
            "M": square(lam),
        },
        site_parameters=("lam",),
        integral_casimirs=(Casimir("C", h6_working_casimir()),),
    )


def _check_lambdas(lam: Optional[Sequence[float]], N: int) -> List[float]:
    values = _check_sites("lam", lam if lam is not None else [1.0] * N, N)
    if any(v == 0.0 for v in values):
        raise ParameterMismatch("h6 realization labels must be non-vanishing")
    return values


def h6_config(N: int, lam: Optional[Sequence[float]] = None) -> SiteConfig:
    return SiteConfig(N, {"lam": _check_lambdas(lam, N)})


def h6_generators(N: int) -> Dict[str, Expression]:
    """Closed-form N-site realization in terms of lambda.q, lambda.p, q^2, p^2, q.p."""
    lam = [param("lam", i) for i in range(N)]
    lam_sq = esum(square(l) for l in lam)
    return {
        "Ap": esum(lam[i] * p(i) for i in range(N)),
        "Am": esum(lam[i] * q(i) for i in range(N)),
        "M": lam_sq,
        "Bp": esum(square(p(i)) for i in range(N)),
        "Bm": esum(square(q(i)) for i in range(N)),
        "K": esum(q(i) * p(i) for i in range(N)) - lam_sq / 2,
    }


def _h6_triple(i: int, j: int, k: int) -> Expression:
    li, lj, lk = param("lam", i), param("lam", j), param("lam", k)
    return square(
        li * (p(j) * q(k) - p(k) * q(j))
        + lj * (p(k) * q(i) - p(i) * q(k))
        + lk * (p(i) * q(j) - p(j) * q(i))
    )


def _h6_window(start: int, stop: int) -> Expression:
    return esum(
        _h6_triple(i, j, k)
        for i in range(start, stop)
        for j in range(i + 1, stop)
        for k in range(j + 1, stop)
    )


def h6_integrals(N: int, lam: Optional[Sequence[float]] = None) -> IntegralFamily:
    """Closed-form triple sums C^(m), C_(m) for m = 3..N (m = 2 vanishes identically)."""
    values = _check_lambdas(lam, N)
    if N < 3:
        logger.warning("h6 integrals need at least 3 sites; only trivial integrals exist", n=N)
        return IntegralFamily(N=N, params=ParamSet(lam=values))
    return IntegralFamily(
        N=N,
        left={m: _h6_window(0, m) for m in range(3, N + 1)},
        right={m: _h6_window(N - m, N) for m in range(3, N + 1)},
        params=ParamSet(lam=values),
    )


# h6 sub-coalgebras and generator integrability
def _h6_subalgebra_casimirs() -> Dict[str, Expression]:
    K, Ap, Am, Bp, Bm, M = (_gen(g) for g in H6_GENERATORS)
    return {
        "h3": M,
        "h4": M * (K + M / 2) - Am * Ap,
        "gl2": Bm * Bp - square(K + M / 2),
    }


H6_SUBALGEBRAS: Dict[str, Tuple[str, ...]] = {
    "h3": ("Am", "Ap", "M"),
    "h4": ("K", "Am", "Ap", "M"),
    "gl2": ("Bm", "Bp", "K", "M"),
}


@dataclass(frozen=True)
class GeneratorFamily:
    """Data for assembling a Hamiltonian that commutes with one h6 generator."""
    generator: str
    commuting: Tuple[str, ...]
    subalgebras: Tuple[str, ...]
    casimirs: Dict[str, Expression]

    @property
    def arguments(self) -> Tuple[str, ...]:
        """Placeholder names accepted by h6_integrable_hamiltonian."""
        return (self.generator, *self.commuting, *(f"C_{name}" for name in self.subalgebras))


def h6_generator_families(generator: str) -> GeneratorFamily:
    """Generators commuting with X and the sub-coalgebras containing X."""
    spec = h6_spec()
    spec.check_generator(generator)
    if generator == "M":
        raise UnknownGenerator("M is central and gives no generator family")
    commuting = tuple(
        g for g in H6_GENERATORS
        if g != generator and spec.bracket(generator, g).is_const and spec.bracket(generator, g).data == 0.0
    )
    subalgebras = tuple(name for name, members in H6_SUBALGEBRAS.items() if generator in members)
    casimirs = _h6_subalgebra_casimirs()
    return GeneratorFamily(
        generator=generator,
        commuting=commuting,
        subalgebras=subalgebras,
        casimirs={name: casimirs[name] for name in subalgebras},
    )


def h6_integrable_hamiltonian(generator: str, H: Expression) -> Tuple[Expression, Expression]:
    """H_X over h6 generators from H in the family's placeholders, plus the extra integral X."""
    family = h6_generator_families(generator)
    allowed = set(family.arguments)
    stray = sorted(name for name, site in free_symbols(H) if site is not None or name not in allowed)
    if stray:
        raise UnresolvedSymbol(stray[0])
    bindings = {f"C_{name}": expr for name, expr in family.casimirs.items()}
    return substitute(H, bindings), _gen(generator)


SPECS = {"sl2": sl2_spec, "sl2z": sl2z_spec, "h6": h6_spec}


def get_spec(name: str) -> CoalgebraSpec:
    try:
        return SPECS[name]()
    except KeyError:
        raise UnknownGenerator(f"unknown coalgebra '{name}'") from None
