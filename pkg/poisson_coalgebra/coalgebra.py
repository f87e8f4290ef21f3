"""
Generic Poisson coalgebra engine.

A CoalgebraSpec holds generator symbols, the bracket table, Casimirs, a
two-site coproduct rule per generator and a one-site symplectic realization.
The m-th coproducts are expanded as site-tagged expressions and realized on
the 2N-dimensional phase space by substitution.

Conventions: generator placeholders in brackets, Casimirs and Hamiltonians
carry no site (``symbol("J+")``); coproduct rules use sites 0 and 1
(``symbol("J+", 0)``); realizations use q(0), p(0) and per-site parameters
``param(name, 0)``.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from .config import settings
from .errors import OddDimension, ParameterMismatch, UnknownGenerator, UnresolvedSymbol
from .expr import (
    Expression,
    ParamSet,
    as_expr,
    const,
    evaluate_batch,
    free_symbols,
    jets_batch,
    map_leaves,
    neg,
    nodes,
    normalized_bracket,
    shift_sites,
    signature,
    substitute,
    symbol,
)
from .models import CheckStatus, PairResidual, PoissonMapReport
from .sampling import DEFAULT_BOX, SamplingBox, rng_for

logger = structlog.get_logger()

LEFT = "left"
RIGHT = "right"


@dataclass(frozen=True)
class Casimir:
    """A Casimir function over unsited generator symbols."""
    name: str
    expr: Expression
    linear: bool = False


@dataclass(frozen=True, eq=False)
class CoalgebraSpec:
    """Poisson coalgebra data: brackets, Casimirs, coproduct and one-site realization."""
    name: str
    generators: Tuple[str, ...]
    brackets: Mapping[Tuple[str, str], Expression]
    casimirs: Tuple[Casimir, ...]
    coproduct: Mapping[str, Expression]
    realization: Mapping[str, Expression]
    site_parameters: Tuple[str, ...] = ()
    shared_parameters: Tuple[str, ...] = ()
    integral_casimirs: Tuple[Casimir, ...] = ()
    cache: Dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        table: Dict[Tuple[str, str], Expression] = {}
        for (a, b), value in self.brackets.items():
            self.check_generator(a)
            self.check_generator(b)
            table[(a, b)] = as_expr(value)
        for (a, b), value in list(table.items()):
            table.setdefault((b, a), neg(value))
        object.__setattr__(self, "brackets", table)
        object.__setattr__(self, "generators", tuple(self.generators))
        for mapping, label in ((self.coproduct, "coproduct"), (self.realization, "realization")):
            missing = [g for g in self.generators if g not in mapping]
            if missing:
                raise UnknownGenerator(f"{self.name}: {label} missing for {missing}")

    def check_generator(self, gen: str) -> None:
        if gen not in self.generators:
            raise UnknownGenerator(f"'{gen}' is not a generator of {self.name}")

    def bracket(self, a: str, b: str) -> Expression:
        """Structure function {a, b}; pairs absent from the table vanish."""
        self.check_generator(a)
        self.check_generator(b)
        if a == b:
            return const(0.0)
        return self.brackets.get((a, b), const(0.0))

    def casimir(self, name: str) -> Casimir:
        for item in (*self.casimirs, *self.integral_casimirs):
            if item.name == name:
                return item
        raise UnknownGenerator(f"{self.name} has no Casimir '{name}'")

    @property
    def l(self) -> int:
        return len(self.generators)

    @property
    def r(self) -> int:
        return len(self.casimirs)

    @property
    def R(self) -> int:
        return sum(1 for c in self.casimirs if not c.linear)

    @property
    def integral_sources(self) -> Tuple[Casimir, ...]:
        """Casimirs whose coproducts become integrals (linear ones only give constants)."""
        if self.integral_casimirs:
            return self.integral_casimirs
        return tuple(c for c in self.casimirs if not c.linear)

    def is_primitive(self, gen: str) -> bool:
        self.check_generator(gen)
        return signature(self.coproduct[gen]) == signature(symbol(gen, 0) + symbol(gen, 1))

    def with_brackets(self, brackets: Mapping[Tuple[str, str], Expression], name: Optional[str] = None) -> "CoalgebraSpec":
        """Copy with some bracket entries replaced."""
        table = {k: v for k, v in self.brackets.items() if k not in brackets and (k[1], k[0]) not in brackets}
        table.update(brackets)
        return CoalgebraSpec(
            name=name or self.name,
            generators=self.generators,
            brackets=table,
            casimirs=self.casimirs,
            coproduct=self.coproduct,
            realization=self.realization,
            site_parameters=self.site_parameters,
            shared_parameters=self.shared_parameters,
            integral_casimirs=self.integral_casimirs,
        )


def primitive_rule(gen: str) -> Expression:
    """X ⊗ 1 + 1 ⊗ X."""
    return symbol(gen, 0) + symbol(gen, 1)


@dataclass(frozen=True)
class SiteConfig:
    """Number of sites with per-site and shared parameter values."""
    N: int
    site_values: Mapping[str, Sequence[float]] = field(default_factory=dict)
    shared: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.N < 1:
            raise ParameterMismatch(f"site count must be positive, got {self.N}")
        normalized = {}
        for name, values in self.site_values.items():
            values = tuple(float(v) for v in np.atleast_1d(values))
            if len(values) != self.N:
                raise ParameterMismatch(
                    f"parameter '{name}' needs exactly {self.N} site values, got {len(values)}"
                )
            normalized[name] = values
        object.__setattr__(self, "site_values", normalized)
        object.__setattr__(self, "shared", {k: float(v) for k, v in self.shared.items()})

    def validate_for(self, spec: CoalgebraSpec) -> None:
        missing = [n for n in spec.site_parameters if n not in self.site_values]
        missing += [n for n in spec.shared_parameters if n not in self.shared]
        if missing:
            raise ParameterMismatch(f"{spec.name} at N={self.N} is missing parameters {missing}")

    def params(self) -> ParamSet:
        values: Dict[str, object] = {k: list(v) for k, v in self.site_values.items()}
        values.update(self.shared)
        return ParamSet(values)

    def window(self, start: int, stop: int) -> "SiteConfig":
        """Sub-configuration for sites start..stop-1 (0-based)."""
        return SiteConfig(
            N=stop - start,
            site_values={k: v[start:stop] for k, v in self.site_values.items()},
            shared=self.shared,
        )


@dataclass
class RealizedSystem:
    """An N-site instantiation of a coalgebra."""
    spec: CoalgebraSpec
    config: SiteConfig
    params: ParamSet
    generators: Dict[str, Expression]
    hamiltonian: Optional[Expression] = None
    left_integrals: Dict[Tuple[str, int], Expression] = field(default_factory=dict)
    right_integrals: Dict[Tuple[str, int], Expression] = field(default_factory=dict)
    constants: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.config.N


# Coproducts
def coproduct_left(spec: CoalgebraSpec, gen: str, m: int) -> Expression:
    """m-th coproduct by applying the two-site rule to the last tensor factor."""
    spec.check_generator(gen)
    if m < 1:
        raise ValueError(f"coproduct order must be at least 1, got {m}")
    key = (LEFT, gen, m)
    if key in spec.cache:
        return spec.cache[key]
    if m == 1:
        result = symbol(gen, 0)
    else:
        previous = coproduct_left(spec, gen, m - 1)
        last = m - 2
        bindings = {(g, last): shift_sites(spec.coproduct[g], last) for g in spec.generators}
        result = substitute(previous, bindings)
    spec.cache[key] = result
    return result


def _shift_symbols_from(f: Expression, first_site: int, offset: int) -> Expression:
    def relabel(leaf: Expression):
        if leaf.op == "symbol" and leaf.data[1] is not None and leaf.data[1] >= first_site:
            return symbol(leaf.data[0], leaf.data[1] + offset)
        return None

    return map_leaves(f, relabel)


def coproduct_right(spec: CoalgebraSpec, gen: str, m: int) -> Expression:
    """m-th coproduct by applying the two-site rule to the first tensor factor."""
    spec.check_generator(gen)
    if m < 1:
        raise ValueError(f"coproduct order must be at least 1, got {m}")
    key = (RIGHT, gen, m)
    if key in spec.cache:
        return spec.cache[key]
    if m == 1:
        result = symbol(gen, 0)
    else:
        previous = _shift_symbols_from(coproduct_right(spec, gen, m - 1), 1, 1)
        bindings = {(g, 0): spec.coproduct[g] for g in spec.generators}
        result = substitute(previous, bindings)
    spec.cache[key] = result
    return result


def coproduct(spec: CoalgebraSpec, gen: str, m: int, side: str = LEFT) -> Expression:
    if side == LEFT:
        return coproduct_left(spec, gen, m)
    if side == RIGHT:
        return coproduct_right(spec, gen, m)
    raise ValueError(f"side must be '{LEFT}' or '{RIGHT}', got {side}")


def apply_coproduct(spec: CoalgebraSpec, f: Expression, m: int, side: str = LEFT) -> Expression:
    """Image of a function of unsited generators under the m-th coproduct."""
    unknown = [name for name, site in free_symbols(f) if site is None and name not in spec.generators]
    if unknown:
        raise UnresolvedSymbol(sorted(unknown)[0])
    return substitute(f, {g: coproduct(spec, g, m, side) for g in spec.generators})


def embed(f: Expression, offset: int) -> Expression:
    """Move a site-tagged expression so that its site 0 lands on site offset."""
    return shift_sites(f, offset)


# Realization
def realize_tagged(spec: CoalgebraSpec, f: Expression) -> Expression:
    """Replace every sited generator symbol by the one-site realization on that site."""
    bindings = {}
    for name, site in free_symbols(f):
        if site is None:
            continue
        spec.check_generator(name)
        bindings[(name, site)] = shift_sites(spec.realization[name], site)
    return substitute(f, bindings)


def realize(spec: CoalgebraSpec, config: SiteConfig) -> RealizedSystem:
    """Realized N-site generators D⊗...⊗D(Δ^(N)(X))."""
    config.validate_for(spec)
    generators = {g: realize_tagged(spec, coproduct_left(spec, g, config.N)) for g in spec.generators}
    system = RealizedSystem(spec=spec, config=config, params=config.params(), generators=generators)
    system.constants = casimir_constants(spec, config)
    logger.debug("Coalgebra realized", coalgebra=spec.name, n=config.N)
    return system


def casimir_constants(spec: CoalgebraSpec, config: SiteConfig) -> Dict[str, List[float]]:
    """Per-site values D(C) and the N-site values of linear Casimirs."""
    params = config.params()
    probe = DEFAULT_BOX.center(config.N)[None, :]
    constants: Dict[str, List[float]] = {}
    for casimir in (*spec.casimirs, *spec.integral_casimirs):
        one_site = realize_tagged(spec, apply_coproduct(spec, casimir.expr, 1))
        values = []
        for site in range(config.N):
            values.append(float(evaluate_batch(embed(one_site, site), probe, params)[0]))
        constants[f"{casimir.name}@site"] = values
        if casimir.linear:
            total = realize_tagged(spec, apply_coproduct(spec, casimir.expr, config.N))
            constants[casimir.name] = [float(evaluate_batch(total, probe, params)[0])]
    return constants


def casimir_integrals(spec: CoalgebraSpec, config: SiteConfig, side: str = LEFT) -> Dict[Tuple[str, int], Expression]:
    """C^(m) (left, sites 1..m) or C_(m) (right, sites N-m+1..N) for m = 2..N."""
    config.validate_for(spec)
    N = config.N
    integrals: Dict[Tuple[str, int], Expression] = {}
    for casimir in spec.integral_sources:
        for m in range(2, N + 1):
            tagged = apply_coproduct(spec, casimir.expr, m, side)
            offset = 0 if side == LEFT else N - m
            integrals[(casimir.name, m)] = realize_tagged(spec, embed(tagged, offset))
    return integrals


def build_hamiltonian(system: RealizedSystem, H: Expression) -> Expression:
    """Substitute realized generators into H(X_1..X_l)."""
    H = as_expr(H)
    stray = [(name, site) for name, site in free_symbols(H) if site is not None or name not in system.generators]
    if stray:
        name, site = sorted(stray, key=lambda k: (k[0], -1 if k[1] is None else k[1]))[0]
        raise UnresolvedSymbol(name, site)
    return substitute(H, system.generators)


def realize_system(spec: CoalgebraSpec, config: SiteConfig, H: Optional[Expression] = None) -> RealizedSystem:
    """Realized generators, Hamiltonian and both integral families."""
    system = realize(spec, config)
    if H is not None:
        system.hamiltonian = build_hamiltonian(system, H)
    system.left_integrals = casimir_integrals(spec, config, LEFT)
    system.right_integrals = casimir_integrals(spec, config, RIGHT)
    return system


# Checks
def _pair_residual(
    system: RealizedSystem, a: str, b: str, X: np.ndarray, tol: float
) -> PairResidual:
    rhs = build_hamiltonian(system, system.spec.bracket(a, b))
    jet_a, jet_b, jet_rhs = jets_batch([system.generators[a], system.generators[b], rhs], X, system.params, order=1)
    residuals = normalized_bracket(jet_a.gradients, jet_b.gradients, offset=jet_rhs.values)
    worst = float(np.max(residuals))
    return PairResidual(
        first=a,
        second=b,
        residual=worst,
        status=CheckStatus.PASSED if worst <= tol else CheckStatus.FAILED,
    )


def check_poisson_map(
    spec: CoalgebraSpec,
    config: SiteConfig,
    samples: Optional[int] = None,
    tol: Optional[float] = None,
    seed: Optional[int] = None,
    box: SamplingBox = DEFAULT_BOX,
    jobs: Optional[int] = None,
) -> PoissonMapReport:
    """Check {Δ(X_i), Δ(X_j)} = Δ({X_i, X_j}) on realized generators at sampled points."""
    samples = settings.samples if samples is None else samples
    tol = settings.tolerance if tol is None else tol
    seed = settings.seed if seed is None else seed
    jobs = settings.jobs if jobs is None else jobs
    if samples < 1:
        raise ValueError("samples must be at least 1")

    start_time = time.time()
    system = realize(spec, config)
    gens = spec.generators
    pairs = [(gens[i], gens[j]) for i in range(len(gens)) for j in range(i + 1, len(gens))]

    def run(indexed_pair):
        index, (a, b) = indexed_pair
        X = box.sample(config.N, samples, rng_for(seed, index))
        return _pair_residual(system, a, b, X, tol)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, enumerate(pairs)))
    else:
        results = [run(item) for item in enumerate(pairs)]

    max_residual = max((r.residual for r in results), default=0.0)
    report = PoissonMapReport(
        coalgebra=spec.name,
        n=config.N,
        samples=samples,
        seed=seed,
        tolerance=tol,
        pairs=results,
        max_residual=max_residual,
        passed=all(r.status == CheckStatus.PASSED for r in results),
    )
    logger.info(
        "Poisson map check completed",
        coalgebra=spec.name,
        n=config.N,
        max_residual=max_residual,
        passed=report.passed,
        duration=time.time() - start_time,
    )
    return report


def coassociativity_residual(
    spec: CoalgebraSpec,
    gen: str,
    m: int,
    config: SiteConfig,
    samples: int = 50,
    seed: Optional[int] = None,
    box: SamplingBox = DEFAULT_BOX,
) -> float:
    """Max relative gap between left and right m-th coproducts realized on sites 1..m."""
    seed = settings.seed if seed is None else seed
    if m > config.N:
        raise ParameterMismatch(f"coproduct order {m} exceeds {config.N} sites")
    window = config.window(0, m)
    params = window.params()
    left = realize_tagged(spec, coproduct_left(spec, gen, m))
    right = realize_tagged(spec, coproduct_right(spec, gen, m))
    X = box.sample(m, samples, rng_for(seed, m))
    lv = evaluate_batch(left, X, params)
    rv = evaluate_batch(right, X, params)
    return float(np.max(np.abs(lv - rv) / np.maximum(1.0, np.abs(lv))))


# Integrability counting
def integrability_condition(s: int, R: int, N: int) -> bool:
    """Necessary condition s <= R - (R-1)/N for complete integrability from the coalgebra."""
    if s < 1 or R < 1 or N < 2:
        raise ValueError("s and R must be positive and N at least 2")
    return Fraction(s) <= R - Fraction(R - 1, N)


def generic_dimension(l: int, r: int) -> Fraction:
    """Maximal symplectic realization dimension (l - r)/2."""
    if l < 1 or r < 0 or r > l:
        raise ValueError(f"invalid generator/Casimir counts l={l}, r={r}")
    if (l - r) % 2:
        raise OddDimension(f"l - r = {l - r} is odd")
    return Fraction(l - r, 2)


def generic_integrability_condition(l: int, r: int, R: int, N: int) -> bool:
    """The condition rewritten for a generic realization: l <= 2R + r - 2(R-1)/N."""
    if N < 2:
        raise ValueError("N must be at least 2")
    generic_dimension(l, r)
    return Fraction(l) <= 2 * R + r - Fraction(2 * (R - 1), N)


def support(f: Expression) -> Iterable[int]:
    """Sites whose coordinates appear in f."""
    return sorted({node.data[1] for node in nodes(f) if node.op == "coord"})
