"""
Generalized coproducts: the comodule-deformed two-site oscillator and the
loop coproduct family Δ_λ^(k) with sampled involution checks.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .algebras import IntegralFamily, h6_spec
from .catalog import CatalogEntry
from .coalgebra import CoalgebraSpec, SiteConfig, coproduct_left, realize_tagged
from .config import settings
from .errors import DomainError, LoopPole, ParameterMismatch, UnknownGenerator
from .expr import (
    Expression,
    ParamSet,
    as_expr,
    bracket_from_gradients,
    const,
    evaluate_batch,
    free_symbols,
    jets_batch,
    normalized_bracket,
    p,
    param,
    q,
    shift_sites,
    square,
    substitute,
    symbol,
)
from .models import (
    CheckStatus,
    LoopInvolutionReport,
    LoopRelationFit,
    PairResidual,
    PoissonMapReport,
    SystemClass,
)
from .sampling import DEFAULT_BOX, SamplingBox, rng_for

logger = structlog.get_logger()

COMODULE_GENERATORS = ("M", "K", "Bp", "Bm")
COASSOCIATIVE_GENERATORS = ("M", "K", "Bm")
SIGMA = "sigma"
LAMBDA = "lam"
V_SITE = 0
A_SITE = 1
POLE_MARGIN = 1e-12
FIT_TOLERANCE = 1e-8


# Comodule
def _site_realization(site: int, with_oscillators: bool) -> Dict[str, Expression]:
    lam = param(LAMBDA, 0)
    table = {
        "Bp": square(q(0)),
        "Bm": square(p(0)),
        "K": -p(0) * q(0) + square(lam) / 2,
        "M": -square(lam),
    }
    if with_oscillators:
        table["Ap"] = -lam * q(0)
        table["Am"] = -lam * p(0)
    return {g: shift_sites(e, site) for g, e in table.items()}


def _sigma(sigma: Optional[float]) -> Expression:
    return param(SIGMA) if sigma is None else const(sigma)


def _u(site: int, sigma: Optional[float]) -> Expression:
    """1 - σ A- on an h6 site."""
    return 1 - _sigma(sigma) * symbol("Am", site)


def coaction_map(gen: str, sigma: Optional[float] = None) -> Expression:
    """
    φ(X) for a gl(2,R) generator as a two-site expression: gl(2,R) symbols on
    site 0 and deformed-h6 symbols on site 1.

    With sigma=None the deformation stays the shared parameter 'sigma'.
    """
    s = _sigma(sigma)
    u = _u(A_SITE, sigma)
    K, Bp, Bm, M = (symbol(g, V_SITE) for g in ("K", "Bp", "Bm", "M"))
    if gen == "M":
        return M + symbol("M", A_SITE)
    if gen == "K":
        return symbol("K", A_SITE) + K / u
    if gen == "Bp":
        return (
            symbol("Bp", A_SITE)
            + Bp / square(u)
            - 2 * s * K * symbol("Ap", A_SITE) / u
            - square(s) * square(K) * symbol("M", A_SITE) / square(u)
        )
    if gen == "Bm":
        return symbol("Bm", A_SITE) + Bm * square(u)
    raise UnknownGenerator(f"'{gen}' is not a gl(2,R) generator")


def deformed_h6_coproduct(gen: str, sigma: Optional[float] = None, first: int = 1) -> Expression:
    """Deformed h6 coproduct on sites first, first+1 for A-, M, K and B-."""
    s = _sigma(sigma)
    second = first + 1
    if gen == "Am":
        a, b = symbol("Am", first), symbol("Am", second)
        return a + b - s * a * b
    if gen not in COASSOCIATIVE_GENERATORS:
        raise UnknownGenerator(f"no deformed coproduct is known for '{gen}'")
    shifted = substitute(coaction_map(gen, sigma), {(g, A_SITE): symbol(g, second) for g in ("K", "Bm", "M", "Am")})
    return substitute(shifted, {(g, V_SITE): symbol(g, first) for g in COMODULE_GENERATORS})


def realize_comodule(f: Expression) -> Expression:
    """Realize gl(2,R) symbols on site 0 and h6 symbols on every later site."""
    bindings = {}
    for name, site in free_symbols(f):
        if site is None:
            continue
        table = _site_realization(site, with_oscillators=site != V_SITE)
        if name not in table:
            raise UnknownGenerator(f"'{name}' has no realization on site {site + 1}")
        bindings[(name, site)] = table[name]
    return substitute(f, bindings)


def gl2_casimir() -> Expression:
    """((K + M/2)^2 - B- B+)/4."""
    K, Bp, Bm, M = (symbol(g) for g in ("K", "Bp", "Bm", "M"))
    return (square(K + M / 2) - Bm * Bp) / 4


def _apply_coaction(f: Expression, sigma: Optional[float] = None) -> Expression:
    return substitute(f, {g: coaction_map(g, sigma) for g in COMODULE_GENERATORS})


def closed_form_hamiltonian() -> Expression:
    """The deformed oscillator H_σ written directly in canonical coordinates."""
    s, lam1, lam2 = param(SIGMA), param(LAMBDA, 0), param(LAMBDA, 1)
    q1, q2, p1, p2 = q(0), q(1), p(0), p(1)
    u = 1 + s * lam2 * p2
    w = square(lam1) - 2 * q1 * p1
    return (
        (square(p1) + square(p2)) / 2
        + square(q2) / 2
        + square(q1) / (2 * square(u))
        + s * lam2 * (square(p1) * p2 + q2 * w / (2 * u))
        + square(s * lam2) * (square(p1 * p2) / 2 + square(w) / (8 * square(u)))
    )


def _comodule_params(sigma: float, lam: Sequence[float]) -> ParamSet:
    return ParamSet({SIGMA: float(sigma), LAMBDA: [float(v) for v in lam]})


def _check_pole(sigma: float, lam2: float, box: SamplingBox, margin: float) -> None:
    reach = abs(sigma * lam2) * max(abs(box.p_low), abs(box.p_high))
    if 1.0 - reach <= margin:
        raise DomainError(f"1 + σλ2 p2 vanishes on the sampling box (σλ2 = {sigma * lam2:g})")


@dataclass(frozen=True)
class ComoduleSystem:
    """Two-site oscillator deformed through the gl(2,R) coaction."""
    sigma: float
    lam1: float
    lam2: float
    hamiltonian: Expression
    casimir: Expression
    params: ParamSet
    box: SamplingBox = DEFAULT_BOX
    guard: Expression = field(default_factory=lambda: const(1.0))

    def evaluate(self, X) -> np.ndarray:
        return evaluate_batch(self.hamiltonian, X, self.params)

    def involution_residual(self, samples: int = 100, seed: Optional[int] = None) -> float:
        """max normalized |{H_σ, C_σ}| over sampled box points."""
        seed = settings.seed if seed is None else seed
        X = self.box.sample(2, samples, rng_for(seed, 2))
        jet_h, jet_c = jets_batch([self.hamiltonian, self.casimir], X, self.params)
        return float(np.max(normalized_bracket(jet_h.gradients, jet_c.gradients)))

    def as_entry(self) -> CatalogEntry:
        """Catalog view so the audit and integrator machinery apply."""
        return CatalogEntry(
            id="comodule.oscillator",
            N=2,
            hamiltonian=self.hamiltonian,
            integrals=IntegralFamily(N=2, left={2: self.casimir}, params=self.params, name="C_sigma"),
            params=self.params,
            box=self.box,
            claimed_class=SystemClass.INTEGRABLE,
            description="comodule-deformed isotropic oscillator",
            guards=(self.guard,),
        )


def comodule_oscillator(
    sigma: float,
    lam1: float = 1.0,
    lam2: float = 1.0,
    box: SamplingBox = DEFAULT_BOX,
    singular_margin: Optional[float] = None,
) -> ComoduleSystem:
    """H_σ = φ((B+ + B-)/2) and C_σ = φ(C) for the gl(2,R) Casimir C."""
    margin = settings.singular_margin if singular_margin is None else singular_margin
    _check_pole(sigma, lam2, box, margin)
    params = _comodule_params(sigma, [lam1, lam2])
    H = realize_comodule(_apply_coaction((symbol("Bp") + symbol("Bm")) / 2))
    C = realize_comodule(_apply_coaction(gl2_casimir()))
    system = ComoduleSystem(
        sigma=float(sigma),
        lam1=float(lam1),
        lam2=float(lam2),
        hamiltonian=H,
        casimir=C,
        params=params,
        box=box,
        guard=realize_comodule(_u(A_SITE, None)),
    )
    logger.debug("Comodule oscillator built", sigma=sigma, lam1=lam1, lam2=lam2)
    return system


def check_coaction_homomorphism(
    sigma: float,
    lam1: float = 1.0,
    lam2: float = 1.0,
    samples: int = 50,
    seed: Optional[int] = None,
    tol: Optional[float] = None,
    box: SamplingBox = DEFAULT_BOX,
) -> PoissonMapReport:
    """Check {φ(a), φ(b)} = φ({a, b}) on realized gl(2,R) generators."""
    seed = settings.seed if seed is None else seed
    tol = settings.tolerance if tol is None else tol
    _check_pole(sigma, lam2, box, settings.singular_margin)
    spec = h6_spec()
    params = _comodule_params(sigma, [lam1, lam2])
    images = {g: realize_comodule(coaction_map(g, sigma)) for g in COMODULE_GENERATORS}
    gens = COMODULE_GENERATORS
    results = []
    for index, (a, b) in enumerate((gens[i], gens[j]) for i in range(len(gens)) for j in range(i + 1, len(gens))):
        rhs = realize_comodule(_apply_coaction(spec.bracket(a, b), sigma))
        X = box.sample(2, samples, rng_for(seed, index))
        jet_a, jet_b, jet_rhs = jets_batch([images[a], images[b], rhs], X, params)
        worst = float(np.max(normalized_bracket(jet_a.gradients, jet_b.gradients, offset=jet_rhs.values)))
        results.append(
            PairResidual(
                first=a,
                second=b,
                residual=worst,
                status=CheckStatus.PASSED if worst <= tol else CheckStatus.FAILED,
            )
        )
    max_residual = max(r.residual for r in results)
    report = PoissonMapReport(
        coalgebra="gl2-comodule",
        n=2,
        samples=samples,
        seed=seed,
        tolerance=tol,
        pairs=results,
        max_residual=max_residual,
        passed=all(r.status == CheckStatus.PASSED for r in results),
    )
    logger.info("Coaction homomorphism checked", sigma=sigma, max_residual=max_residual, passed=report.passed)
    return report


def comodule_coassociativity_residual(
    gen: str,
    sigma: float,
    lam: Sequence[float] = (1.0, 1.0, 1.0),
    samples: int = 50,
    seed: Optional[int] = None,
    box: SamplingBox = DEFAULT_BOX,
) -> float:
    """Max relative gap between (φ⊗id)∘φ and (id⊗Δ)∘φ on three realized sites."""
    seed = settings.seed if seed is None else seed
    if gen not in COASSOCIATIVE_GENERATORS:
        raise UnknownGenerator(f"coassociativity is only checked on {COASSOCIATIVE_GENERATORS}, got '{gen}'")
    if len(lam) != 3:
        raise ParameterMismatch(f"'lam' needs 3 entries, got {len(lam)}")
    for value in lam[1:]:
        _check_pole(sigma, value, box, settings.singular_margin)
    image = coaction_map(gen, sigma)

    moved = substitute(image, {(g, A_SITE): symbol(g, A_SITE + 1) for g in ("K", "Bm", "M", "Am")})
    left = substitute(moved, {(g, V_SITE): coaction_map(g, sigma) for g in COMODULE_GENERATORS})
    right = substitute(
        image, {(g, A_SITE): deformed_h6_coproduct(g, sigma, first=A_SITE) for g in ("K", "Bm", "M", "Am")}
    )

    params = _comodule_params(sigma, lam)
    X = box.sample(3, samples, rng_for(seed, 3, COASSOCIATIVE_GENERATORS.index(gen)))
    lv = evaluate_batch(realize_comodule(left), X, params)
    rv = evaluate_batch(realize_comodule(right), X, params)
    return float(np.max(np.abs(lv - rv) / np.maximum(1.0, np.abs(lv))))


# Loop coproduct
def _check_pole_parameter(lam: float, epsilon: float) -> None:
    if abs(lam) <= POLE_MARGIN or abs(lam - epsilon) <= POLE_MARGIN:
        raise LoopPole(f"spectral parameter {lam:g} sits on a pole (0 or ε = {epsilon:g})")


@dataclass(frozen=True, eq=False)
class LoopFamily:
    """Δ_λ^(k)(X) = Δ^(k-1)(X)/λ + X_k/(λ - ε) realized on config.N sites."""
    spec: CoalgebraSpec
    config: SiteConfig
    epsilon: float
    cache: Dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.config.validate_for(self.spec)
        composite = [g for g in self.spec.generators if not self.spec.is_primitive(g)]
        if composite:
            raise ParameterMismatch(f"{self.spec.name} has non-primitive coproducts for {composite}")
        if self.config.N < 2:
            raise ParameterMismatch("loop coproducts need at least two sites")

    @property
    def N(self) -> int:
        return self.config.N

    @property
    def params(self) -> ParamSet:
        return self.config.params()

    def _parts(self, gen: str, k: int) -> Tuple[Expression, Expression]:
        key = (gen, k)
        if key not in self.cache:
            head = realize_tagged(self.spec, coproduct_left(self.spec, gen, k - 1))
            tail = shift_sites(self.spec.realization[gen], k - 1)
            self.cache[key] = (head, tail)
        return self.cache[key]

    def generators(self, k: int, lam: float) -> Dict[str, Expression]:
        if not 2 <= k <= self.N:
            raise ParameterMismatch(f"loop order k={k} outside 2..{self.N}")
        _check_pole_parameter(lam, self.epsilon)
        images = {}
        for gen in self.spec.generators:
            head, tail = self._parts(gen, k)
            images[gen] = head / lam + tail / (lam - self.epsilon)
        return images

    def image(self, f: Expression, k: int, lam: float) -> Expression:
        """A function of unsited generators pushed through Δ_λ^(k)."""
        return substitute(as_expr(f), self.generators(k, lam))


def loop_coproduct(
    spec: CoalgebraSpec, k: int, lam: float, epsilon: float, config: SiteConfig
) -> Dict[str, Expression]:
    """Realized Δ_λ^(k)(X) for every generator."""
    return LoopFamily(spec, config, epsilon).generators(k, lam)


DEFAULT_LAMBDAS = (-1.3, -0.4, 0.6, 1.7, 2.9)
DEFAULT_MUS = (-0.9, 0.3, 0.8, 1.4, 2.2)


def _fit_relation(
    family: LoopFamily, i: int, k: int, lam: float, mu: float, X: np.ndarray
) -> Optional[LoopRelationFit]:
    """Least-squares coefficients of {Δ_λ^(i)(a), Δ_μ^(k)(b)} in the structure functions."""
    if i == k and lam == mu:
        return None
    spec = family.spec
    left = family.generators(i, lam)
    right = family.generators(k, mu)
    gens = spec.generators
    pairs = [(a, b) for a in gens for b in gens if a != b]
    fields: List[Expression] = []
    for a, b in pairs:
        structure = spec.bracket(a, b)
        fields.extend([left[a], right[b], substitute(structure, left), substitute(structure, right)])
    jets = jets_batch(fields, X, family.params)

    targets, columns = [], []
    for n in range(len(pairs)):
        ja, jb, fl, fr = jets[4 * n: 4 * n + 4]
        targets.append(bracket_from_gradients(ja.gradients, jb.gradients))
        columns.append([fl.values] if i < k else [fl.values, fr.values])
    y = np.concatenate(targets)
    A = np.vstack([np.concatenate(col) for col in zip(*columns)]).T
    coefficients, *_ = np.linalg.lstsq(A, y, rcond=None)
    residual = float(np.max(np.abs(y - A @ coefficients)) / (1.0 + np.max(np.abs(y))))
    return LoopRelationFit(
        i=i,
        k=k,
        lam=lam,
        mu=mu,
        f=float(coefficients[0]),
        g=float(coefficients[1]) if i == k else None,
        residual=residual,
    )


def loop_involution_check(
    spec: CoalgebraSpec,
    config: SiteConfig,
    epsilon: float = 1.0,
    casimir: Optional[str] = None,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    mus: Sequence[float] = DEFAULT_MUS,
    box: SamplingBox = DEFAULT_BOX,
    samples: int = 50,
    seed: Optional[int] = None,
    tol: Optional[float] = None,
    jobs: Optional[int] = None,
    fit: bool = True,
) -> LoopInvolutionReport:
    """
    Check {Δ_λ^(i)(C), Δ_μ^(k)(C)} = 0 for 2 <= i <= k <= N over the λ x μ grid.

    With fit=True the generator brackets are also fitted against the structure
    functions on the paired (λ_j, μ_j) values.
    """
    seed = settings.seed if seed is None else seed
    tol = settings.tolerance if tol is None else tol
    jobs = settings.jobs if jobs is None else jobs
    family = LoopFamily(spec, config, epsilon)
    source = spec.casimir(casimir) if casimir else spec.integral_sources[0]
    for value in (*lambdas, *mus):
        _check_pole_parameter(value, epsilon)
    orders = [(i, k) for k in range(2, family.N + 1) for i in range(2, k + 1)]
    params = family.params
    start_time = time.time()

    def run(indexed):
        index, (i, k) = indexed
        X = box.sample(family.N, samples, rng_for(seed, index))
        fields = [family.image(source.expr, i, lam) for lam in lambdas]
        fields += [family.image(source.expr, k, mu) for mu in mus]
        jets = jets_batch(fields, X, params)
        left, right = jets[: len(lambdas)], jets[len(lambdas):]
        worst, checks = 0.0, 0
        for jl in left:
            for jr in right:
                worst = max(worst, float(np.max(normalized_bracket(jl.gradients, jr.gradients))))
                checks += 1
        fits = []
        if fit:
            for lam, mu in zip(lambdas, mus):
                relation = _fit_relation(family, i, k, lam, mu, X)
                if relation is not None:
                    fits.append(relation)
        return worst, checks, fits

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, enumerate(orders)))
    else:
        results = [run(item) for item in enumerate(orders)]

    max_residual = max(r[0] for r in results)
    fits = [relation for r in results for relation in r[2]]
    passed = max_residual <= tol and all(relation.residual <= FIT_TOLERANCE for relation in fits)
    report = LoopInvolutionReport(
        coalgebra=spec.name,
        n=family.N,
        epsilon=epsilon,
        casimir=source.name,
        lambdas=list(lambdas),
        mus=list(mus),
        checks=sum(r[1] for r in results),
        max_residual=max_residual,
        tolerance=tol,
        fits=fits,
        passed=passed,
    )
    logger.info(
        "Loop involution checked",
        coalgebra=spec.name,
        n=family.N,
        epsilon=epsilon,
        max_residual=max_residual,
        passed=passed,
        duration=time.time() - start_time,
    )
    return report
