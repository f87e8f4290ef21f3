"""
Numerical integrability audits: involution matrices, functional-independence
ranks, superintegrability classification and parameter-limit convergence.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .algebras import GROUP_COMMON, GROUP_LEFT, GROUP_RIGHT
from .catalog import CatalogEntry
from .config import settings
from .errors import ParameterMismatch
from .expr import (
    Expression,
    ParamSet,
    evaluate_batch,
    jacobi_residual,
    jets_batch,
    max_coordinate,
    normalized_bracket,
)
from .models import (
    CheckStatus,
    InvolutionMatrix,
    LimitReport,
    PairResidual,
    RankResult,
    SystemClass,
    VerificationReport,
)
from .sampling import SamplingBox, rng_for

logger = structlog.get_logger()

HAMILTONIAN = "H"
MIN_INVOLUTION_SAMPLES = 10
# deviations at or below this count as an exact limit
EXACT_LIMIT = 1e-12
MIN_LIMIT_ORDER = 0.9


def _required(first: Optional[str], second: Optional[str]) -> bool:
    """Left and right sets are only claimed to be involutive internally."""
    if first is None or second is None:
        return True
    if GROUP_COMMON in (first, second):
        return True
    return first == second and first in (GROUP_LEFT, GROUP_RIGHT)


def _gradients(
    fields: Sequence[Expression], X: np.ndarray, params: ParamSet, jobs: int
) -> List[np.ndarray]:
    if jobs <= 1 or len(X) < 2 * jobs:
        return [jet.gradients for jet in jets_batch(fields, X, params)]
    chunks = np.array_split(X, jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(lambda chunk: jets_batch(fields, chunk, params), chunks))
    return [np.concatenate([part[k].gradients for part in parts]) for k in range(len(fields))]


def involution_matrix(
    fields: Sequence[Expression],
    H: Expression,
    box: SamplingBox,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    tol: Optional[float] = None,
    params: Optional[ParamSet] = None,
    labels: Optional[Sequence[str]] = None,
    groups: Optional[Sequence[Optional[str]]] = None,
    jobs: Optional[int] = None,
    N: Optional[int] = None,
) -> InvolutionMatrix:
    """
    Max normalized |{f_i, f_j}| over sampled points with H as row 0.

    Pairs whose groups are not claimed to commute are reported with
    INFORMATIONAL status and do not affect `passed`.
    """
    samples = settings.samples if samples is None else samples
    seed = settings.seed if seed is None else seed
    tol = settings.tolerance if tol is None else tol
    jobs = settings.jobs if jobs is None else jobs
    params = ParamSet() if params is None else params
    if samples < MIN_INVOLUTION_SAMPLES:
        raise ParameterMismatch(f"involution checks need at least {MIN_INVOLUTION_SAMPLES} samples, got {samples}")
    labels = [f"f{k + 1}" for k in range(len(fields))] if labels is None else list(labels)
    groups = [None] * len(fields) if groups is None else list(groups)
    if len(labels) != len(fields) or len(groups) != len(fields):
        raise ParameterMismatch("labels and groups must match the number of fields")

    everything = [H, *fields]
    all_labels = [HAMILTONIAN, *labels]
    all_groups: List[Optional[str]] = [None, *groups]
    N = max(1, _phase_dimension(everything) // 2) if N is None else N
    X = box.sample(N, samples, rng_for(seed, 0))
    grads = _gradients(everything, X, params, jobs)

    size = len(everything)
    residuals = np.zeros((size, size))
    pairs: List[PairResidual] = []
    for i in range(size):
        for j in range(i + 1, size):
            value = float(np.max(normalized_bracket(grads[i], grads[j])))
            residuals[i, j] = residuals[j, i] = value
            required = i == 0 or _required(all_groups[i], all_groups[j])
            if required:
                status = CheckStatus.PASSED if value <= tol else CheckStatus.FAILED
            else:
                status = CheckStatus.INFORMATIONAL
            pairs.append(PairResidual(first=all_labels[i], second=all_labels[j], residual=value, required=required, status=status))

    return InvolutionMatrix(
        labels=all_labels,
        residuals=residuals.tolist(),
        pairs=pairs,
        tolerance=tol,
        passed=all(pair.status != CheckStatus.FAILED for pair in pairs),
    )


def _phase_dimension(fields: Sequence[Expression]) -> int:
    return 2 * (max(max_coordinate(f) for f in fields) + 1)


def independence_rank(
    fields: Sequence[Expression],
    box: SamplingBox,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    params: Optional[ParamSet] = None,
    N: Optional[int] = None,
    clouds: Optional[int] = None,
    cutoff: Optional[float] = None,
    labels: Optional[Sequence[str]] = None,
) -> RankResult:
    """
    Functional-independence rank of `fields`.

    At every sampled point the gradients form a k x 2N matrix whose numerical
    rank uses the cutoff sigma_max * `cutoff`; the reported rank is the maximum
    over all points of `clouds` independent point clouds. Points below the
    maximum are counted as degenerate.
    """
    samples = settings.samples if samples is None else samples
    seed = settings.seed if seed is None else seed
    clouds = settings.rank_clouds if clouds is None else clouds
    cutoff = settings.rank_cutoff if cutoff is None else cutoff
    params = ParamSet() if params is None else params
    labels = [f"f{k + 1}" for k in range(len(fields))] if labels is None else list(labels)
    if not fields:
        return RankResult(labels=[], rank=0, cutoff=cutoff, singular_values=[], point=[], clouds=clouds)
    if samples < len(fields):
        raise ParameterMismatch(f"rank needs at least as many samples as fields ({len(fields)}), got {samples}")
    N = _phase_dimension(fields) // 2 if N is None else N

    ranks, spectra, points = [], [], []
    for cloud in range(clouds):
        X = box.sample(N, samples, rng_for(seed, 1000 + cloud))
        jacobian = np.stack([jet.gradients for jet in jets_batch(fields, X, params)], axis=1)
        sigma = np.linalg.svd(jacobian, compute_uv=False)
        threshold = sigma[:, :1] * cutoff
        ranks.append(np.sum(sigma > threshold, axis=1))
        spectra.append(sigma)
        points.append(X)
    ranks_all = np.concatenate(ranks)
    spectra_all = np.concatenate(spectra)
    points_all = np.concatenate(points)
    best = int(np.argmax(ranks_all))
    rank = int(ranks_all[best])
    return RankResult(
        labels=labels,
        rank=rank,
        cutoff=cutoff,
        singular_values=[float(v) for v in spectra_all[best]],
        point=[float(v) for v in points_all[best]],
        clouds=clouds,
        degenerate_points=int(np.sum(ranks_all < rank)),
    )


def classify_counts(involutive: int, total: int, N: int) -> SystemClass:
    """Map independent-integral counts (H excluded) to an integrability class."""
    if involutive >= N - 1:
        if total >= 2 * N - 2:
            return SystemClass.MS
        if total == 2 * N - 3 and total > N - 1:
            return SystemClass.QMS
        if total > N - 1:
            return SystemClass.MIN_SI
        return SystemClass.INTEGRABLE
    if N >= 3 and involutive == N - 2 and total == 2 * N - 5:
        return SystemClass.QUASI_INTEGRABLE
    return SystemClass.NOT_VERIFIED


def _jacobi_probe(entry: CatalogEntry, fields: Sequence[Expression], X: np.ndarray) -> Optional[float]:
    if len(fields) < 2:
        return None
    residual = jacobi_residual(entry.hamiltonian, fields[0], fields[1], X, entry.params)
    return float(np.max(np.abs(residual)))


def _scale_probe(entry: CatalogEntry, field: Expression, X: np.ndarray, factor: float = 3.7) -> float:
    """Change of the normalized bracket with H when the integral is rescaled."""
    jets = jets_batch([entry.hamiltonian, field, factor * field], X, entry.params)
    plain = normalized_bracket(jets[0].gradients, jets[1].gradients)
    scaled = normalized_bracket(jets[0].gradients, jets[2].gradients)
    return float(np.max(np.abs(plain - scaled)))


def classify(
    entry: CatalogEntry,
    box: Optional[SamplingBox] = None,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    tol: Optional[float] = None,
    jobs: Optional[int] = None,
) -> VerificationReport:
    """Audit one catalog entry; failed checks are recorded, never raised."""
    box = entry.box if box is None else box
    samples = settings.samples if samples is None else samples
    seed = settings.seed if seed is None else seed
    tol = settings.tolerance if tol is None else tol
    start_time = time.time()
    notes = list(entry.notes)
    N = entry.N

    family = entry.integrals.labeled()
    if not family:
        notes.append("no integral family: the claimed class cannot be verified here")
        report = VerificationReport(
            system_id=entry.id,
            n=N,
            claimed_class=entry.claimed_class,
            verified_class=SystemClass.NOT_VERIFIED,
            claim_satisfied=False,
            samples=samples,
            seed=seed,
            tolerance=tol,
            notes=notes,
            passed=True,
        )
        logger.info("Verification skipped", system_id=entry.id, n=N, reason="empty integral family")
        return report

    labels = [item.label for item in family]
    fields = [item.expr for item in family]
    groups = [item.group for item in family]
    matrix = involution_matrix(
        fields, entry.hamiltonian, box, samples, seed, tol, entry.params, labels, groups, jobs, N
    )

    residual_with_h = {pair.second: pair.residual for pair in matrix.pairs if pair.first == HAMILTONIAN}
    commuting = [label for label in labels if residual_with_h[label] <= tol]
    by_label = dict(zip(labels, fields))

    def rank_of(selected: Sequence[str]) -> RankResult:
        exprs = [entry.hamiltonian, *[by_label[label] for label in selected]]
        return independence_rank(exprs, box, max(samples, len(exprs)), seed, entry.params, N, labels=[HAMILTONIAN, *selected])

    def involutive(selected: Sequence[str]) -> bool:
        chosen = set(selected)
        return all(
            pair.residual <= tol
            for pair in matrix.pairs
            if pair.first in chosen and pair.second in chosen
        )

    involutive_count = 0
    for side in (GROUP_LEFT, GROUP_RIGHT):
        subset = [label for label, group in zip(labels, groups) if group in (side, GROUP_COMMON) and label in commuting]
        if subset and involutive(subset):
            involutive_count = max(involutive_count, rank_of(subset).rank - 1)

    rank = rank_of(commuting)
    independent_count = max(rank.rank - 1, 0)
    verified = classify_counts(involutive_count, independent_count, N)
    expected = entry.expected_class
    claim_satisfied = verified.at_least(expected)
    if expected != entry.claimed_class:
        notes.append(f"claimed {entry.claimed_class.value}; the built integrals can certify {expected.value}")
    if rank.degenerate_points:
        notes.append(f"{rank.degenerate_points} sampled points have a lower gradient rank")

    X = box.sample(N, min(samples, 20), rng_for(seed, 7))
    report = VerificationReport(
        system_id=entry.id,
        n=N,
        claimed_class=entry.claimed_class,
        verified_class=verified,
        claim_satisfied=claim_satisfied,
        involution=matrix,
        rank=rank,
        commuting_integrals=commuting,
        involutive_count=involutive_count,
        independent_count=independent_count,
        jacobi_residual=_jacobi_probe(entry, fields, X),
        scale_invariance_residual=_scale_probe(entry, fields[0], X),
        samples=samples,
        seed=seed,
        tolerance=tol,
        notes=notes,
        passed=matrix.passed and claim_satisfied,
    )
    logger.info(
        "Verification completed",
        system_id=entry.id,
        n=N,
        verified_class=verified.value,
        involutive=involutive_count,
        independent=independent_count,
        passed=report.passed,
        duration=time.time() - start_time,
    )
    return report


def _series(entry: CatalogEntry) -> Dict[str, Expression]:
    series = {HAMILTONIAN: entry.hamiltonian}
    series.update({item.label: item.expr for item in entry.integrals.labeled()})
    return series


def _fit_order(values: Sequence[float], deviations: Sequence[float]) -> Optional[float]:
    devs = np.asarray(deviations)
    if np.all(devs <= EXACT_LIMIT):
        return None
    if np.any(devs <= 0.0):
        return 0.0
    slope, _ = np.polyfit(np.log(values), np.log(devs), 1)
    return float(slope)


def limit_check(
    family: Callable[[float], CatalogEntry],
    target: CatalogEntry,
    values: Sequence[float],
    box: Optional[SamplingBox] = None,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    parameter: str = "z",
) -> LimitReport:
    """Deviation of H and each shared integral from the target along a parameter sweep."""
    samples = settings.samples if samples is None else samples
    seed = settings.seed if seed is None else seed
    values = [float(v) for v in values]
    if len(values) < 3:
        raise ParameterMismatch("a limit check needs at least three parameter values")
    if any(v <= 0 for v in values) or any(b >= a for a, b in zip(values, values[1:])):
        raise ParameterMismatch(f"limit values must be positive and strictly decreasing, got {values}")

    entries = [family(v) for v in values]
    box = entries[0].box if box is None else box
    X = box.sample(target.N, samples, rng_for(seed, 2000))
    reference = {label: evaluate_batch(expr, X, target.params) for label, expr in _series(target).items()}

    deviations: Dict[str, List[float]] = {label: [] for label in reference}
    for entry in entries:
        series = _series(entry)
        for label, expected in reference.items():
            if label not in series:
                continue
            actual = evaluate_batch(series[label], X, entry.params)
            deviations[label].append(float(np.max(np.abs(actual - expected))))
    deviations = {label: devs for label, devs in deviations.items() if len(devs) == len(values)}

    orders = {label: _fit_order(values, devs) for label, devs in deviations.items()}
    passed = True
    for label, devs in deviations.items():
        if orders[label] is None:
            continue
        shrinking = all(b < a for a, b in zip(devs, devs[1:]))
        passed = passed and shrinking and orders[label] >= MIN_LIMIT_ORDER
    fitted = [order for order in orders.values() if order is not None]
    report = LimitReport(
        parameter=parameter,
        values=values,
        deviations=deviations,
        max_deviation=[max(devs[k] for devs in deviations.values()) for k in range(len(values))],
        order=min(fitted) if fitted else None,
        orders=orders,
        passed=passed,
    )
    logger.info(
        "Limit check completed",
        target=target.id,
        parameter=parameter,
        order=report.order,
        passed=passed,
    )
    return report


def pair_table(matrix: InvolutionMatrix) -> List[Tuple[str, str, float, str]]:
    """Flat (first, second, residual, status) rows, worst first."""
    rows = [(pair.first, pair.second, pair.residual, pair.status.value) for pair in matrix.pairs]
    return sorted(rows, key=lambda row: -row[2])
