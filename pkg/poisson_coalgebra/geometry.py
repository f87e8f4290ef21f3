"""
Riemannian diagnostics for coalgebra spaces.

Metrics are matrices of Expressions over the positions q. Scalar curvature is
computed numerically (Christoffel symbols, Riemann and Ricci tensors) from
exact metric jets, and compared against closed forms for conformally flat and
deformed metrics.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from .errors import DimensionMismatch, NonMetric
from .expr import (
    EMPTY_PARAMS,
    Expression,
    ParamSet,
    as_expr,
    const,
    cosh,
    differentiate,
    esum,
    evaluate_batch,
    exp,
    free_symbols,
    jets_batch,
    param,
    q,
    sinh,
    sinhc,
    sqrt,
    square,
    substitute,
    symbol,
)
from .models import CurvatureRow

logger = structlog.get_logger()

RADIUS = "r"
DEFORMED_ARGUMENT = "x"


@dataclass(frozen=True)
class MetricField:
    """Symmetric N x N metric whose entries are Expressions in q_1..q_N."""
    N: int
    components: Tuple[Tuple[Expression, ...], ...]
    params: ParamSet = EMPTY_PARAMS
    name: str = "metric"

    def __post_init__(self):
        if len(self.components) != self.N or any(len(row) != self.N for row in self.components):
            raise DimensionMismatch(f"metric '{self.name}' is not {self.N} x {self.N}")
        stray = sorted(name for name, _ in set().union(*(free_symbols(c) for row in self.components for c in row)))
        if stray:
            raise NonMetric(f"metric '{self.name}' has unbound placeholders: {', '.join(stray)}")

    @classmethod
    def diagonal(cls, entries: Sequence[Expression], params: ParamSet = EMPTY_PARAMS, name: str = "metric"):
        N = len(entries)
        rows = tuple(
            tuple(as_expr(entries[i]) if i == j else const(0.0) for j in range(N)) for i in range(N)
        )
        return cls(N, rows, params, name)

    def at(self, Q: np.ndarray) -> np.ndarray:
        """Metric matrices of shape (P, N, N) at positions Q of shape (P, N)."""
        return self.derivatives(Q, order=0)[0]

    def derivatives(self, Q: np.ndarray, order: int = 2) -> Tuple[np.ndarray, ...]:
        """g (P,N,N) with dg[p,i,j,k] = d_k g_ij and d2g[p,i,j,k,l] = d_k d_l g_ij."""
        Q = _positions(Q, self.N)
        X = np.hstack([Q, np.zeros_like(Q)])
        N = self.N
        upper = [(i, j) for i in range(N) for j in range(i, N)]
        jets = jets_batch([self.components[i][j] for i, j in upper], X, self.params, order=order)
        P = Q.shape[0]
        g = np.zeros((P, N, N))
        dg = np.zeros((P, N, N, N))
        d2g = np.zeros((P, N, N, N, N))
        for (i, j), item in zip(upper, jets):
            for a, b in {(i, j), (j, i)}:
                g[:, a, b] = item.values
                if order >= 1:
                    dg[:, a, b, :] = item.gradients[:, :N]
                if order >= 2:
                    d2g[:, a, b, :, :] = item.hessians[:, :N, :N]
        return g, dg, d2g

    def fd_derivatives(self, Q: np.ndarray, h: float = 1e-4) -> Tuple[np.ndarray, ...]:
        """Central-difference oracle for derivatives()."""
        if h <= 0:
            raise ValueError(f"finite-difference step must be positive, got {h}")
        Q = _positions(Q, self.N)
        N = self.N
        g = self.at(Q)
        dg = np.zeros(g.shape + (N,))
        d2g = np.zeros(g.shape + (N, N))
        eye = np.eye(N) * h
        for k in range(N):
            dg[..., k] = (self.at(Q + eye[k]) - self.at(Q - eye[k])) / (2 * h)
            for l in range(k, N):
                second = (
                    self.at(Q + eye[k] + eye[l])
                    - self.at(Q + eye[k] - eye[l])
                    - self.at(Q - eye[k] + eye[l])
                    + self.at(Q - eye[k] - eye[l])
                ) / (4 * h * h)
                d2g[..., k, l] = second
                d2g[..., l, k] = second
        return g, dg, d2g


def _positions(Q, N: int) -> np.ndarray:
    arr = np.asarray(Q, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[-1] != N:
        raise DimensionMismatch(f"expected positions with {N} components, got shape {arr.shape}")
    return arr


def radius(N: int) -> Expression:
    return sqrt(esum(square(q(i)) for i in range(N)))


def flat_metric(N: int) -> MetricField:
    return MetricField.diagonal([const(1.0)] * N, name="flat")


def conformal_metric(f: Expression, N: int, params: ParamSet = EMPTY_PARAMS, name: str = "conformal") -> MetricField:
    """ds^2 = f(|q|)^2 dq^2 with f given in the placeholder r."""
    factor = square(substitute(f, {RADIUS: radius(N)}))
    return MetricField.diagonal([factor] * N, params, name)


def beltrami_metric(N: int, params: ParamSet, name: str = "beltrami") -> MetricField:
    """Inverse of (1 + kappa q^2)(delta_ij + kappa q_i q_j)."""
    kappa = param("kappa")
    s = 1 + kappa * esum(square(q(i)) for i in range(N))
    rows = tuple(
        tuple(((s if i == j else 0) - kappa * q(i) * q(j)) / square(s) for j in range(N))
        for i in range(N)
    )
    return MetricField(N, rows, params, name)


def deformed_metric(g: Expression, N: int, params: ParamSet, name: str = "deformed") -> MetricField:
    """2 / (g(z q^2) s_i w_i) with s_i = sinh(z q_i^2)/(z q_i^2) and ordered exponential weights w_i."""
    z = param("z")
    total = esum(square(q(k)) for k in range(N))
    g_of_x = substitute(g, {DEFORMED_ARGUMENT: z * total})
    entries = []
    for i in range(N):
        before = esum(square(q(k)) for k in range(i))
        after = esum(square(q(k)) for k in range(i + 1, N))
        weight = exp(-z * before + z * after)
        entries.append(2 / (g_of_x * sinhc(z * square(q(i))) * weight))
    return MetricField.diagonal(entries, params, name)


def check_positive_definite(g: np.ndarray, Q: np.ndarray, name: str = "metric") -> None:
    """Leading principal minors must all be positive."""
    N = g.shape[-1]
    for k in range(1, N + 1):
        minors = np.linalg.det(g[:, :k, :k])
        bad = np.flatnonzero(~(minors > 0))
        if bad.size:
            raise NonMetric(
                f"{name} is not positive-definite at q={list(np.atleast_2d(Q)[bad[0]])} "
                f"(leading minor {k} = {minors[bad[0]]:.3e})"
            )


def _curvature_from_derivatives(g: np.ndarray, dg: np.ndarray, d2g: np.ndarray) -> np.ndarray:
    ginv = np.linalg.inv(g)
    # T[d,b,c] = d_b g_dc + d_c g_db - d_d g_bc
    T = dg.transpose(0, 1, 3, 2) + dg - dg.transpose(0, 3, 1, 2)
    gamma = 0.5 * np.einsum("pad,pdbc->pabc", ginv, T)
    dginv = -np.einsum("pam,pmne,pnd->pade", ginv, dg, ginv)
    dT = d2g.transpose(0, 1, 3, 2, 4) + d2g - d2g.transpose(0, 3, 1, 2, 4)
    dgamma = 0.5 * (
        np.einsum("pade,pdbc->pabce", dginv, T) + np.einsum("pad,pdbce->pabce", ginv, dT)
    )
    riemann = (
        np.einsum("padbc->pabcd", dgamma)
        - np.einsum("pacbd->pabcd", dgamma)
        + np.einsum("pace,pedb->pabcd", gamma, gamma)
        - np.einsum("pade,pecb->pabcd", gamma, gamma)
    )
    ricci = np.einsum("pabad->pbd", riemann)
    return np.einsum("pbd,pbd->p", ginv, ricci)


def scalar_curvature_batch(metric: MetricField, Q, method: str = "jet", h: float = 1e-4) -> np.ndarray:
    """Scalar curvature at each row of Q."""
    Q = _positions(Q, metric.N)
    if method == "jet":
        g, dg, d2g = metric.derivatives(Q)
    elif method == "fd":
        g, dg, d2g = metric.fd_derivatives(Q, h)
    else:
        raise ValueError(f"unknown derivative method '{method}'")
    check_positive_definite(g, Q, metric.name)
    return _curvature_from_derivatives(g, dg, d2g)


def scalar_curvature_numeric(metric: MetricField, x: Sequence[float], h: Optional[float] = None) -> float:
    """R(x) from exact jets, or from central differences when a step h is given."""
    if h is None:
        return float(scalar_curvature_batch(metric, x)[0])
    return float(scalar_curvature_batch(metric, x, method="fd", h=h)[0])


def gaussian_curvature_numeric(metric: MetricField, x: Sequence[float]) -> float:
    if metric.N != 2:
        raise DimensionMismatch("Gaussian curvature needs a 2-dimensional metric")
    return 0.5 * scalar_curvature_numeric(metric, x)


# Closed forms
def conformal_curvature_expr(f: Expression, N: int) -> Expression:
    """Scalar curvature of f(|q|)^2 dq^2 as a field over q."""
    r = radius(N)
    f1 = differentiate(f, RADIUS)
    f2 = differentiate(f1, RADIUS)
    rho = symbol(RADIUS)
    numerator = 2 * f * f2 + 2 * (N - 1) * f * f1 / rho + (N - 4) * square(f1)
    closed = -(N - 1) * numerator / square(square(f))
    return substitute(closed, {RADIUS: r})


def _check_positive(value: np.ndarray, what: str, Q) -> None:
    bad = np.flatnonzero(~(value > 0))
    if bad.size:
        raise NonMetric(f"{what} must be positive, got {value[bad[0]]:.3e} at q={list(np.atleast_2d(Q)[bad[0]])}")


def scalar_curvature_conformal(f: Expression, N: int, x: Sequence[float], params: ParamSet = EMPTY_PARAMS) -> float:
    """Closed-form conformal scalar curvature at positions x."""
    Q = _positions(x, N)
    X = np.hstack([Q, np.zeros_like(Q)])
    _check_positive(evaluate_batch(substitute(f, {RADIUS: radius(N)}), X, params), "conformal factor", Q)
    return float(evaluate_batch(conformal_curvature_expr(f, N), X, params)[0])


def _deformed_parts(g: Expression) -> Tuple[Expression, Expression, Expression]:
    g1 = differentiate(g, DEFORMED_ARGUMENT)
    return g, g1, differentiate(g1, DEFORMED_ARGUMENT)


def gaussian_curvature_z_expr(g: Expression) -> Expression:
    """K(x) = z (g' cosh x + (g'' - g - g'^2/g) sinh x), in the placeholder x."""
    x = symbol(DEFORMED_ARGUMENT)
    g0, g1, g2 = _deformed_parts(g)
    return param("z") * (g1 * cosh(x) + (g2 - g0 - square(g1) / g0) * sinh(x))


def scalar_curvature_z3_expr(g: Expression) -> Expression:
    """R(x) = z (6 g' cosh x + (4 g'' - 5 g - 5 g'^2/g) sinh x) for three sites."""
    x = symbol(DEFORMED_ARGUMENT)
    g0, g1, g2 = _deformed_parts(g)
    return param("z") * (6 * g1 * cosh(x) + (4 * g2 - 5 * g0 - 5 * square(g1) / g0) * sinh(x))


def _evaluate_in_x(f: Expression, g: Expression, z: float, x: float, params: ParamSet) -> float:
    values = params.with_values(z=z)
    point = np.array([[0.0, 0.0]])
    g_value = evaluate_batch(substitute(g, {DEFORMED_ARGUMENT: x}), point, values)
    _check_positive(g_value, "g", [x])
    return float(evaluate_batch(substitute(f, {DEFORMED_ARGUMENT: x}), point, values)[0])


def gaussian_curvature_z(g: Expression, z: float, x: float, params: ParamSet = EMPTY_PARAMS) -> float:
    return _evaluate_in_x(gaussian_curvature_z_expr(g), g, z, x, params)


def scalar_curvature_z3(g: Expression, z: float, x: float, params: ParamSet = EMPTY_PARAMS) -> float:
    return _evaluate_in_x(scalar_curvature_z3_expr(g), g, z, x, params)


def deformed_curvature_expr(g: Expression, N: int) -> Optional[Expression]:
    """Closed-form scalar curvature field over q for N = 2 (2K) and N = 3; None otherwise."""
    total = param("z") * esum(square(q(i)) for i in range(N))
    if N == 2:
        return substitute(2 * gaussian_curvature_z_expr(g), {DEFORMED_ARGUMENT: total})
    if N == 3:
        return substitute(scalar_curvature_z3_expr(g), {DEFORMED_ARGUMENT: total})
    return None


def curvature_rows(
    metric: MetricField, Q, closed: Optional[Expression] = None, method: str = "jet"
) -> List[CurvatureRow]:
    """Numeric and closed-form scalar curvature at each row of Q."""
    Q = _positions(Q, metric.N)
    numeric = scalar_curvature_batch(metric, Q, method=method)
    closed_values = None
    if closed is not None:
        closed_values = evaluate_batch(closed, np.hstack([Q, np.zeros_like(Q)]), metric.params)
    rows = []
    for k, point in enumerate(Q):
        c = None if closed_values is None else float(closed_values[k])
        rows.append(
            CurvatureRow(
                point=k,
                q=[float(v) for v in point],
                closed=c,
                numeric=float(numeric[k]),
                difference=None if c is None else abs(c - float(numeric[k])),
            )
        )
    logger.info(
        "Curvature table computed",
        metric=metric.name,
        n=metric.N,
        points=len(rows),
        max_difference=max((r.difference for r in rows if r.difference is not None), default=None),
    )
    return rows


def curvature_frame(rows: Sequence[CurvatureRow]) -> pd.DataFrame:
    """Flat table with columns point, q1..qN, closed, numeric, difference."""
    records = []
    for row in rows:
        record = {"point": row.point}
        record.update({f"q{i + 1}": v for i, v in enumerate(row.q)})
        record.update({"closed": row.closed, "numeric": row.numeric, "difference": row.difference})
        records.append(record)
    return pd.DataFrame.from_records(records)
