"""
Trajectory integration of Hamilton's equations with the implicit midpoint rule.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from .catalog import CatalogEntry
from .config import settings
from .errors import DomainError, NoConvergence
from .expr import Expression, ParamSet, as_phase_batch, evaluate_batch, jets_batch
from .models import TrajectorySummary

logger = structlog.get_logger()

PointLike = Union[Sequence[float], np.ndarray]


@dataclass
class Trajectory:
    """Equally spaced states with monitored invariants."""
    system_id: str
    N: int
    step: float
    requested_steps: int
    times: np.ndarray
    states: np.ndarray
    monitors: Dict[str, np.ndarray] = field(default_factory=dict)
    truncated: bool = False
    truncation_reason: Optional[str] = None

    @property
    def steps_taken(self) -> int:
        return len(self.times) - 1

    def drift(self) -> Dict[str, float]:
        """max |v(t) - v(0)| / (|v(0)| + 1) per monitor."""
        return {
            label: float(np.max(np.abs(values - values[0])) / (abs(values[0]) + 1.0))
            for label, values in self.monitors.items()
        }

    def summary(self) -> TrajectorySummary:
        drift = self.drift()
        return TrajectorySummary(
            system_id=self.system_id,
            n=self.N,
            step=self.step,
            requested_steps=self.requested_steps,
            steps_taken=self.steps_taken,
            drift=drift,
            max_drift=max(drift.values(), default=0.0),
            truncated=self.truncated,
            truncation_reason=self.truncation_reason,
            truncation_time=float(self.times[-1]) if self.truncated else None,
        )

    def to_frame(self) -> pd.DataFrame:
        """Columns t, q1..qN, p1..pN, then one column per monitor."""
        columns = {"t": self.times}
        for i in range(self.N):
            columns[f"q{i + 1}"] = self.states[:, i]
        for i in range(self.N):
            columns[f"p{i + 1}"] = self.states[:, self.N + i]
        columns.update(self.monitors)
        return pd.DataFrame(columns)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def _flow(H: Expression, y: np.ndarray, params: ParamSet, order: int = 1):
    jet = jets_batch([H], y[None, :], params, order=order)[0]
    N = y.size // 2
    grad = jet.gradients[0]
    velocity = np.concatenate([grad[N:], -grad[:N]])
    if order < 2:
        return velocity, None
    hess = jet.hessians[0]
    return velocity, np.vstack([hess[N:], -hess[:N]])


def hamiltons_rhs(H: Expression, x: PointLike, params: Optional[ParamSet] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(dq/dt, dp/dt) = (grad_p H, -grad_q H)."""
    y = as_phase_batch(x)[0]
    velocity, _ = _flow(H, y, ParamSet() if params is None else params)
    N = y.size // 2
    return velocity[:N], velocity[N:]


def _converged(update: np.ndarray, y: np.ndarray, fp_tol: float) -> bool:
    return float(np.max(np.abs(update))) <= fp_tol * max(1.0, float(np.max(np.abs(y))))


def _fixed_point(H: Expression, x: np.ndarray, h: float, params: ParamSet, fp_tol: float, max_iter: int) -> np.ndarray:
    y = x + h * _flow(H, x, params)[0]
    for _ in range(max_iter):
        velocity, _ = _flow(H, 0.5 * (x + y), params)
        new = x + h * velocity
        update = new - y
        y = new
        if _converged(update, y, fp_tol):
            return y
    raise NoConvergence("fixed-point iteration did not converge", state=x, step=h)


def _newton(H: Expression, x: np.ndarray, h: float, params: ParamSet, fp_tol: float, max_iter: int) -> np.ndarray:
    y = x + h * _flow(H, x, params)[0]
    identity = np.eye(x.size)
    for _ in range(max_iter):
        velocity, jacobian = _flow(H, 0.5 * (x + y), params, order=2)
        residual = y - x - h * velocity
        update = np.linalg.solve(identity - 0.5 * h * jacobian, -residual)
        y = y + update
        if _converged(update, y, fp_tol):
            return y
    raise NoConvergence("Newton refinement did not converge", state=x, step=h)


def implicit_midpoint_step(
    H: Expression,
    x: PointLike,
    h: float,
    params: Optional[ParamSet] = None,
    fp_tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """
    One implicit midpoint step y = x + h J grad H((x + y)/2).

    Fixed-point iteration is tried first; on NoConvergence the step is retried
    once with Newton refinement from order-2 jets before the error propagates.
    """
    if h == 0:
        raise ValueError("step must be non-zero")
    fp_tol = settings.fp_tol if fp_tol is None else fp_tol
    max_iter = settings.max_iter if max_iter is None else max_iter
    params = ParamSet() if params is None else params
    state = as_phase_batch(x)[0]

    retrying = Retrying(
        stop=stop_after_attempt(2),
        retry=retry_if_exception_type(NoConvergence),
        reraise=True,
    )
    for attempt in retrying:
        with attempt:
            solver = _fixed_point if attempt.retry_state.attempt_number == 1 else _newton
            result = solver(H, state, h, params, fp_tol, max_iter)
    return result


def _guard_values(entry: CatalogEntry, y: np.ndarray) -> Optional[np.ndarray]:
    if not entry.guards:
        return None
    return np.array([evaluate_batch(g, y[None, :], entry.params)[0] for g in entry.guards])


def _guard_violation(values: Optional[np.ndarray], initial: Optional[np.ndarray], margin: float) -> Optional[str]:
    if values is None:
        return None
    for k, (value, start) in enumerate(zip(values, initial)):
        if abs(value) <= margin or np.sign(value) != np.sign(start):
            return f"singular locus: guard {k + 1} reached {value:.3e}"
    return None


def integrate(
    entry: CatalogEntry,
    x0: PointLike,
    h: float,
    steps: int,
    monitors: Optional[Dict[str, Expression]] = None,
    fp_tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    singular_margin: Optional[float] = None,
) -> Trajectory:
    """
    Integrate the entry's Hamiltonian from x0.

    H and every integral of the family are monitored unless `monitors` is given.
    Solver failures and guard crossings truncate the trajectory at the last
    valid state instead of raising.
    """
    margin = settings.singular_margin if singular_margin is None else singular_margin
    x = as_phase_batch(x0)[0].astype(float)
    if x.size != 2 * entry.N:
        raise DomainError(f"initial state has {x.size} components, expected {2 * entry.N}", point=x)
    if monitors is None:
        monitors = {"H": entry.hamiltonian}
        monitors.update({item.label: item.expr for item in entry.integrals.labeled()})
    if not entry.box.contains(x):
        logger.warning("Initial state outside the sampling box", system_id=entry.id, state=x.tolist())

    initial_guards = _guard_values(entry, x)
    reason = _guard_violation(initial_guards, initial_guards, margin)
    if reason:
        raise DomainError(f"initial state on a {reason}", point=x)

    start_time = time.time()
    states = [x]
    truncated = False
    for _ in range(steps):
        try:
            y = implicit_midpoint_step(entry.hamiltonian, states[-1], h, entry.params, fp_tol, max_iter)
            reason = _guard_violation(_guard_values(entry, y), initial_guards, margin)
            if reason is None and not np.all(np.isfinite(y)):
                reason = "non-finite state"
        except (NoConvergence, DomainError) as exc:
            reason = str(exc)
        if reason:
            truncated = True
            logger.warning(
                "Trajectory truncated",
                system_id=entry.id,
                steps_taken=len(states) - 1,
                reason=reason,
            )
            break
        states.append(y)

    trajectory_states = np.vstack(states)
    monitored = {label: evaluate_batch(expr, trajectory_states, entry.params) for label, expr in monitors.items()}
    trajectory = Trajectory(
        system_id=entry.id,
        N=entry.N,
        step=h,
        requested_steps=steps,
        times=h * np.arange(len(states)),
        states=trajectory_states,
        monitors=monitored,
        truncated=truncated,
        truncation_reason=reason if truncated else None,
    )
    drift = trajectory.drift()
    logger.info(
        "Trajectory integrated",
        system_id=entry.id,
        steps=trajectory.steps_taken,
        max_drift=max(drift.values(), default=0.0),
        truncated=truncated,
        duration=time.time() - start_time,
    )
    return trajectory


def integrate_batch(
    entry: CatalogEntry,
    initial_states: Sequence[PointLike],
    h: float,
    steps: int,
    jobs: Optional[int] = None,
) -> List[Trajectory]:
    """Independent trajectories from several initial states, in input order."""
    jobs = settings.jobs if jobs is None else jobs
    if jobs <= 1:
        return [integrate(entry, x0, h, steps) for x0 in initial_states]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda x0: integrate(entry, x0, h, steps), initial_states))
