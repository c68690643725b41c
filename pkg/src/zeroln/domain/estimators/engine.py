"""Fixed-point driver shared by every iterated estimator.

A fit supplies a map G(θ) → θ' (one OLS / 2SLS step on the current
transformed outcome). The driver iterates it until the sup-norm step is
within tolerance, watches the contraction modulus κ̂ and optionally
extrapolates with SQUAREM when the map contracts slowly (large δ).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt

from zeroln.domain.errors import InsufficientTrace, KappaGuardTripped, NonFinite, NotConverged
from zeroln.domain.models.data import FloatArray

logger = logging.getLogger(__name__)


@dataclass
class Evaluation:
    """One application of the iteration map."""

    next_state: FloatArray
    clamp_count: int = 0


IterationMap = Callable[[FloatArray], Evaluation]


@dataclass
class IterationOutcome:
    state: FloatArray
    trace: list[FloatArray]
    evaluations: int
    converged: bool
    kappa_hat: float
    clamp_count: int = 0
    accelerated_steps: int = 0
    rejected_steps: int = 0
    extra: dict[str, float] = field(default_factory=dict)


def estimate_kappa(beta_trace: Sequence[npt.ArrayLike]) -> float:
    """Median of successive sup-norm step ratios ‖β_{t+1}−β_t‖ / ‖β_t−β_{t−1}‖.

    A zero step contributes a zero ratio (the iteration has stopped moving).
    """
    if len(beta_trace) < 3:
        raise InsufficientTrace("κ̂ needs at least three iterates", iterates=len(beta_trace))
    trace = np.asarray([np.asarray(b, dtype=np.float64) for b in beta_trace])
    steps = np.max(np.abs(np.diff(trace, axis=0)), axis=1)
    ratios = np.zeros(steps.size - 1)
    np.divide(steps[1:], steps[:-1], out=ratios, where=steps[:-1] > 0)
    return float(np.median(ratios))


def iteration_bound(n: int, kappa_hat: float) -> int | None:
    """⌈−½·log n / log κ̂⌉, or None when κ̂ ∉ (0, 1)."""
    if not 0.0 < kappa_hat < 1.0 or n <= 1:
        return None
    return int(np.ceil(-0.5 * np.log(n) / np.log(kappa_hat)))


def _sup(v: FloatArray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _step_small(old: FloatArray, new: FloatArray, tol: float) -> bool:
    return _sup(new - old) <= tol * (1.0 + _sup(old))


def run_fixed_point(
    step: IterationMap,
    theta0: npt.ArrayLike,
    *,
    max_iter: int,
    tol: float,
    kappa_guard: float,
    kappa_window: int,
    beta_slice: slice = slice(None),
    accelerate: bool = True,
    label: str = "iols",
) -> IterationOutcome:
    """Iterate ``step`` from ``theta0`` to a fixed point.

    Convergence is judged on a plain map step, so the returned state always
    satisfies ‖G(θ) − θ‖∞ ≤ tol·(1+‖θ‖∞) one step earlier. ``max_iter``
    counts map evaluations (OLS solves). Raises ``KappaGuardTripped`` when κ̂
    over the last ``kappa_window`` ratios reaches ``kappa_guard`` and
    ``NotConverged`` (with the outcome attached) when the budget runs out.
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    outcome = IterationOutcome(
        state=theta, trace=[theta[beta_slice].copy()], evaluations=0,
        converged=False, kappa_hat=0.0,
    )

    def evaluate(x: FloatArray) -> FloatArray:
        ev = step(x)
        outcome.evaluations += 1
        outcome.clamp_count += ev.clamp_count
        if not np.all(np.isfinite(ev.next_state)):
            raise NonFinite("iteration produced a non-finite state", iteration=outcome.evaluations)
        return ev.next_state

    while outcome.evaluations < max_iter:
        x1 = evaluate(theta)
        if _step_small(theta, x1, tol):
            theta = x1
            outcome.trace.append(theta[beta_slice].copy())
            outcome.converged = True
            break

        if accelerate and outcome.evaluations + 2 <= max_iter:
            theta_new = _squarem_step(theta, x1, evaluate, outcome)
        else:
            theta_new = x1

        logger.debug(
            "%s iteration %d: step %.3e", label, outcome.evaluations, _sup(theta_new - theta),
        )
        theta = theta_new
        outcome.trace.append(theta[beta_slice].copy())

        if len(outcome.trace) >= kappa_window + 2:
            window_kappa = estimate_kappa(outcome.trace[-(kappa_window + 2):])
            if not window_kappa < kappa_guard:
                outcome.state = theta
                outcome.kappa_hat = window_kappa
                raise KappaGuardTripped(
                    f"contraction modulus κ̂={window_kappa:.4f} reached the guard {kappa_guard}",
                    kappa_hat=window_kappa,
                    advice="refit with a larger delta",
                    iterations=outcome.evaluations,
                )

    outcome.state = theta
    outcome.kappa_hat = estimate_kappa(outcome.trace) if len(outcome.trace) >= 3 else 0.0
    if not outcome.converged:
        raise NotConverged(
            f"{label} did not converge in {max_iter} iterations",
            result=outcome, max_iter=max_iter, kappa_hat=outcome.kappa_hat,
        )
    return outcome


def _squarem_step(
    theta: FloatArray,
    x1: FloatArray,
    evaluate: Callable[[FloatArray], FloatArray],
    outcome: IterationOutcome,
) -> FloatArray:
    """One SQUAREM cycle (squared extrapolation with a stabilizing map step).

    Falls back to the second plain iterate when the extrapolated point is not
    usable, so a cycle never does worse than two plain steps.
    """
    x2 = evaluate(x1)
    r = x1 - theta
    v = (x2 - x1) - r
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        return x2
    alpha = min(-float(np.linalg.norm(r)) / v_norm, -1.0)
    if alpha == -1.0:
        return x2
    candidate = theta - 2.0 * alpha * r + alpha**2 * v
    try:
        stabilized = evaluate(candidate)
    except NonFinite:
        outcome.rejected_steps += 1
        return x2
    # reject extrapolations that land further from a fixed point than x2
    if _sup(stabilized - candidate) > _sup(x2 - x1) * 10.0 and _sup(x2 - x1) > 0:
        outcome.rejected_steps += 1
        return x2
    outcome.accelerated_steps += 1
    return stabilized
