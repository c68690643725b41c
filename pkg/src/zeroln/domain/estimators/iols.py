"""Iterated OLS (iOLS) for log-linear models with zero outcomes.

Each iteration regresses ỹ(β) = log(y + δ·exp(X'β)) − c(β) on X; the
centering c is recomputed from the current β every time. Variant ``delta``
uses the scalar sample centering ĉ; ``mp`` and ``ap`` use observation-level
centerings whose fixed points are the multiplicative and additive Poisson
(PPML) estimates.

The helpers below are shared with the two-stage and fixed-effects fits.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from zeroln.domain.errors import (
    AllZeroOutcome,
    InvalidOptions,
    IterationBound,
    KappaGuardTripped,
    NonFinite,
    NotConverged,
    RankDeficient,
    ZerolnError,
)
from zeroln.domain.estimators.engine import (
    Evaluation,
    IterationOutcome,
    iteration_bound,
    run_fixed_point,
)
from zeroln.domain.linalg import LeastSquares, robust_ols_cov, sandwich_cov
from zeroln.domain.models.data import Dataset, DesignMatrix, FloatArray, IntArray, SandwichSpec
from zeroln.domain.models.events import EventType
from zeroln.domain.models.results import Centering, FitResult, Residuals
from zeroln.domain.options import FitOptions
from zeroln.domain.ports import EventBusPort, emit
from zeroln.domain.transform import (
    c_ap_from_index,
    c_delta_from_index,
    c_mp_from_index,
    c_taylor,
    pf_outcome,
    residuals_from_index,
    transform_from_index,
)

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------
# Per-variant pieces
# ------------------------------------------------------------------

def centering_from_index(
    variant: str, y: FloatArray, index: FloatArray, delta: float,
    index_r: FloatArray | None = None,
) -> Centering:
    """Centering for ``variant`` at the current linear index.

    ``index_r`` is the index without the intercept term; only the δ centering
    uses it, and only to report the re-estimated constant.
    """
    if variant == "delta":
        return c_delta_from_index(y, index if index_r is None else index_r, delta)
    if variant == "mp":
        return c_mp_from_index(y, index, delta)
    if variant == "ap":
        return c_ap_from_index(y, index, delta)
    raise InvalidOptions(f"unknown variant {variant!r}")


def bread_weights(variant: str, residuals: Residuals, index: FloatArray, delta: float) -> FloatArray:
    """Diagonal of I − W for the reweighted sandwich.

    U/(δ+U) for ``delta``, U/(1+δ) for ``mp`` and exp(X'β)/(1+δ) for ``ap``.
    Zero outcomes get weight 0 under ``delta`` and ``mp``.
    """
    u = residuals.u
    if variant == "delta":
        return u / (delta + u)
    if variant == "mp":
        return u / (1.0 + delta)
    return np.exp(index) / (1.0 + delta)


def check_outcome_support(y: FloatArray) -> None:
    if not np.any(y > 0):
        raise AllZeroOutcome("all outcomes are zero; nothing to fit")


def meat_for(data: Dataset, opts: FitOptions) -> tuple[str, IntArray | None]:
    """Cluster meat whenever the dataset carries cluster labels."""
    if data.cluster_ids is not None:
        return "cluster", data.cluster_ids
    if opts.meat_kind == "cluster":
        raise InvalidOptions("meat_kind='cluster' needs cluster labels on the dataset")
    return opts.meat_kind, None


def start_value(y: FloatArray, solver: LeastSquares, opts: FitOptions, k: int) -> FloatArray:
    """β₀: popular fix log(y + 1), or the user vector."""
    if opts.init == "user_vector":
        beta0 = np.asarray(opts.warm_start, dtype=np.float64)
        if beta0.shape != (k,):
            raise InvalidOptions("warm_start has wrong length", length=beta0.size, k=k)
        return beta0
    return solver.solve(pf_outcome(y, 1.0))


# ------------------------------------------------------------------
# Iteration with δ escalation
# ------------------------------------------------------------------

@dataclass
class Escalated:
    outcome: IterationOutcome
    delta: float
    escalations: list[float] = field(default_factory=list)


def _stall_kappa(exc: ZerolnError) -> float:
    if isinstance(exc, KappaGuardTripped):
        return exc.kappa_hat
    if isinstance(exc, NotConverged) and isinstance(exc.result, IterationOutcome):
        return exc.result.kappa_hat
    return float("inf")


def _resume_state(exc: ZerolnError) -> FloatArray | None:
    if isinstance(exc, NotConverged) and isinstance(exc.result, IterationOutcome):
        state = exc.result.state
        if np.all(np.isfinite(state)):
            return state
    return None


def iterate_with_escalation(
    run: Callable[[float, FloatArray | None], IterationOutcome],
    opts: FitOptions,
    bus: EventBusPort | None = None,
    label: str = "iols",
) -> Escalated:
    """Run the fixed point; for ``mp``/``ap`` retry with δ ×10 whenever ``run`` fails to converge.

    For ``mp`` and ``ap`` δ only controls the step size, so a larger δ
    leaves the fixed point unchanged and a run that ran out of iterations
    resumes from where it stopped. ``run(delta, None)`` starts from scratch.
    The δ variant never escalates.
    """
    delta = opts.delta
    escalations: list[float] = []
    start: FloatArray | None = None
    while True:
        try:
            return Escalated(run(delta, start), delta, escalations)
        except (KappaGuardTripped, NonFinite, NotConverged) as exc:
            can_escalate = (
                opts.variant in ("mp", "ap") and opts.escalate and delta * 10 <= opts.delta_ceiling
            )
            if not can_escalate:
                if escalations:
                    exc.details["delta_escalations"] = escalations
                raise
            kappa = _stall_kappa(exc)
            logger.warning(
                "%s (%s) stalled at delta=%g (kappa_hat=%.4f); retrying with delta=%g",
                label, opts.variant, delta, kappa, delta * 10,
            )
            emit(bus, EventType.FIT_ESCALATED, variant=opts.variant,
                 from_delta=delta, to_delta=delta * 10, kappa_hat=kappa)
            delta *= 10
            escalations.append(delta)
            start = _resume_state(exc)


def warn_iteration_bound(n: int, outcome: IterationOutcome, label: str) -> int | None:
    bound = iteration_bound(n, outcome.kappa_hat)
    if bound is not None and outcome.evaluations < bound:
        msg = (
            f"{label} stopped after {outcome.evaluations} iterations, below the "
            f"contraction bound {bound} for kappa_hat={outcome.kappa_hat:.4f}"
        )
        logger.warning(msg)
        warnings.warn(msg, IterationBound, stacklevel=3)
    return bound


def nan_matrix(k: int) -> FloatArray:
    return np.full((k, k), np.nan)


# ------------------------------------------------------------------
# fit_iols
# ------------------------------------------------------------------

class IolsProblem:
    """Iteration map and final assembly for plain iOLS on a fixed design.

    ``solver`` is the least-squares factorization of the regression design:
    X itself for iOLS, P_Z X for i2SLS.
    """

    estimator = "iols"
    beta_slice = slice(None)

    def __init__(self, data: Dataset, opts: FitOptions, solver: LeastSquares | None = None) -> None:
        self.data = data
        self.opts = opts
        self.y = data.y
        self.X = data.X
        self.solver = solver if solver is not None else LeastSquares(data.X)
        self.delta = opts.delta

    def beta_of(self, state: FloatArray) -> FloatArray:
        return state[self.beta_slice]

    def fixed_effects_of(self, state: FloatArray) -> FloatArray | None:
        return None

    def index_r(self, index: FloatArray, state: FloatArray) -> FloatArray:
        ic = self.X.intercept_index
        if ic is None:
            return index
        return index - self.X.values[:, ic] * state[ic]

    def raw_index(self, state: FloatArray) -> FloatArray:
        return self.X.values @ state

    def evaluate(self, state: FloatArray) -> tuple[FloatArray, FloatArray, Centering, int]:
        """Clamped index, transformed outcome and centering at the state."""
        raw = self.raw_index(state)
        if not np.all(np.isfinite(raw)):
            raise NonFinite("linear index X'β is not finite")
        index = np.clip(raw, -self.opts.clamp, self.opts.clamp)
        clamps = int(np.sum(index != raw))
        centering = centering_from_index(
            self.opts.variant, self.y, index, self.delta, self.index_r(index, state),
        )
        return index, transform_from_index(self.y, index, self.delta, centering), centering, clamps

    def next_state(self, y_tilde: FloatArray) -> FloatArray:
        return self.solver.solve(y_tilde)

    def step(self, state: FloatArray) -> Evaluation:
        _, y_tilde, _, clamps = self.evaluate(state)
        return Evaluation(self.next_state(y_tilde), clamps)

    def run(self, delta: float, state0: FloatArray) -> IterationOutcome:
        self.delta = delta
        return run_fixed_point(
            self.step, state0,
            max_iter=self.opts.max_iter, tol=self.opts.tol,
            kappa_guard=self.opts.kappa_guard, kappa_window=self.opts.kappa_window,
            beta_slice=self.beta_slice,
            accelerate=self.opts.acceleration == "squarem",
            label=f"{self.estimator}/{self.opts.variant}",
        )

    # -- covariance -------------------------------------------------

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.X.column_names

    def covariances(
        self, residuals: Residuals, index: FloatArray, error: FloatArray,
    ) -> tuple[FloatArray, FloatArray]:
        kind, clusters = meat_for(self.data, self.opts)
        weights = bread_weights(self.opts.variant, residuals, index, self.delta)
        spec = SandwichSpec(weights, kind, clusters)  # type: ignore[arg-type]
        X = self.X.values
        return (
            sandwich_cov(X, X * error[:, None], spec),
            robust_ols_cov(X, error, kind, clusters),
        )

    def finish(self, esc: Escalated, *, converged: bool = True) -> FitResult:
        outcome = esc.outcome
        state = outcome.state
        index, y_tilde, centering, _ = self.evaluate(state)
        residuals = residuals_from_index(self.y, index)
        # log(δ + U) − c at the fixed point
        error = y_tilde - index
        diagnostics: dict[str, Any] = {
            "evaluations": outcome.evaluations,
            "accelerated_steps": outcome.accelerated_steps,
            "rejected_steps": outcome.rejected_steps,
            "delta_escalations": list(esc.escalations),
        }
        if centering.kind == "delta_scalar" and centering.intercept_tilde is not None:
            u_tilde = self.y * np.exp(-self.index_r(index, state) - centering.intercept_tilde)
            diagnostics["c_taylor"] = c_taylor(u_tilde, self.delta)
        k = len(self.column_names)
        try:
            covariance, ols_covariance = self.covariances(residuals, index, error)
        except (RankDeficient, NonFinite):
            if converged:
                raise
            covariance = ols_covariance = nan_matrix(k)
        if outcome.clamp_count:
            logger.warning("%s: linear index clamped %d times", self.estimator, outcome.clamp_count)
        if converged:
            diagnostics["iteration_bound"] = warn_iteration_bound(self.data.n, outcome, self.estimator)
        return FitResult(
            estimator=self.estimator,
            variant=self.opts.variant,
            beta=self.beta_of(state).copy(),
            column_names=self.column_names,
            centering=centering,
            covariance=covariance,
            delta=self.delta,
            kappa_hat=outcome.kappa_hat,
            iterations=outcome.evaluations,
            converged=converged,
            residuals=residuals,
            clamp_count=outcome.clamp_count,
            ols_covariance=ols_covariance,
            trace=list(outcome.trace),
            fixed_effects=self.fixed_effects_of(state),
            diagnostics=diagnostics,
        )


def solve_problem(problem: IolsProblem, state0: FloatArray, bus: EventBusPort | None) -> FitResult:
    """Iterate, escalate when allowed, and assemble the result.

    On exhausted iterations the partial fit travels on ``NotConverged.result``.
    """
    opts = problem.opts
    label = f"{problem.estimator}/{opts.variant}"
    try:
        esc = iterate_with_escalation(
            lambda d, s: problem.run(d, state0 if s is None else s), opts, bus, label,
        )
    except NotConverged as exc:
        emit(bus, EventType.FIT_FAILED, estimator=problem.estimator, code=exc.code)
        try:
            tried = list(exc.details.get("delta_escalations", []))
            partial = problem.finish(Escalated(exc.result, problem.delta, tried), converged=False)
        except ZerolnError:
            raise exc from None
        raise NotConverged(exc.message, result=partial, **exc.details) from exc
    except ZerolnError as exc:
        emit(bus, EventType.FIT_FAILED, estimator=problem.estimator, code=exc.code)
        raise
    result = problem.finish(esc)
    logger.info(
        "%s converged in %d iterations (delta=%g, kappa_hat=%.4f)",
        label, result.iterations, result.delta, result.kappa_hat,
    )
    emit(bus, EventType.FIT_CONVERGED, estimator=problem.estimator, variant=opts.variant,
         iterations=result.iterations, kappa_hat=result.kappa_hat)
    return result


def fit_iols(
    data: Dataset, opts: FitOptions | None = None, bus: EventBusPort | None = None,
) -> FitResult:
    """Fit iOLS on ``data``.

    Variant ``delta`` needs a design with a flagged intercept; the constant
    is what the centering re-estimates.
    """
    opts = opts or FitOptions()
    check_outcome_support(data.y)
    if opts.variant == "delta" and not data.X.has_intercept:
        raise InvalidOptions("variant 'delta' needs a design with an intercept column")
    problem = IolsProblem(data, opts)
    beta0 = start_value(data.y, problem.solver, opts, data.X.k)
    return solve_problem(problem, beta0, bus)


def dummy_design(X: DesignMatrix, groups: IntArray, prefix: str = "fe") -> DesignMatrix:
    """X with one dummy per group level except the first (reference) level."""
    levels = np.unique(groups)
    dummies = (groups[:, None] == levels[None, 1:]).astype(np.float64)
    return X.append_columns(dummies, [f"{prefix}_{lvl}" for lvl in levels[1:]])
