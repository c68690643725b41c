"""iOLS / i2SLS with one or two absorbed fixed-effect dimensions.

The fixed effects are never estimated as dummies. Each iteration partials
them out of the transformed outcome, runs OLS (or 2SLS) on the partialled
data and recovers the combined fixed effect Λ from the residual difference
(ỹ − X₁β) − (ỹ̈ − Ẍ₁β). The iterated state is the pair (β, Λ).
"""

from __future__ import annotations

import logging
import warnings
from typing import Sequence

import numpy as np
import numpy.typing as npt

from zeroln.domain.errors import (
    DimensionMismatch,
    InvalidOptions,
    NonFinite,
    SingletonGroups,
)
from zeroln.domain.estimators.iols import (
    IolsProblem,
    bread_weights,
    check_outcome_support,
    meat_for,
    solve_problem,
)
from zeroln.domain.estimators.iv import first_stage
from zeroln.domain.linalg import LeastSquares, robust_ols_cov, sandwich_cov
from zeroln.domain.models.data import Dataset, DesignMatrix, FloatArray, IntArray, SandwichSpec
from zeroln.domain.models.results import FitResult, Residuals
from zeroln.domain.options import FitOptions
from zeroln.domain.ports import EventBusPort
from zeroln.domain.transform import pf_outcome

logger = logging.getLogger(__name__)

DEMEAN_TOL = 1e-10
DEMEAN_MAX_SWEEPS = 10_000


class Demeaner:
    """Partials one or two sets of group dummies out of vectors or matrices.

    One dimension is exact. Two dimensions use alternating projections
    (method of alternating projections) until the sup-norm change of a sweep
    is at most ``tol``.
    """

    def __init__(
        self,
        groups: Sequence[npt.ArrayLike],
        tol: float = DEMEAN_TOL,
        max_sweeps: int = DEMEAN_MAX_SWEEPS,
    ) -> None:
        if not 1 <= len(groups) <= 2:
            raise InvalidOptions("one or two fixed-effect dimensions are supported", dims=len(groups))
        self.codes: list[IntArray] = []
        self.counts: list[npt.NDArray[np.float64]] = []
        for g in groups:
            _, codes = np.unique(np.asarray(g), return_inverse=True)
            self.codes.append(codes.astype(np.int64))
            self.counts.append(np.bincount(codes).astype(np.float64))
        self.n = int(self.codes[0].size)
        self.tol = tol
        self.max_sweeps = max_sweeps

    @property
    def n_levels(self) -> int:
        """Number of columns the absorbed dummies span."""
        return sum(c.size for c in self.counts) - (len(self.counts) - 1)

    @property
    def singletons(self) -> int:
        return int(sum(np.sum(c == 1) for c in self.counts))

    def _group_means(self, v: FloatArray, dim: int) -> FloatArray:
        codes, counts = self.codes[dim], self.counts[dim]
        if v.ndim == 1:
            return (np.bincount(codes, weights=v, minlength=counts.size) / counts)[codes]
        sums = np.zeros((counts.size, v.shape[1]))
        np.add.at(sums, codes, v)
        return (sums / counts[:, None])[codes]

    def demean(self, values: npt.ArrayLike) -> FloatArray:
        v = np.array(values, dtype=np.float64, copy=True)
        if v.shape[0] != self.n:
            raise DimensionMismatch("vector length differs from group labels", rows=v.shape[0], n=self.n)
        if len(self.codes) == 1:
            return v - self._group_means(v, 0)
        for sweep in range(1, self.max_sweeps + 1):
            before = v.copy()
            for dim in range(len(self.codes)):
                v -= self._group_means(v, dim)
            if float(np.max(np.abs(v - before), initial=0.0)) <= self.tol:
                logger.debug("two-way demeaning converged in %d sweeps", sweep)
                return v
        logger.warning("two-way demeaning hit the %d-sweep cap", self.max_sweeps)
        return v


class FixedEffectsProblem(IolsProblem):
    """State θ = (β, Λ); the linear index is X₁'β + Λ."""

    estimator = "iols_fe"

    def __init__(self, data: Dataset, opts: FitOptions, X1: DesignMatrix, demeaner: Demeaner,
                 Z1: DesignMatrix | None = None) -> None:
        self.X1 = X1
        self.demeaner = demeaner
        self.X1_dd = demeaner.demean(X1.values)
        if Z1 is not None:
            self.estimator = "i2sls_fe"
            Z_dd = DesignMatrix(demeaner.demean(Z1.values), Z1.column_names)
            self.design_dd = first_stage(DesignMatrix(self.X1_dd, X1.column_names), Z_dd)
        else:
            self.design_dd = self.X1_dd
        super().__init__(data, opts, LeastSquares(self.design_dd))
        self.k1 = X1.k
        self.beta_slice = slice(0, X1.k)

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.X1.column_names

    def fixed_effects_of(self, state: FloatArray) -> FloatArray:
        return state[self.k1:].copy()

    def raw_index(self, state: FloatArray) -> FloatArray:
        return self.X1.values @ state[: self.k1] + state[self.k1:]

    def index_r(self, index: FloatArray, state: FloatArray) -> FloatArray:
        return index

    def split_fit(self, y_tilde: FloatArray) -> FloatArray:
        """(β, Λ) from one partialled regression of ``y_tilde``."""
        y_dd = self.demeaner.demean(y_tilde)
        beta = self.solver.solve(y_dd)
        lam = (y_tilde - self.X1.values @ beta) - (y_dd - self.X1_dd @ beta)
        return np.concatenate([beta, lam])

    def next_state(self, y_tilde: FloatArray) -> FloatArray:
        return self.split_fit(y_tilde)

    def covariances(
        self, residuals: Residuals, index: FloatArray, error: FloatArray,
    ) -> tuple[FloatArray, FloatArray]:
        kind, clusters = meat_for(self.data, self.opts)
        weights = bread_weights(self.opts.variant, residuals, index, self.delta)
        spec = SandwichSpec(weights, kind, clusters)  # type: ignore[arg-type]
        D = self.design_dd
        cov = sandwich_cov(D, D * error[:, None], spec)
        ols_cov = robust_ols_cov(D, error, kind, clusters)
        if kind == "HC1":
            n, k = self.data.n, self.k1
            absorbed = self.demeaner.n_levels
            if n > k + absorbed:
                # count the absorbed dummies in the degrees of freedom
                factor = (n - k) / (n - k - absorbed)
                cov, ols_cov = cov * factor, ols_cov * factor
        return cov, ols_cov


def fit_iols_fe(
    data: Dataset,
    opts: FitOptions | None = None,
    bus: EventBusPort | None = None,
    instruments: bool | None = None,
) -> FitResult:
    """iOLS (or i2SLS when ``data.Z`` is set) absorbing ``data.fe_groups``.

    The intercept column, if any, is dropped from X and Z: the fixed effects
    carry the level. ``instruments=False`` ignores ``data.Z``.
    """
    opts = opts or FitOptions()
    if not data.fe_groups:
        raise InvalidOptions("fit_iols_fe needs at least one fixed-effect dimension")
    check_outcome_support(data.y)
    X1 = data.X.non_intercept()
    if X1.k == 0:
        raise InvalidOptions("no regressors left once the fixed effects absorb the intercept")
    use_iv = data.Z is not None if instruments is None else instruments
    if use_iv and data.Z is None:
        raise DimensionMismatch("instrumented fixed-effects fit needs an instrument matrix")
    Z1 = data.Z.non_intercept() if use_iv and data.Z is not None else None

    demeaner = Demeaner(data.fe_groups)
    if demeaner.singletons:
        msg = f"{demeaner.singletons} fixed-effect groups contain a single observation"
        logger.warning(msg)
        warnings.warn(msg, SingletonGroups, stacklevel=2)

    problem = FixedEffectsProblem(data, opts, X1, demeaner, Z1)
    if opts.init == "user_vector":
        beta0 = np.asarray(opts.warm_start, dtype=np.float64)
        if beta0.shape != (X1.k,):
            raise InvalidOptions("warm_start has wrong length", length=beta0.size, k=X1.k)
        # Λ₀ from the popular fix given β₀
        pf = pf_outcome(data.y, 1.0)
        resid = pf - X1.values @ beta0
        state0 = np.concatenate([beta0, resid - demeaner.demean(resid)])
    else:
        state0 = problem.split_fit(pf_outcome(data.y, 1.0))
    if not np.all(np.isfinite(state0)):
        raise NonFinite("fixed-effects start value is not finite")
    return solve_problem(problem, state0, bus)
