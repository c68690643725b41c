"""Iterated two-stage least squares (i2SLS) for endogenous regressors."""

from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.linalg

from zeroln.domain.errors import (
    DimensionMismatch,
    InvalidOptions,
    NonFinite,
    RankDeficient,
    WeakInstrument,
)
from zeroln.domain.estimators.iols import (
    IolsProblem,
    bread_weights,
    check_outcome_support,
    meat_for,
    solve_problem,
    start_value,
)
from zeroln.domain.linalg import LeastSquares, check_rank, robust_ols_cov, sandwich_from_bread
from zeroln.domain.models.data import Dataset, DesignMatrix, FloatArray
from zeroln.domain.models.results import FitResult, Residuals
from zeroln.domain.options import FitOptions
from zeroln.domain.ports import EventBusPort

logger = logging.getLogger(__name__)

WEAK_INSTRUMENT_SV = 1e-6


def first_stage(X: DesignMatrix, Z: DesignMatrix) -> FloatArray:
    """P_Z X after the order, rank and instrument-strength checks.

    Strength is the smallest canonical correlation between the column spaces
    of Z and X (singular values of Q_Z'Q_X), which is scale free.
    """
    if Z.k < X.k:
        raise RankDeficient(f"{Z.k} instruments for {X.k} regressors", rank=Z.k, k=X.k)
    z_solver = LeastSquares(Z)
    check_rank(np.linalg.svd(Z.values.T @ X.values, compute_uv=False), X.k, what="Z'X")
    q_z, _ = scipy.linalg.qr(Z.values, mode="economic")
    q_x, _ = scipy.linalg.qr(X.values, mode="economic")
    smallest = float(np.linalg.svd(q_z.T @ q_x, compute_uv=False)[-1])
    if smallest < WEAK_INSTRUMENT_SV:
        msg = f"weak instruments: smallest canonical correlation {smallest:.2e}"
        logger.warning(msg)
        warnings.warn(msg, WeakInstrument, stacklevel=3)
    return z_solver.project(X.values)


class I2slsProblem(IolsProblem):
    """iOLS with the OLS step replaced by 2SLS on P_Z X.

    Since X̂'X = X̂'X̂, the 2SLS step is OLS of ỹ on X̂.
    """

    estimator = "i2sls"

    def __init__(self, data: Dataset, opts: FitOptions, x_hat: FloatArray) -> None:
        super().__init__(data, opts, LeastSquares(x_hat))
        self.x_hat = x_hat

    def covariances(
        self, residuals: Residuals, index: FloatArray, error: FloatArray,
    ) -> tuple[FloatArray, FloatArray]:
        kind, clusters = meat_for(self.data, self.opts)
        w = bread_weights(self.opts.variant, residuals, index, self.delta)
        X, X_hat = self.X.values, self.x_hat
        # P_Z(I−W) is not symmetric; the sandwich needs the symmetrized bread
        bread = 0.5 * (X_hat.T @ (X * w[:, None]) + X.T @ (X_hat * w[:, None]))
        moments = X_hat * error[:, None]
        return (
            sandwich_from_bread(bread, moments, kind, clusters),
            robust_ols_cov(X_hat, error, kind, clusters),
        )


def fit_i2sls(
    data: Dataset, opts: FitOptions | None = None, bus: EventBusPort | None = None,
) -> FitResult:
    """Fit the i2SLS fixed point; ``data.Z`` holds the instruments.

    Starts from the two-stage popular fix unless a start vector is given.
    """
    opts = opts or FitOptions()
    if data.Z is None:
        raise DimensionMismatch("i2SLS needs an instrument matrix")
    check_outcome_support(data.y)
    if opts.variant == "delta" and not data.X.has_intercept:
        raise InvalidOptions("variant 'delta' needs a design with an intercept column")
    x_hat = first_stage(data.X, data.Z)
    if not np.all(np.isfinite(x_hat)):
        raise NonFinite("first-stage fitted values are not finite")
    problem = I2slsProblem(data, opts, x_hat)
    beta0 = start_value(data.y, problem.solver, opts, data.X.k)
    return solve_problem(problem, beta0, bus)
