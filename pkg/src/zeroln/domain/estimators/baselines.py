"""Single-pass comparison estimators and PPML.

pf        OLS of log(y + Δ) on X
ihs       OLS of arcsinh(θy)/θ on X
drop_ols  OLS of log y on the positive observations only
ppml      additive Poisson, computed as the iOLS ``ap`` fixed point
pf_2sls   2SLS of log(y + Δ) on X with instruments Z
"""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np

from zeroln.domain.errors import DimensionMismatch, InvalidOptions, RankDeficient
from zeroln.domain.estimators.iols import check_outcome_support, fit_iols, meat_for
from zeroln.domain.estimators.iv import first_stage
from zeroln.domain.linalg import LeastSquares, robust_ols_cov
from zeroln.domain.models.data import Dataset, FloatArray
from zeroln.domain.models.results import FitResult
from zeroln.domain.options import FitOptions
from zeroln.domain.ports import EventBusPort
from zeroln.domain.transform import ihs_outcome, linear_index, pf_outcome, residuals_from_index

logger = logging.getLogger(__name__)

BaselineKind = Literal["pf", "ihs", "drop_ols", "ppml", "pf_2sls"]
BASELINE_KINDS: tuple[str, ...] = ("pf", "ihs", "drop_ols", "ppml", "pf_2sls")


def _single_pass(
    data: Dataset, kind: str, beta: FloatArray, covariance: FloatArray, opts: FitOptions,
    **diagnostics: object,
) -> FitResult:
    index, clamps = linear_index(data.X, beta, opts.clamp)
    return FitResult(
        estimator=kind,
        variant="none",
        beta=beta,
        column_names=data.X.column_names,
        centering=None,
        covariance=covariance,
        delta=opts.pf_delta if kind in ("pf", "pf_2sls") else 0.0,
        kappa_hat=0.0,
        iterations=1,
        converged=True,
        residuals=residuals_from_index(data.y, index),
        clamp_count=clamps,
        ols_covariance=covariance,
        trace=[beta.copy()],
        diagnostics=dict(diagnostics),
    )


def _ols_fit(data: Dataset, kind: str, outcome: FloatArray, opts: FitOptions) -> FitResult:
    beta = LeastSquares(data.X).solve(outcome)
    meat, clusters = meat_for(data, opts)
    cov = robust_ols_cov(data.X, outcome - data.X.values @ beta, meat, clusters)
    return _single_pass(data, kind, beta, cov, opts)


def fit_baseline(
    data: Dataset,
    kind: BaselineKind | str,
    opts: FitOptions | None = None,
    bus: EventBusPort | None = None,
) -> FitResult:
    """Fit one of the comparison estimators listed in the module docstring."""
    opts = opts or FitOptions()
    if kind == "pf":
        return _ols_fit(data, kind, pf_outcome(data.y, opts.pf_delta), opts)
    if kind == "ihs":
        return _ols_fit(data, kind, ihs_outcome(data.y, opts.ihs_theta), opts)
    if kind == "drop_ols":
        return _drop_zeros(data, opts)
    if kind == "ppml":
        result = fit_iols(data, opts.model_copy(update={"variant": "ap"}), bus)
        result.estimator = "ppml"
        return result
    if kind == "pf_2sls":
        return _pf_2sls(data, opts)
    raise InvalidOptions(f"unknown baseline {kind!r}", choices=list(BASELINE_KINDS))


def _drop_zeros(data: Dataset, opts: FitOptions) -> FitResult:
    check_outcome_support(data.y)
    positive = np.flatnonzero(data.positive)
    if positive.size < data.X.k:
        raise RankDeficient(
            f"only {positive.size} positive outcomes for {data.X.k} regressors",
            rank=int(positive.size), k=data.X.k,
        )
    kept = data.take(positive)
    log_y = np.log(kept.y)
    beta = LeastSquares(kept.X).solve(log_y)
    meat, clusters = meat_for(kept, opts)
    cov = robust_ols_cov(kept.X, log_y - kept.X.values @ beta, meat, clusters)
    logger.info("drop_ols: dropped %d zero outcomes", data.n - positive.size)
    return _single_pass(data, "drop_ols", beta, cov, opts, n_used=int(positive.size))


def _pf_2sls(data: Dataset, opts: FitOptions) -> FitResult:
    if data.Z is None:
        raise DimensionMismatch("pf_2sls needs an instrument matrix")
    outcome = pf_outcome(data.y, opts.pf_delta)
    x_hat = first_stage(data.X, data.Z)
    beta = LeastSquares(x_hat).solve(outcome)
    meat, clusters = meat_for(data, opts)
    cov = robust_ols_cov(x_hat, outcome - data.X.values @ beta, meat, clusters)
    return _single_pass(data, "pf_2sls", beta, cov, opts)
