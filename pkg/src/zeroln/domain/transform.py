"""Outcome transformations and centering terms for the iOLS family.

The transformed outcome is ỹ = log(y + δ·exp(X'β)) − c. Everything here is
computed in log space (``logaddexp``) so that zeros in ``y`` and large linear
indices do not overflow.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp

from zeroln.domain.errors import (
    AllZeroOutcome,
    InvalidOptions,
    NegativeOutcome,
    NegativeRegressor,
    NonFinite,
    NonPositiveDelta,
)
from zeroln.domain.models.data import DesignMatrix, FloatArray
from zeroln.domain.models.results import Centering, Residuals

logger = logging.getLogger(__name__)

INDEX_BOUND = 700.0


# ------------------------------------------------------------------
# Linear index and residuals
# ------------------------------------------------------------------

def linear_index(
    X: DesignMatrix, beta: npt.ArrayLike, clamp: float | None = INDEX_BOUND,
) -> tuple[FloatArray, int]:
    """X'β, clamped to [−clamp, clamp]; returns the index and the clamp count."""
    b = np.asarray(beta, dtype=np.float64)
    if b.shape != (X.k,):
        raise InvalidOptions("beta has wrong length", length=b.shape, k=X.k)
    index = X.values @ b
    if not np.all(np.isfinite(index)):
        raise NonFinite("linear index X'β is not finite")
    if clamp is None:
        return index, 0
    clamped = np.clip(index, -clamp, clamp)
    return clamped, int(np.sum(clamped != index))


def _check_outcome(y: npt.ArrayLike) -> FloatArray:
    arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFinite("outcome contains NaN or Inf")
    if np.any(arr < 0):
        raise NegativeOutcome(
            "outcome has negative values; shift it first (shift_negative)",
            n_negative=int(np.sum(arr < 0)),
        )
    return arr


def _log_outcome(y: FloatArray) -> FloatArray:
    """log y with log 0 = −inf, without runtime warnings."""
    out = np.full(y.shape, -np.inf)
    np.log(y, out=out, where=y > 0)
    return out


def residuals_from_index(y: npt.ArrayLike, index: FloatArray) -> Residuals:
    arr = _check_outcome(y)
    with np.errstate(over="ignore"):
        u = np.exp(_log_outcome(arr) - index)
    if not np.all(np.isfinite(u)):
        raise NonFinite("residual U overflowed")
    return Residuals(u=u, positive_mask=arr > 0)


def residual_u(y: npt.ArrayLike, X: DesignMatrix, beta: npt.ArrayLike) -> Residuals:
    """U_i = y_i·exp(−X_i'β); zero exactly where y_i = 0."""
    index, _ = linear_index(X, beta, clamp=None)
    if np.any(np.abs(index) > INDEX_BOUND):
        raise NonFinite("|X'β| exceeds the exponent guard", bound=INDEX_BOUND)
    return residuals_from_index(y, index)


# ------------------------------------------------------------------
# Transformed outcome
# ------------------------------------------------------------------

def _check_delta(delta: float) -> None:
    if not delta > 0:
        raise NonPositiveDelta("delta must be strictly positive", delta=delta)


def log_y_plus_delta_mu(y: npt.ArrayLike, index: FloatArray, delta: float) -> FloatArray:
    """log(y + δ·exp(index))."""
    _check_delta(delta)
    arr = _check_outcome(y)
    return np.logaddexp(_log_outcome(arr), np.log(delta) + index)


def transform_from_index(
    y: npt.ArrayLike, index: FloatArray, delta: float, c: Centering,
) -> FloatArray:
    y_tilde = log_y_plus_delta_mu(y, index, delta) - c.values(index.shape[0])
    if not np.all(np.isfinite(y_tilde)):
        raise NonFinite("transformed outcome is not finite")
    return y_tilde


def iols_delta_transform(
    y: npt.ArrayLike, X: DesignMatrix, beta: npt.ArrayLike, delta: float, c: Centering,
) -> FloatArray:
    """ỹ_i = log(y_i + δ·exp(X_i'β)) − c_i."""
    index, _ = linear_index(X, beta)
    return transform_from_index(y, index, delta, c)


# ------------------------------------------------------------------
# Centerings
# ------------------------------------------------------------------

def c_delta_from_index(y: npt.ArrayLike, index_r: FloatArray, delta: float) -> Centering:
    """Scalar centering given the non-intercept index X^r'β^r.

    The constant is re-estimated as φ̃¹ = log(mean(y·exp(−X^r'β^r))), so the
    result is invariant to adding a constant to ``index_r``.
    """
    _check_delta(delta)
    arr = _check_outcome(y)
    if not np.any(arr > 0):
        raise AllZeroOutcome("all outcomes are zero; the intercept is not identified")
    log_terms = _log_outcome(arr) - index_r
    intercept_tilde = float(logsumexp(log_terms) - np.log(arr.size))
    # log Ũ_i with Ũ_i = y_i·exp(−φ̃¹ − X_i^r'β^r), mean(Ũ) = 1
    log_u_tilde = log_terms - intercept_tilde
    scalar_c = float(np.mean(np.logaddexp(log_u_tilde, np.log(delta))))
    if not np.isfinite(scalar_c):
        raise NonFinite("centering is not finite")
    return Centering(kind="delta_scalar", scalar_c=scalar_c, intercept_tilde=intercept_tilde)


def _non_intercept_index(X: DesignMatrix, beta: npt.ArrayLike) -> FloatArray:
    if X.intercept_index is None:
        raise InvalidOptions("the delta centering needs a design with a flagged intercept")
    b = np.asarray(beta, dtype=np.float64)
    keep = [j for j in range(X.k) if j != X.intercept_index]
    return X.values[:, keep] @ b[keep]


def c_hat_delta(y: npt.ArrayLike, X: DesignMatrix, beta: npt.ArrayLike, delta: float) -> Centering:
    """Sample centering ĉ(β) with the re-estimated constant φ̃¹."""
    return c_delta_from_index(y, _non_intercept_index(X, beta), delta)


def c_mp_from_index(y: npt.ArrayLike, index: FloatArray, delta: float) -> Centering:
    _check_delta(delta)
    u = residuals_from_index(y, index).u
    vector_c = np.log(delta + u) - (u - 1.0) / (1.0 + delta)
    return Centering(kind="mp_vector", vector_c=vector_c)


def c_ap_from_index(y: npt.ArrayLike, index: FloatArray, delta: float) -> Centering:
    _check_delta(delta)
    arr = _check_outcome(y)
    u = residuals_from_index(arr, index).u
    vector_c = np.log(delta + u) - (arr - np.exp(index)) / (1.0 + delta)
    return Centering(kind="ap_vector", vector_c=vector_c)


def c_mp(y: npt.ArrayLike, X: DesignMatrix, beta: npt.ArrayLike, delta: float) -> Centering:
    """c_i = log(δ + U_i) − (U_i − 1)/(1 + δ): multiplicative Poisson centering."""
    index, _ = linear_index(X, beta)
    return c_mp_from_index(y, index, delta)


def c_ap(y: npt.ArrayLike, X: DesignMatrix, beta: npt.ArrayLike, delta: float) -> Centering:
    """c_i = log(δ + U_i) − (y_i − exp(X_i'β))/(1 + δ): additive Poisson (PPML) centering."""
    index, _ = linear_index(X, beta)
    return c_ap_from_index(y, index, delta)


def c_taylor(u: npt.ArrayLike, delta: float) -> float:
    """Third-order expansion of E[log(δ+U)] around U = 1 (diagnostic only)."""
    _check_delta(delta)
    dev = np.asarray(u, dtype=np.float64) - 1.0
    m2 = float(np.mean(dev**2))
    m3 = float(np.mean(dev**3))
    return float(np.log1p(delta) - m2 / (2 * (1 + delta) ** 2) + m3 / (3 * (1 + delta) ** 3))


# ------------------------------------------------------------------
# Pre-transformations and baseline outcomes
# ------------------------------------------------------------------

def loglog_design(X_raw: DesignMatrix, log_cols: Sequence[str]) -> DesignMatrix:
    """Log-transform flagged regressors, adding a zero indicator where needed.

    Each flagged column becomes ``log_<name>`` (0 where the raw value is 0),
    followed by ``<name>_is_zero`` when the column contains zeros.
    """
    missing = [c for c in log_cols if c not in X_raw.column_names]
    if missing:
        raise InvalidOptions("unknown log-log columns", columns=missing)
    columns: list[FloatArray] = []
    names: list[str] = []
    intercept_index: int | None = None
    for j, name in enumerate(X_raw.column_names):
        col = X_raw.values[:, j]
        if j == X_raw.intercept_index:
            intercept_index = len(columns)
        if name not in log_cols:
            columns.append(col)
            names.append(name)
            continue
        if np.any(col < 0):
            raise NegativeRegressor(f"column {name!r} has negative values", column=name)
        zero = col == 0
        logged = np.zeros_like(col)
        np.log(col, out=logged, where=~zero)
        columns.append(logged)
        names.append(f"log_{name}")
        if np.any(zero):
            columns.append(zero.astype(np.float64))
            names.append(f"{name}_is_zero")
    return DesignMatrix(np.column_stack(columns), tuple(names), intercept_index)


def shift_negative(y: npt.ArrayLike) -> tuple[FloatArray, float]:
    """Shift y by its first-order statistic when it has negative values."""
    arr = np.asarray(y, dtype=np.float64)
    alpha_hat = float(arr.min())
    if alpha_hat >= 0:
        return arr.copy(), 0.0
    logger.info("Shifting outcome by its minimum %.6g", alpha_hat)
    return arr - alpha_hat, alpha_hat


def pf_outcome(y: npt.ArrayLike, pf_delta: float = 1.0) -> FloatArray:
    """Popular-fix outcome log(y + Δ)."""
    _check_delta(pf_delta)
    return np.log(_check_outcome(y) + pf_delta)


def ihs_outcome(y: npt.ArrayLike, theta: float = 1.0) -> FloatArray:
    """Inverse hyperbolic sine log(θy + √(θ²y² + 1))/θ."""
    _check_delta(theta)
    return np.arcsinh(theta * _check_outcome(y)) / theta
