"""Models of Pr(Y > 0 | features) used by the λ specification tests.

logit / probit  Newton–Raphson (Fisher scoring for probit) with step halving
knn             share of positive outcomes among the k nearest neighbours on
                standardized features
lpm             OLS of the positive indicator

Predictions are clipped to [clip_eps, 1 − clip_eps] so 1/P̂ stays finite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from scipy.special import expit, log_expit
from scipy.stats import norm
from sklearn.neighbors import NearestNeighbors
from sklearn.preprocessing import StandardScaler

from zeroln.domain.errors import DimensionMismatch, InvalidOptions, Separation, SingleClass
from zeroln.domain.linalg import LeastSquares
from zeroln.domain.models.data import BoolArray, DesignMatrix, FloatArray

logger = logging.getLogger(__name__)

ProbKind = Literal["logit", "probit", "knn", "lpm"]
PROB_KINDS: tuple[str, ...] = ("logit", "probit", "knn", "lpm")

DEFAULT_K = 100
DEFAULT_CLIP_EPS = 1e-3
TRIM_PERCENTILES = (5.0, 95.0)
SEPARATION_BOUND = 30.0
NEWTON_GRAD_TOL = 1e-8
NEWTON_MAX_ITER = 100
# extra neighbours fetched so distance ties can be ordered by row index
TIE_MARGIN = 16


def _features(X: DesignMatrix | npt.ArrayLike) -> FloatArray:
    if isinstance(X, DesignMatrix):
        return X.values
    arr = np.asarray(X, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


@dataclass(frozen=True)
class ProbabilityModel:
    """A fitted conditional-probability predictor. Immutable after fit."""

    kind: str
    clip_eps: float
    n_features: int
    trim: bool
    coef: FloatArray | None = None
    k: int | None = None
    labels: FloatArray | None = None
    scaler: StandardScaler | None = field(default=None, repr=False)
    neighbors: NearestNeighbors | None = field(default=None, repr=False)
    knn_columns: tuple[int, ...] = ()
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def predict_raw(self, X_new: DesignMatrix | npt.ArrayLike) -> FloatArray:
        """Predictions before clipping."""
        values = _features(X_new)
        if values.shape[1] != self.n_features:
            raise DimensionMismatch(
                "feature dimension differs from the fitted model",
                features=values.shape[1], expected=self.n_features,
            )
        if self.kind == "logit":
            return expit(values @ self.coef)
        if self.kind == "probit":
            return norm.cdf(values @ self.coef)
        if self.kind == "lpm":
            return values @ self.coef
        return self._knn_share(values)

    def predict(self, X_new: DesignMatrix | npt.ArrayLike) -> FloatArray:
        return np.clip(self.predict_raw(X_new), self.clip_eps, 1.0 - self.clip_eps)

    def trim_mask(self, X: DesignMatrix | npt.ArrayLike) -> BoolArray:
        """Rows whose prediction lies within the 5th–95th percentiles.

        All true when the model was fitted without trimming.
        """
        p = self.predict(X)
        if not self.trim or p.size == 0:
            return np.ones(p.shape[0], dtype=bool)
        lo, hi = np.percentile(p, TRIM_PERCENTILES)
        return (p >= lo) & (p <= hi)

    def _knn_share(self, values: FloatArray) -> FloatArray:
        assert self.neighbors is not None and self.scaler is not None
        assert self.labels is not None and self.k is not None
        query = self.scaler.transform(values[:, list(self.knn_columns)])
        n_train = self.labels.size
        fetch = min(n_train, self.k + TIE_MARGIN)
        dist, idx = self.neighbors.kneighbors(query, n_neighbors=fetch)
        # order by (distance, row index) so ties resolve to the lowest index
        order = np.lexsort((idx, np.round(dist, 12)))
        chosen = np.take_along_axis(idx, order, axis=1)[:, : self.k]
        return self.labels[chosen].mean(axis=1)


# ------------------------------------------------------------------
# Fitting
# ------------------------------------------------------------------

def fit_prob(
    X: DesignMatrix | npt.ArrayLike,
    positive: npt.ArrayLike,
    kind: ProbKind | str = "logit",
    k: int | None = None,
    clip_eps: float = DEFAULT_CLIP_EPS,
    trim: bool | None = None,
) -> ProbabilityModel:
    """Fit Pr(positive | X).

    ``trim`` defaults to on for knn and off otherwise. ``k`` defaults to 100
    and must not exceed the number of rows.
    """
    values = _features(X)
    labels = np.asarray(positive, dtype=bool)
    if labels.shape[0] != values.shape[0]:
        raise DimensionMismatch("label length differs from X rows", labels=labels.size, n=values.shape[0])
    if not 0 < clip_eps < 0.5:
        raise InvalidOptions("clip_eps must lie in (0, 0.5)", clip_eps=clip_eps)
    n_pos = int(labels.sum())
    if n_pos in (0, labels.size):
        raise SingleClass("both zero and positive outcomes are needed", positives=n_pos, n=labels.size)
    do_trim = (kind == "knn") if trim is None else trim
    common = {"kind": kind, "clip_eps": clip_eps, "n_features": values.shape[1], "trim": do_trim}

    if kind in ("logit", "probit"):
        coef, iterations = _newton(values, labels.astype(np.float64), kind)
        return ProbabilityModel(coef=coef, diagnostics={"iterations": iterations}, **common)
    if kind == "lpm":
        coef = LeastSquares(values).solve(labels.astype(np.float64))
        return ProbabilityModel(coef=coef, **common)
    if kind == "knn":
        return _fit_knn(X, values, labels, k if k is not None else DEFAULT_K, common)
    raise InvalidOptions(f"unknown probability model {kind!r}", choices=list(PROB_KINDS))


def _fit_knn(
    X: DesignMatrix | npt.ArrayLike, values: FloatArray, labels: BoolArray, k: int,
    common: dict[str, Any],
) -> ProbabilityModel:
    if not 1 <= k <= labels.size:
        raise InvalidOptions("k must lie in [1, n]", k=k, n=labels.size)
    # the intercept carries no distance information
    skip = X.intercept_index if isinstance(X, DesignMatrix) else None
    columns = tuple(j for j in range(values.shape[1]) if j != skip)
    if not columns:
        columns = tuple(range(values.shape[1]))
    scaler = StandardScaler().fit(values[:, list(columns)])
    scaled = scaler.transform(values[:, list(columns)])
    neighbors = NearestNeighbors(metric="euclidean").fit(scaled)
    return ProbabilityModel(
        k=k, labels=labels.astype(np.float64), scaler=scaler, neighbors=neighbors,
        knn_columns=columns, **common,
    )


def _log_likelihood(values: FloatArray, t: FloatArray, coef: FloatArray, kind: str) -> float:
    index = values @ coef
    if kind == "logit":
        return float(np.sum(t * log_expit(index) + (1 - t) * log_expit(-index)))
    return float(np.sum(t * norm.logcdf(index) + (1 - t) * norm.logcdf(-index)))


def _score_and_information(
    values: FloatArray, t: FloatArray, coef: FloatArray, kind: str,
) -> tuple[FloatArray, FloatArray]:
    index = values @ coef
    if kind == "logit":
        p = expit(index)
        return values.T @ (t - p), values.T @ (values * (p * (1 - p))[:, None])
    # probit: score via inverse Mills ratios, Fisher information for the step
    pdf = norm.pdf(index)
    cdf = np.clip(norm.cdf(index), 1e-300, 1.0)
    sf = np.clip(norm.sf(index), 1e-300, 1.0)
    score = values.T @ (t * pdf / cdf - (1 - t) * pdf / sf)
    info_w = pdf**2 / (cdf * sf)
    return score, values.T @ (values * info_w[:, None])


def _newton(values: FloatArray, t: FloatArray, kind: str) -> tuple[FloatArray, int]:
    coef = np.zeros(values.shape[1])
    ll = _log_likelihood(values, t, coef, kind)
    for iteration in range(1, NEWTON_MAX_ITER + 1):
        score, info = _score_and_information(values, t, coef, kind)
        if float(np.max(np.abs(score))) <= NEWTON_GRAD_TOL:
            return coef, iteration - 1
        try:
            direction = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise Separation(f"{kind} information matrix is singular; outcomes may be separated") from exc
        step = 1.0
        while True:
            candidate = coef + step * direction
            cand_ll = _log_likelihood(values, t, candidate, kind)
            if cand_ll >= ll or step < 1e-10:
                break
            step *= 0.5
        coef, ll = candidate, cand_ll
        if float(np.max(np.abs(step * direction))) <= 1e-14 * (1.0 + float(np.max(np.abs(coef)))):
            return coef, iteration
        if float(np.max(np.abs(coef))) > SEPARATION_BOUND:
            raise Separation(
                f"{kind} coefficients diverge (|coef| > {SEPARATION_BOUND:g}); "
                "outcomes look perfectly separated, try kind='knn' or 'lpm'",
                coef_max=float(np.max(np.abs(coef))),
            )
    logger.warning("%s Newton stopped after %d iterations", kind, NEWTON_MAX_ITER)
    return coef, NEWTON_MAX_ITER


def predict_prob(model: ProbabilityModel, X_new: DesignMatrix | npt.ArrayLike) -> FloatArray:
    return model.predict(X_new)


def trim_mask(model: ProbabilityModel, X: DesignMatrix | npt.ArrayLike) -> BoolArray:
    return model.trim_mask(X)
