"""Result types produced by estimators, tests, selection and simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from zeroln.domain.errors import InvalidOptions
from zeroln.domain.models.data import BoolArray, FloatArray

CenteringKind = Literal["delta_scalar", "mp_vector", "ap_vector"]
Variant = Literal["delta", "mp", "ap"]


@dataclass(frozen=True)
class Residuals:
    """Multiplicative residuals U_i = Y_i·exp(−X_i'β)."""

    u: FloatArray
    positive_mask: BoolArray


@dataclass(frozen=True)
class Centering:
    """The centering term c subtracted from log(Y + δ·exp(X'β))."""

    kind: CenteringKind
    scalar_c: float | None = None
    vector_c: FloatArray | None = None
    intercept_tilde: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "delta_scalar":
            if self.scalar_c is None or self.vector_c is not None:
                raise InvalidOptions("delta_scalar centering needs scalar_c only")
            if not np.isfinite(self.scalar_c):
                raise InvalidOptions("centering is not finite", scalar_c=self.scalar_c)
        else:
            if self.vector_c is None or self.scalar_c is not None:
                raise InvalidOptions(f"{self.kind} centering needs vector_c only")
            if not np.all(np.isfinite(self.vector_c)):
                raise InvalidOptions("centering is not finite")

    def values(self, n: int) -> FloatArray:
        """Centering as an n-vector regardless of kind."""
        if self.vector_c is not None:
            return np.asarray(self.vector_c, dtype=np.float64)
        return np.full(n, float(self.scalar_c))  # type: ignore[arg-type]


@dataclass
class FitResult:
    """Outcome of one estimator run.

    ``covariance`` is the reweighted sandwich of the fixed point; ``ols_covariance``
    is the heteroskedasticity-robust covariance of the last OLS step alone.
    """

    estimator: str
    variant: str
    beta: FloatArray
    column_names: tuple[str, ...]
    centering: Centering | None
    covariance: FloatArray
    delta: float
    kappa_hat: float
    iterations: int
    converged: bool
    residuals: Residuals
    clamp_count: int = 0
    ols_covariance: FloatArray | None = None
    trace: list[FloatArray] = field(default_factory=list)
    fixed_effects: FloatArray | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def std_errors(self) -> FloatArray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def coef(self, name: str) -> float:
        return float(self.beta[self.column_names.index(name)])


@dataclass(frozen=True)
class SpecTestResult:
    """λ specification test outcome; λ = 1 under the null."""

    lambda_hat: float
    se_boot: float
    t_stat: float
    p_value: float
    n_used: int
    n_boot: int
    condition_on: Literal["X", "Z"] = "X"
    model_id: str = ""
    n_failed: int = 0
    failure_causes: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ModelEntry:
    """One candidate evaluated by the selection procedure."""

    model_id: str
    delta: float | None
    lambda_hat: float | None
    se: float | None
    p_value: float | None
    beta: FloatArray | None
    error: str | None = None
    experimental: bool = False


@dataclass(frozen=True)
class SelectionReport:
    grid: tuple[float, ...]
    per_model: tuple[ModelEntry, ...]
    selected: str | None
    alpha: float
    all_rejected: bool
    advice: str = ""

    def entry(self, model_id: str) -> ModelEntry:
        for entry in self.per_model:
            if entry.model_id == model_id:
                return entry
        raise KeyError(model_id)


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    mean: FloatArray | None
    sd: FloatArray | None
    n_ok: int
    n_failed: int
    n_diverged: int
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class McSummary:
    """Aggregated Monte Carlo output (means, sds, rejection rates)."""

    dgp: str
    n: int
    reps: int
    seed: int
    column_names: tuple[str, ...]
    estimators: tuple[EstimatorSummary, ...]
    rejection_rates: dict[str, float | None]
    test_failures: dict[str, int]
    lambda_means: dict[str, float | None] = field(default_factory=dict)

    def summary(self, estimator: str) -> EstimatorSummary:
        for s in self.estimators:
            if s.estimator == estimator:
                return s
        raise KeyError(estimator)
