"""Exception hierarchy for zeroln.

Every error carries a stable ``code`` so the CLI can emit a machine-readable
error object, plus a ``details`` dict with the numbers that triggered it.
"""

from __future__ import annotations

from typing import Any


class ZerolnError(Exception):
    """Base class for all library errors."""

    code = "zeroln_error"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details: dict[str, Any] = details

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}


# ------------------------------------------------------------------
# Numerical kernels
# ------------------------------------------------------------------

class RankDeficient(ZerolnError):
    code = "rank_deficient"


class NonFinite(ZerolnError):
    code = "non_finite"


class DimensionMismatch(ZerolnError):
    code = "dimension_mismatch"


# ------------------------------------------------------------------
# Transformations
# ------------------------------------------------------------------

class NonPositiveDelta(ZerolnError):
    code = "non_positive_delta"


class AllZeroOutcome(ZerolnError):
    code = "all_zero_outcome"


class NegativeRegressor(ZerolnError):
    code = "negative_regressor"


class NegativeOutcome(ZerolnError):
    code = "negative_outcome"


# ------------------------------------------------------------------
# Estimation
# ------------------------------------------------------------------

class NotConverged(ZerolnError):
    """Raised when the fixed-point iteration exhausts ``max_iter``.

    ``result`` holds the partial fit (trace, κ̂) so callers can inspect it.
    """

    code = "not_converged"

    def __init__(self, message: str, result: Any = None, **details: Any) -> None:
        super().__init__(message, **details)
        self.result = result


class KappaGuardTripped(ZerolnError):
    code = "kappa_guard_tripped"

    def __init__(self, message: str, kappa_hat: float, advice: str, **details: Any) -> None:
        super().__init__(message, kappa_hat=kappa_hat, advice=advice, **details)
        self.kappa_hat = kappa_hat
        self.advice = advice


class InsufficientTrace(ZerolnError):
    code = "insufficient_trace"


class InvalidOptions(ZerolnError):
    code = "invalid_options"


# ------------------------------------------------------------------
# Probability models
# ------------------------------------------------------------------

class Separation(ZerolnError):
    code = "separation"


class SingleClass(ZerolnError):
    code = "single_class"


# ------------------------------------------------------------------
# Tests and selection
# ------------------------------------------------------------------

class NoPositives(ZerolnError):
    code = "no_positives"


class BootstrapDegenerate(ZerolnError):
    code = "bootstrap_degenerate"


class Collinear(ZerolnError):
    code = "collinear"


class EmptyGrid(ZerolnError):
    code = "empty_grid"


class InvalidSpec(ZerolnError):
    code = "invalid_spec"


# ------------------------------------------------------------------
# Ingestion
# ------------------------------------------------------------------

class MissingColumn(ZerolnError):
    code = "missing_column"


class NonNumeric(ZerolnError):
    code = "non_numeric"


class EmptyAfterDrop(ZerolnError):
    code = "empty_after_drop"


# ------------------------------------------------------------------
# Warnings
# ------------------------------------------------------------------

class WeakInstrument(UserWarning):
    """Smallest singular value of the normalized Z'X is near zero."""


class SingletonGroups(UserWarning):
    """Some fixed-effect groups contain a single observation."""


class IterationBound(UserWarning):
    """Fewer iterations than the contraction bound -½·log n / log κ̂."""
