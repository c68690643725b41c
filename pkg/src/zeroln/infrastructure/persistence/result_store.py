"""JSON and CSV serialization of results.

JSON documents look like ``{"schema_version": 1, "kind": ..., "result": {...}}``.
Floats are written with ``repr``, the shortest string that reads back to
the same double; NaN and ±Inf become the strings "NaN", "Infinity" and
"-Infinity".
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from zeroln.domain.errors import InvalidOptions
from zeroln.domain.models.results import (
    Centering,
    EstimatorSummary,
    FitResult,
    McSummary,
    ModelEntry,
    Residuals,
    SelectionReport,
    SpecTestResult,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_KINDS: dict[type, str] = {
    FitResult: "fit_result",
    SpecTestResult: "spec_test_result",
    SelectionReport: "selection_report",
    McSummary: "mc_summary",
}
_NONFINITE = {"NaN": math.nan, "Infinity": math.inf, "-Infinity": -math.inf}


def _float(value: float) -> float | str:
    if math.isnan(value):
        return "NaN"
    if math.isinf(value):
        return "Infinity" if value > 0 else "-Infinity"
    return value


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types for dataclasses, numpy arrays and scalars."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "model_dump"):
        return to_jsonable(obj.model_dump())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _floats(values: Any) -> Any:
    if isinstance(values, list):
        return [_floats(v) for v in values]
    if isinstance(values, str):
        return _NONFINITE[values]
    return float(values)


def _array(values: Any, dtype: type = np.float64) -> np.ndarray | None:
    if values is None:
        return None
    if dtype is bool:
        return np.asarray(values, dtype=bool)
    return np.asarray(_floats(values), dtype=np.float64)


def _scalar(value: Any) -> Any:
    return _NONFINITE[value] if isinstance(value, str) and value in _NONFINITE else value


def to_json(result: Any) -> str:
    kind = _KINDS.get(type(result))
    if kind is None:
        raise InvalidOptions(f"no JSON schema for {type(result).__name__}")
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, "result": to_jsonable(result)}
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


# ------------------------------------------------------------------
# Reading back
# ------------------------------------------------------------------

def fit_result_from_dict(d: dict[str, Any]) -> FitResult:
    centering = None
    if d["centering"] is not None:
        c = d["centering"]
        centering = Centering(
            kind=c["kind"],
            scalar_c=_scalar(c["scalar_c"]),
            vector_c=_array(c["vector_c"]),
            intercept_tilde=_scalar(c["intercept_tilde"]),
        )
    residuals = Residuals(u=_array(d["residuals"]["u"]),
                          positive_mask=_array(d["residuals"]["positive_mask"], bool))
    return FitResult(
        estimator=d["estimator"],
        variant=d["variant"],
        beta=_array(d["beta"]),
        column_names=tuple(d["column_names"]),
        centering=centering,
        covariance=_array(d["covariance"]),
        delta=_scalar(d["delta"]),
        kappa_hat=_scalar(d["kappa_hat"]),
        iterations=d["iterations"],
        converged=d["converged"],
        residuals=residuals,
        clamp_count=d["clamp_count"],
        ols_covariance=_array(d["ols_covariance"]),
        trace=[_array(b) for b in d["trace"]],
        fixed_effects=_array(d["fixed_effects"]),
        diagnostics=d["diagnostics"],
    )


def spec_test_from_dict(d: dict[str, Any]) -> SpecTestResult:
    return SpecTestResult(**{k: _scalar(v) for k, v in d.items()})


def selection_from_dict(d: dict[str, Any]) -> SelectionReport:
    entries = tuple(
        ModelEntry(**{**{k: _scalar(v) for k, v in e.items()}, "beta": _array(e["beta"])})
        for e in d["per_model"]
    )
    return SelectionReport(
        grid=tuple(_floats(d["grid"])), per_model=entries, selected=d["selected"],
        alpha=d["alpha"], all_rejected=d["all_rejected"], advice=d["advice"],
    )


def mc_summary_from_dict(d: dict[str, Any]) -> McSummary:
    estimators = tuple(
        EstimatorSummary(
            estimator=e["estimator"], mean=_array(e["mean"]), sd=_array(e["sd"]),
            n_ok=e["n_ok"], n_failed=e["n_failed"], n_diverged=e["n_diverged"], extra=e["extra"],
        )
        for e in d["estimators"]
    )
    return McSummary(
        dgp=d["dgp"], n=d["n"], reps=d["reps"], seed=d["seed"],
        column_names=tuple(d["column_names"]), estimators=estimators,
        rejection_rates=d["rejection_rates"], test_failures=d["test_failures"],
        lambda_means=d["lambda_means"],
    )


_READERS = {
    "fit_result": fit_result_from_dict,
    "spec_test_result": spec_test_from_dict,
    "selection_report": selection_from_dict,
    "mc_summary": mc_summary_from_dict,
}


def from_json(text: str) -> Any:
    doc = json.loads(text)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidOptions("unsupported result schema version", schema_version=version)
    return _READERS[doc["kind"]](doc["result"])


# ------------------------------------------------------------------
# CSV summary tables
# ------------------------------------------------------------------

def summary_frame(result: Any) -> pd.DataFrame:
    """One flat table per result type."""
    if isinstance(result, FitResult):
        return pd.DataFrame({
            "term": result.column_names,
            "estimate": result.beta,
            "std_error": result.std_errors,
        })
    if isinstance(result, SpecTestResult):
        return pd.DataFrame([{
            "model_id": result.model_id, "lambda_hat": result.lambda_hat, "se_boot": result.se_boot,
            "t_stat": result.t_stat, "p_value": result.p_value, "n_used": result.n_used,
            "n_boot": result.n_boot, "n_failed": result.n_failed,
        }])
    if isinstance(result, SelectionReport):
        return pd.DataFrame([{
            "model_id": e.model_id, "delta": e.delta, "lambda_hat": e.lambda_hat, "se": e.se,
            "p_value": e.p_value, "error": e.error, "experimental": e.experimental,
            "selected": e.model_id == result.selected,
        } for e in result.per_model])
    if isinstance(result, McSummary):
        rows: list[dict[str, Any]] = []
        for s in result.estimators:
            names = s.extra.get("column_names") or list(result.column_names)
            for j, name in enumerate(names):
                rows.append({
                    "estimator": s.estimator, "term": name,
                    "mean": None if s.mean is None else float(s.mean[j]),
                    "sd": None if s.sd is None else float(s.sd[j]),
                    "n_ok": s.n_ok, "n_failed": s.n_failed, "n_diverged": s.n_diverged,
                })
        for test, rate in result.rejection_rates.items():
            rows.append({"estimator": test, "term": "rejection_rate", "mean": rate,
                         "n_failed": result.test_failures.get(test, 0)})
        return pd.DataFrame(rows)
    raise InvalidOptions(f"no CSV table for {type(result).__name__}")


def to_csv(result: Any) -> str:
    return summary_frame(result).to_csv(index=False, float_format="%.17g", lineterminator="\n")


def write_result(result: Any, path: str | Path, fmt: str = "json") -> Path:
    """Write ``result`` as JSON or a CSV summary table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = to_json(result) if fmt == "json" else to_csv(result)
    path.write_text(text, encoding="utf-8")
    logger.info("Wrote %s result to %s", fmt, path)
    return path
