"""CSV ingestion into a typed ``Dataset``."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from zeroln.domain.errors import (
    EmptyAfterDrop,
    InvalidOptions,
    MissingColumn,
    NegativeOutcome,
    NonNumeric,
)
from zeroln.domain.models.data import Dataset, DesignMatrix
from zeroln.domain.transform import loglog_design, shift_negative

logger = logging.getLogger(__name__)


class ColumnSchema(BaseModel):
    """Which CSV column plays which role."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    outcome: str
    regressors: list[str] = Field(min_length=1)
    instruments: list[str] = Field(default_factory=list)
    fixed_effects: list[str] = Field(default_factory=list, max_length=2)
    cluster: str | None = None
    row_id: str | None = None
    add_intercept: bool = True
    shift_negative: bool = False
    loglog: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_loglog(self) -> ColumnSchema:
        unknown = [c for c in self.loglog if c not in self.regressors]
        if unknown:
            raise ValueError(f"log-log columns must be regressors: {unknown}")
        return self

    @property
    def numeric_columns(self) -> list[str]:
        return [self.outcome, *self.regressors, *self.instruments]

    @property
    def label_columns(self) -> list[str]:
        return [*self.fixed_effects, *([self.cluster] if self.cluster else [])]


def _encode(labels: pd.Series) -> np.ndarray:
    codes, _ = pd.factorize(labels, sort=True)
    return codes.astype(np.int64)


def load_csv(path: str | Path, schema: ColumnSchema) -> Dataset:
    """Read ``path`` and build a Dataset according to ``schema``.

    Rows with a missing value in any used column are dropped and counted.
    Label columns (fixed effects, clusters) may hold any text and are
    integer-encoded in sorted order.
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=True, skipinitialspace=True)
    frame.columns = [c.strip() for c in frame.columns]
    used = list(dict.fromkeys(
        [*schema.numeric_columns, *schema.label_columns, *([schema.row_id] if schema.row_id else [])]
    ))
    missing = [c for c in used if c not in frame.columns]
    if missing:
        raise MissingColumn(f"columns not found in {path.name}: {', '.join(missing)}",
                            columns=missing, available=list(frame.columns))
    # header is line 1, first data row is line 2
    frame.index = pd.RangeIndex(2, len(frame) + 2)
    frame = frame[used]

    numeric = frame[schema.numeric_columns].apply(lambda s: pd.to_numeric(s.str.strip(), errors="coerce"))
    bad = numeric.isna() & frame[schema.numeric_columns].notna()
    if bad.to_numpy().any():
        line, column = bad.stack()[lambda s: s].index[0]
        raise NonNumeric(
            f"non-numeric value {frame.at[line, column]!r} in column {column!r} at line {line}",
            line=int(line), column=column, value=frame.at[line, column],
        )

    complete = numeric.notna().all(axis=1) & frame[schema.label_columns].notna().all(axis=1)
    dropped = int((~complete).sum())
    if dropped:
        logger.info("Dropped %d rows with missing values from %s", dropped, path.name)
    numeric = numeric[complete]
    frame = frame[complete]
    if numeric.empty:
        raise EmptyAfterDrop(f"no complete rows left in {path.name}", dropped=dropped)

    y = numeric[schema.outcome].to_numpy(dtype=np.float64)
    if np.any(y < 0):
        if not schema.shift_negative:
            raise NegativeOutcome(
                f"outcome {schema.outcome!r} has negative values; rerun with --shift-negative "
                "to shift it by its minimum",
                minimum=float(y.min()),
            )
        y, alpha_hat = shift_negative(y)
        logger.info("Outcome shifted by %.6g", alpha_hat)

    X = DesignMatrix.from_array(
        numeric[schema.regressors].to_numpy(dtype=np.float64), schema.regressors, schema.add_intercept,
    )
    if schema.loglog:
        X = loglog_design(X, schema.loglog)
    Z = None
    if schema.instruments:
        if len(schema.instruments) < len(schema.regressors):
            raise InvalidOptions("need at least as many instruments as regressors",
                                 instruments=len(schema.instruments), regressors=len(schema.regressors))
        Z = DesignMatrix.from_array(
            numeric[schema.instruments].to_numpy(dtype=np.float64), schema.instruments,
            schema.add_intercept,
        )

    row_ids = (
        tuple(frame[schema.row_id].astype(str)) if schema.row_id
        else tuple(str(i) for i in frame.index)
    )
    return Dataset(
        y=y,
        X=X,
        Z=Z,
        fe_groups=tuple(_encode(frame[c]) for c in schema.fixed_effects),
        cluster_ids=_encode(frame[schema.cluster]) if schema.cluster else None,
        row_ids=row_ids,
        dropped_rows=dropped,
    )
