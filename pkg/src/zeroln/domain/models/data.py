"""Input data types: design matrices, datasets and covariance specs.

Pure data, numpy only. Arrays are copied and made read-only on construction
so fitted results can share them safely between worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
import numpy.typing as npt

from zeroln.domain.errors import DimensionMismatch, InvalidOptions, NonFinite

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

MeatKind = Literal["HC0", "HC1", "cluster"]


def _frozen(values: npt.ArrayLike, dtype: type = np.float64) -> npt.NDArray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DesignMatrix:
    """n×K regressor matrix with column labels and an explicit intercept flag.

    The intercept is never inferred from constant columns: ``intercept_index``
    names it, because the δ-centering splits β into the constant and the rest.
    """

    values: FloatArray
    column_names: tuple[str, ...]
    intercept_index: int | None = None

    def __post_init__(self) -> None:
        values = _frozen(np.atleast_2d(self.values))
        if values.ndim != 2:
            raise DimensionMismatch("design matrix must be two-dimensional", shape=values.shape)
        object.__setattr__(self, "values", values)
        names = tuple(self.column_names)
        if len(names) != values.shape[1]:
            raise DimensionMismatch(
                "column_names length does not match column count",
                names=len(names), columns=values.shape[1],
            )
        object.__setattr__(self, "column_names", names)
        if self.intercept_index is not None and not 0 <= self.intercept_index < values.shape[1]:
            raise InvalidOptions("intercept_index out of range", intercept_index=self.intercept_index)

    @classmethod
    def from_array(
        cls,
        values: npt.ArrayLike,
        column_names: Sequence[str] | None = None,
        add_intercept: bool = False,
    ) -> DesignMatrix:
        """Build a design, optionally prepending a ``const`` column."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        names = list(column_names) if column_names is not None else [f"x{j + 1}" for j in range(arr.shape[1])]
        if add_intercept:
            arr = np.column_stack([np.ones(arr.shape[0]), arr])
            names = ["const", *names]
            return cls(arr, tuple(names), intercept_index=0)
        return cls(arr, tuple(names))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def k(self) -> int:
        return int(self.values.shape[1])

    @property
    def has_intercept(self) -> bool:
        return self.intercept_index is not None

    def non_intercept(self) -> DesignMatrix:
        """The design without its intercept column (X^r)."""
        if self.intercept_index is None:
            return self
        keep = [j for j in range(self.k) if j != self.intercept_index]
        return DesignMatrix(self.values[:, keep], tuple(self.column_names[j] for j in keep))

    def take(self, rows: npt.ArrayLike) -> DesignMatrix:
        return DesignMatrix(self.values[np.asarray(rows)], self.column_names, self.intercept_index)

    def append_columns(self, columns: npt.ArrayLike, names: Sequence[str]) -> DesignMatrix:
        cols = np.asarray(columns, dtype=np.float64)
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.shape[0] != self.n:
            raise DimensionMismatch("appended columns have wrong length", rows=cols.shape[0], n=self.n)
        return DesignMatrix(
            np.column_stack([self.values, cols]),
            (*self.column_names, *names),
            self.intercept_index,
        )


@dataclass(frozen=True)
class Dataset:
    """Outcome, regressors and optional instruments, fixed effects and clusters."""

    y: FloatArray
    X: DesignMatrix
    Z: DesignMatrix | None = None
    fe_groups: tuple[IntArray, ...] = ()
    cluster_ids: IntArray | None = None
    row_ids: tuple[str, ...] = field(default=())
    dropped_rows: int = 0

    def __post_init__(self) -> None:
        y = _frozen(np.ravel(self.y))
        object.__setattr__(self, "y", y)
        n = y.shape[0]
        if not np.all(np.isfinite(y)):
            raise NonFinite("outcome contains NaN or Inf")
        if self.X.n != n:
            raise DimensionMismatch("X rows differ from y length", x_rows=self.X.n, n=n)
        if self.Z is not None and self.Z.n != n:
            raise DimensionMismatch("Z rows differ from y length", z_rows=self.Z.n, n=n)
        if len(self.fe_groups) > 2:
            raise InvalidOptions("at most two fixed-effect dimensions are supported")
        groups = tuple(_frozen(g, np.int64) for g in self.fe_groups)
        for g in groups:
            if g.shape[0] != n:
                raise DimensionMismatch("fixed-effect labels have wrong length", labels=g.shape[0], n=n)
        object.__setattr__(self, "fe_groups", groups)
        if self.cluster_ids is not None:
            clusters = _frozen(self.cluster_ids, np.int64)
            if clusters.shape[0] != n:
                raise DimensionMismatch("cluster labels have wrong length", labels=clusters.shape[0], n=n)
            object.__setattr__(self, "cluster_ids", clusters)
        row_ids = tuple(self.row_ids) if self.row_ids else tuple(str(i) for i in range(n))
        if len(row_ids) != n:
            raise DimensionMismatch("row_ids have wrong length", row_ids=len(row_ids), n=n)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def positive(self) -> BoolArray:
        return self.y > 0

    def take(self, rows: npt.ArrayLike) -> Dataset:
        """Row subset (with repetition allowed), used by the pairs bootstrap."""
        idx = np.asarray(rows, dtype=np.int64)
        return Dataset(
            y=self.y[idx],
            X=self.X.take(idx),
            Z=self.Z.take(idx) if self.Z is not None else None,
            fe_groups=tuple(g[idx] for g in self.fe_groups),
            cluster_ids=self.cluster_ids[idx] if self.cluster_ids is not None else None,
            row_ids=tuple(self.row_ids[i] for i in idx),
        )

    def with_design(self, X: DesignMatrix) -> Dataset:
        return replace(self, X=X)


@dataclass(frozen=True)
class SandwichSpec:
    """Bread weights (diagonal of I−W) and the meat estimator to use."""

    bread_weights: FloatArray
    meat_kind: MeatKind = "HC1"
    cluster_ids: IntArray | None = None

    def __post_init__(self) -> None:
        weights = _frozen(np.ravel(self.bread_weights))
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise NonFinite("bread weights must be finite and non-negative")
        object.__setattr__(self, "bread_weights", weights)
        if (self.meat_kind == "cluster") != (self.cluster_ids is not None):
            raise InvalidOptions("cluster_ids must be given exactly when meat_kind is 'cluster'")
        if self.cluster_ids is not None:
            object.__setattr__(self, "cluster_ids", _frozen(self.cluster_ids, np.int64))

    @classmethod
    def unweighted(cls, n: int, meat_kind: MeatKind = "HC1",
                   cluster_ids: IntArray | None = None) -> SandwichSpec:
        return cls(np.ones(n), meat_kind, cluster_ids)
