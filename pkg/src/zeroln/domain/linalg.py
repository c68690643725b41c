"""Dense least-squares, projection and sandwich-covariance kernels.

All estimators share these. Factorizations are QR based; a design that never
changes across iterations is factorized once and reused through
``LeastSquares``.
"""

from __future__ import annotations

import logging

import numpy as np
import numpy.typing as npt
import scipy.linalg

from zeroln.domain.errors import DimensionMismatch, NonFinite, RankDeficient
from zeroln.domain.models.data import DesignMatrix, FloatArray, SandwichSpec

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-10


def _as_values(X: DesignMatrix | npt.ArrayLike) -> FloatArray:
    if isinstance(X, DesignMatrix):
        return X.values
    arr = np.asarray(X, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def check_finite(name: str, values: npt.ArrayLike) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"{name} contains NaN or Inf")


def check_rank(singular_values: FloatArray, k: int, what: str = "design") -> None:
    """Singular values below RANK_RTOL·max are treated as zero."""
    if singular_values.size == 0 or singular_values[0] <= 0:
        raise RankDeficient(f"{what} has rank 0", rank=0, k=k)
    rank = int(np.sum(singular_values > RANK_RTOL * singular_values[0]))
    if rank < k:
        raise RankDeficient(f"{what} has rank {rank} < {k}", rank=rank, k=k)


class LeastSquares:
    """Cached thin-QR factorization of a full-rank n×K matrix."""

    def __init__(self, X: DesignMatrix | npt.ArrayLike) -> None:
        values = _as_values(X)
        check_finite("design", values)
        n, k = values.shape
        if n < k:
            raise RankDeficient(f"n={n} is smaller than K={k}", rank=n, k=k)
        self._q, self._r = scipy.linalg.qr(values, mode="economic")
        check_rank(np.linalg.svd(self._r, compute_uv=False), k)
        self.n, self.k = n, k

    def solve(self, y: npt.ArrayLike) -> FloatArray:
        """argmin ‖y − Xb‖² for a vector or a matrix of right-hand sides."""
        rhs = np.asarray(y, dtype=np.float64)
        if rhs.shape[0] != self.n:
            raise DimensionMismatch("right-hand side length differs from n", rows=rhs.shape[0], n=self.n)
        check_finite("outcome", rhs)
        return scipy.linalg.solve_triangular(self._r, self._q.T @ rhs)

    def project(self, v: npt.ArrayLike) -> FloatArray:
        """Orthogonal projection onto the column space."""
        vec = np.asarray(v, dtype=np.float64)
        return self._q @ (self._q.T @ vec)


def ols_solve(X: DesignMatrix | npt.ArrayLike, y: npt.ArrayLike) -> FloatArray:
    return LeastSquares(X).solve(y)


def project(Z: DesignMatrix | npt.ArrayLike, v: npt.ArrayLike) -> FloatArray:
    """P_Z v with P_Z = Z(Z'Z)⁻¹Z'."""
    return LeastSquares(Z).project(v)


def sandwich_meat(
    moment_vectors: FloatArray,
    kind: str = "HC0",
    cluster_ids: npt.ArrayLike | None = None,
) -> FloatArray:
    """Σ mᵢmᵢ' (HC0/HC1) or Σ_g (Σ_{i∈g} mᵢ)(Σ_{i∈g} mᵢ)' without finite-sample factors."""
    m = np.asarray(moment_vectors, dtype=np.float64)
    if kind == "cluster":
        if cluster_ids is None:
            raise DimensionMismatch("cluster meat needs cluster ids")
        _, inverse = np.unique(np.asarray(cluster_ids), return_inverse=True)
        sums = np.zeros((int(inverse.max()) + 1, m.shape[1]))
        np.add.at(sums, inverse, m)
        return sums.T @ sums
    return m.T @ m


def small_sample_factor(n: int, k: int, kind: str, n_clusters: int | None = None) -> float:
    if kind == "HC0":
        return 1.0
    if kind == "HC1":
        return n / (n - k) if n > k else 1.0
    g = n_clusters or n
    if g <= 1 or n <= k:
        return 1.0
    return (g / (g - 1)) * ((n - 1) / (n - k))


def sandwich_cov(
    X: DesignMatrix | npt.ArrayLike,
    moment_vectors: npt.ArrayLike,
    spec: SandwichSpec,
) -> FloatArray:
    """Covariance of β̂: (X'BX)⁻¹ · meat · (X'BX)⁻¹ with B = diag(bread_weights).

    With unit bread weights and HC0 this is the classical White sandwich.
    """
    values = _as_values(X)
    m = np.asarray(moment_vectors, dtype=np.float64)
    n, k = values.shape
    if m.shape != (n, k):
        raise DimensionMismatch("moment vectors must be n×K", shape=m.shape, expected=(n, k))
    if spec.bread_weights.shape[0] != n:
        raise DimensionMismatch("bread weights have wrong length", weights=spec.bread_weights.shape[0], n=n)
    bread = values.T @ (values * spec.bread_weights[:, None])
    return sandwich_from_bread(bread, m, spec.meat_kind, spec.cluster_ids)


def sandwich_from_bread(
    bread: npt.ArrayLike,
    moment_vectors: npt.ArrayLike,
    meat_kind: str = "HC1",
    cluster_ids: npt.ArrayLike | None = None,
) -> FloatArray:
    """A⁻¹ · meat · A⁻¹ for an already assembled K×K bread A.

    The two-stage estimators build A from both the projected and the raw
    design, so they pass it in directly. A is symmetrized first.
    """
    a = np.asarray(bread, dtype=np.float64)
    m = np.asarray(moment_vectors, dtype=np.float64)
    n, k = m.shape
    if a.shape != (k, k):
        raise DimensionMismatch("bread must be K×K", shape=a.shape, k=k)
    check_finite("moment vectors", m)
    check_finite("bread", a)

    a = 0.5 * (a + a.T)
    check_rank(np.linalg.svd(a, compute_uv=False), k, what="weighted bread")
    bread_inv = scipy.linalg.inv(a)

    meat = sandwich_meat(m, meat_kind, cluster_ids)
    n_clusters = int(np.unique(np.asarray(cluster_ids)).size) if cluster_ids is not None else None
    cov = small_sample_factor(n, k, meat_kind, n_clusters) * (bread_inv @ meat @ bread_inv)
    return 0.5 * (cov + cov.T)


def robust_ols_cov(
    X: DesignMatrix | npt.ArrayLike,
    residuals: npt.ArrayLike,
    meat_kind: str = "HC1",
    cluster_ids: npt.ArrayLike | None = None,
) -> FloatArray:
    """Heteroskedasticity- (or cluster-) robust covariance of plain OLS."""
    values = _as_values(X)
    resid = np.asarray(residuals, dtype=np.float64)
    spec = SandwichSpec(
        np.ones(values.shape[0]), meat_kind,  # type: ignore[arg-type]
        None if cluster_ids is None else np.asarray(cluster_ids),
    )
    return sandwich_cov(values, values * resid[:, None], spec)
