"""Shared fixtures: small simulated datasets and hand-built fits."""

from __future__ import annotations

import numpy as np
import pytest

from zeroln.application.dgp import DgpSpec, gen_dgp
from zeroln.domain.models.data import Dataset, DesignMatrix
from zeroln.domain.models.results import Centering, FitResult
from zeroln.domain.transform import residuals_from_index


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(20240611))


@pytest.fixture(scope="session")
def dgp1_data() -> Dataset:
    """DGP 1 (Poisson restriction holds), n = 2,000."""
    return gen_dgp(DgpSpec("poisson_dgp1", 2_000), seed=11)


@pytest.fixture(scope="session")
def dgp1_small() -> Dataset:
    return gen_dgp(DgpSpec("poisson_dgp1", 400), seed=5)


@pytest.fixture(scope="session")
def iv_data() -> Dataset:
    return gen_dgp(DgpSpec("iv_dgp", 10_000), seed=3)


def noiseless(n: int, beta: tuple[float, ...], seed: int = 0) -> Dataset:
    """y = exp(X'β) exactly, X = [1, x1, x2] with moderate regressors."""
    gen = np.random.Generator(np.random.PCG64(seed))
    X = DesignMatrix.from_array(gen.normal(0.0, 0.5, size=(n, len(beta) - 1)), add_intercept=True)
    return Dataset(y=np.exp(X.values @ np.asarray(beta)), X=X)


def manual_fit(
    data: Dataset, beta: np.ndarray, variant: str = "mp", delta: float = 1.0,
    scalar_c: float | None = None,
) -> FitResult:
    """A converged-looking FitResult at ``beta`` without running an estimator."""
    index = data.X.values @ beta
    centering = (
        Centering("delta_scalar", scalar_c=scalar_c) if scalar_c is not None
        else Centering(f"{variant}_vector", vector_c=np.zeros(data.n))  # type: ignore[arg-type]
    )
    k = data.X.k
    return FitResult(
        estimator="iols",
        variant=variant,
        beta=np.asarray(beta, dtype=np.float64),
        column_names=data.X.column_names,
        centering=centering,
        covariance=np.eye(k),
        delta=delta,
        kappa_hat=0.0,
        iterations=1,
        converged=True,
        residuals=residuals_from_index(data.y, index),
    )
