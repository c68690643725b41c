"""Simulation designs with zero outcomes.

All designs share Y = exp(β₀ + β₁X₁ + β₂X₂)·U with U = ξ·exp(ε), where
P = 1/(1 + exp(γ₀ + γ₁X₁ + γ₂X₂)) is the probability of a zero (ξ = 0)
and Q = 1 − P the probability of a positive outcome.

poisson_dgp1    E[U|X] = 1: ε | ξ=1 ~ N(−log Q − ½, σ²=1)
loglinear_dgp2  E[ε|X] = 0: ε ~ N(ξ/Q − (1−ξ)/P, σ²=0.5)
iols_dgp3       E[log(δ+U) − c | X] = 0: log(δ + e^ε) | ξ=1 is a Gaussian
                with mean (c − log δ)/Q + log δ, σ²=0.5, truncated below at log δ
iv_dgp          DGP 1 driven by instruments Z, with X_k = 0.8·Z_k + 0.2·ε²
iv_fe_dgp       iv_dgp plus unit and period effects ~ U[−0.5, 0.5], T periods
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import numpy.typing as npt
from scipy.special import expit
from scipy.stats import norm, truncnorm

from zeroln.domain.errors import InvalidSpec
from zeroln.domain.models.data import BoolArray, Dataset, DesignMatrix, FloatArray

logger = logging.getLogger(__name__)

DgpKind = Literal["poisson_dgp1", "loglinear_dgp2", "iols_dgp3", "iv_dgp", "iv_fe_dgp"]
DGP_KINDS: tuple[str, ...] = ("poisson_dgp1", "loglinear_dgp2", "iols_dgp3", "iv_dgp", "iv_fe_dgp")

_DEFAULT_SIGMA2 = {
    "poisson_dgp1": 1.0,
    "loglinear_dgp2": 0.5,
    "iols_dgp3": 0.5,
    "iv_dgp": 1.0,
    "iv_fe_dgp": 1.0,
}

X_MEAN = 1.0
X_COV = ((1.0, -0.3), (-0.3, 1.0))


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    n: int
    beta: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gamma: tuple[float, float, float] = (-0.4, 0.4, -0.4)
    sigma2: float | None = None
    delta_star: float = 0.25
    c_star: float = -0.7447
    periods: int = 100
    extra: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in DGP_KINDS:
            raise InvalidSpec(f"unknown DGP {self.kind!r}", choices=list(DGP_KINDS))
        if self.n < 10:
            raise InvalidSpec("n must be at least 10", n=self.n)
        if len(self.beta) != 3 or len(self.gamma) != 3:
            raise InvalidSpec("beta and gamma need three entries each")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise InvalidSpec("sigma2 must be positive", sigma2=self.sigma2)
        if self.kind == "iols_dgp3" and not self.delta_star > 0:
            raise InvalidSpec("delta_star must be positive", delta_star=self.delta_star)
        if self.kind == "iv_fe_dgp" and (self.periods < 2 or self.n % self.periods):
            raise InvalidSpec("iv_fe_dgp needs T >= 2 dividing n", n=self.n, periods=self.periods)

    @property
    def variance(self) -> float:
        return self.sigma2 if self.sigma2 is not None else _DEFAULT_SIGMA2[self.kind]


def prob_zero(gamma: npt.ArrayLike, x1: npt.ArrayLike, x2: npt.ArrayLike) -> FloatArray:
    """P = 1/(1 + exp(γ₀ + γ₁x₁ + γ₂x₂)) = Pr(Y = 0)."""
    g = np.asarray(gamma, dtype=np.float64)
    return expit(-(g[0] + g[1] * np.asarray(x1) + g[2] * np.asarray(x2)))


def _regressors(gen: np.random.Generator, n: int) -> FloatArray:
    return gen.multivariate_normal([X_MEAN, X_MEAN], X_COV, size=n, method="cholesky")


def gen_dgp(spec: DgpSpec, seed: int) -> Dataset:
    """Draw one dataset; identical (spec, seed) give identical data."""
    gen = np.random.Generator(np.random.PCG64(seed))
    if spec.kind in ("iv_dgp", "iv_fe_dgp"):
        return _gen_iv(spec, gen)

    x = _regressors(gen, spec.n)
    p = prob_zero(spec.gamma, x[:, 0], x[:, 1])
    xi = gen.random(spec.n) >= p
    q = 1.0 - p
    sd = np.sqrt(spec.variance)

    if spec.kind == "poisson_dgp1":
        eps = gen.normal(-np.log(q) - 0.5, sd)
        u = np.where(xi, np.exp(eps), 0.0)
    elif spec.kind == "loglinear_dgp2":
        mean = np.where(xi, 1.0 / q, -1.0 / p)
        eps = gen.normal(mean, sd)
        u = np.where(xi, np.exp(eps), 0.0)
    else:
        u = np.where(xi, _dgp3_u(spec, gen, q, sd), 0.0)

    X = DesignMatrix.from_array(x, ("x1", "x2"), add_intercept=True)
    y = np.exp(X.values @ np.asarray(spec.beta)) * u
    return Dataset(y=y, X=X)


def _dgp3_u(spec: DgpSpec, gen: np.random.Generator, q: FloatArray, sd: float) -> FloatArray:
    """U with log(δ + U) truncated Gaussian, by inverse CDF on the truncated support."""
    log_delta = np.log(spec.delta_star)
    mean = (spec.c_star - log_delta) / q + log_delta
    lower = (log_delta - mean) / sd
    draws = gen.random(q.size)
    v = truncnorm.ppf(draws, lower, np.inf, loc=mean, scale=sd)
    # ppf can return the bound itself when the lower tail mass is ~1
    v = np.where(np.isfinite(v), v, mean + sd * norm.ppf(1.0 - 1e-16))
    return np.maximum(np.exp(v) - spec.delta_star, 0.0)


def _gen_iv(spec: DgpSpec, gen: np.random.Generator) -> Dataset:
    n = spec.n
    z = gen.normal(X_MEAN, 1.0, size=(n, 2))
    p = prob_zero(spec.gamma, z[:, 0], z[:, 1])
    xi = gen.random(n) >= p
    eps = gen.normal(-np.log1p(-p) - 0.5, np.sqrt(spec.variance))
    x = 0.8 * z + 0.2 * (eps**2)[:, None]
    u = np.where(xi, np.exp(eps), 0.0)

    X = DesignMatrix.from_array(x, ("x1", "x2"), add_intercept=True)
    Z = DesignMatrix.from_array(z, ("z1", "z2"), add_intercept=True)
    index = X.values @ np.asarray(spec.beta)
    if spec.kind == "iv_dgp":
        return Dataset(y=np.exp(index) * u, X=X, Z=Z)

    units = n // spec.periods
    unit = np.repeat(np.arange(units), spec.periods)
    period = np.tile(np.arange(spec.periods), units)
    alpha = gen.uniform(-0.5, 0.5, size=units)
    rho = gen.uniform(-0.5, 0.5, size=spec.periods)
    y = np.exp(index + alpha[unit] + rho[period]) * u
    return Dataset(y=y, X=X, Z=Z, fe_groups=(unit, period))


# ------------------------------------------------------------------
# Planted nulls
# ------------------------------------------------------------------

def plant_null_poisson(
    X: DesignMatrix, positive: BoolArray, beta: npt.ArrayLike, p_hat: npt.ArrayLike,
) -> FloatArray:
    """Outcome with U = 1/Q̂ on positive rows, so the Poisson λ̂ is exactly 1 at β.

    ``p_hat`` is the fitted probability of a positive outcome.
    """
    p = np.asarray(p_hat, dtype=np.float64)
    mu = np.exp(X.values @ np.asarray(beta, dtype=np.float64))
    return np.where(np.asarray(positive, dtype=bool), mu / p, 0.0)


def plant_null_delta(
    X: DesignMatrix, positive: BoolArray, beta: npt.ArrayLike, p_hat: npt.ArrayLike,
    delta: float, c: float,
) -> FloatArray:
    """Outcome with log(δ+U) − log δ = (c − log δ)/Q̂ on positive rows, Q̂ = ``p_hat``.

    Needs c > log δ so that U > 0.
    """
    if not c > np.log(delta):
        raise InvalidSpec("planted iOLS_δ null needs c > log(delta)", c=c, delta=delta)
    p = np.asarray(p_hat, dtype=np.float64)
    u = delta * np.expm1((c - np.log(delta)) / p)
    mu = np.exp(X.values @ np.asarray(beta, dtype=np.float64))
    return np.where(np.asarray(positive, dtype=bool), mu * u, 0.0)
