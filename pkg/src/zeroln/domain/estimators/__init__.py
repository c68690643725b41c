"""Fixed-point and comparison estimators."""

from zeroln.domain.estimators.baselines import BASELINE_KINDS, fit_baseline
from zeroln.domain.estimators.engine import estimate_kappa
from zeroln.domain.estimators.fixed_effects import Demeaner, fit_iols_fe
from zeroln.domain.estimators.iols import fit_iols
from zeroln.domain.estimators.iv import fit_i2sls

__all__ = [
    "BASELINE_KINDS",
    "Demeaner",
    "estimate_kappa",
    "fit_baseline",
    "fit_i2sls",
    "fit_iols",
    "fit_iols_fe",
]
