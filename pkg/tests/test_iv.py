"""Tests for i2SLS and its first stage."""

from __future__ import annotations

import numpy as np
import pytest

from zeroln.domain.errors import DimensionMismatch, RankDeficient, WeakInstrument
from zeroln.domain.estimators import fit_i2sls, fit_iols
from zeroln.domain.estimators.iv import first_stage
from zeroln.domain.models.data import Dataset, DesignMatrix
from zeroln.domain.options import FitOptions


class TestFirstStage:
    def test_exogenous_instruments_reproduce_x(self, rng):
        X = DesignMatrix.from_array(rng.normal(size=(50, 2)), add_intercept=True)
        np.testing.assert_allclose(first_stage(X, X), X.values, atol=1e-10)

    def test_too_few_instruments(self, rng):
        X = DesignMatrix.from_array(rng.normal(size=(50, 2)), add_intercept=True)
        Z = DesignMatrix.from_array(rng.normal(size=(50, 1)), ["z"], add_intercept=True)
        with pytest.raises(RankDeficient):
            first_stage(X, Z)

    def test_weak_instrument_warning(self, rng):
        n = 500
        z = rng.normal(size=(n, 2))
        Z = DesignMatrix.from_array(z, ["z1", "z2"], add_intercept=True)
        noise = rng.normal(size=n)
        noise -= Z.values @ np.linalg.lstsq(Z.values, noise, rcond=None)[0]
        x = np.column_stack([z[:, 0] + rng.normal(size=n), noise + 1e-8 * z[:, 1]])
        X = DesignMatrix.from_array(x, ["x1", "x2"], add_intercept=True)
        with pytest.warns(WeakInstrument):
            first_stage(X, Z)


class TestI2sls:
    @pytest.mark.parametrize("variant", ["delta", "mp"])
    def test_instrumenting_with_x_equals_iols(self, dgp1_small, variant):
        data = Dataset(y=dgp1_small.y, X=dgp1_small.X, Z=dgp1_small.X)
        opts = FitOptions(variant=variant, tol=1e-12, max_iter=5_000)
        iv = fit_i2sls(data, opts)
        ols = fit_iols(dgp1_small, opts)
        np.testing.assert_allclose(iv.beta, ols.beta, atol=1e-8)
        np.testing.assert_allclose(iv.covariance, ols.covariance, rtol=1e-6)
        assert iv.estimator == "i2sls"

    def test_recovers_structural_coefficients(self, iv_data):
        fit = fit_i2sls(iv_data, FitOptions(variant="mp", max_iter=5_000))
        assert fit.coef("const") == pytest.approx(1.0, abs=0.3)
        assert fit.coef("x1") == pytest.approx(1.0, abs=0.2)
        assert fit.coef("x2") == pytest.approx(1.0, abs=0.2)

    def test_iols_is_biased_under_endogeneity(self, iv_data):
        iv = fit_i2sls(iv_data, FitOptions(variant="mp", max_iter=5_000))
        naive = fit_iols(iv_data, FitOptions(variant="mp", max_iter=5_000))
        iv_err = np.max(np.abs(iv.beta[1:] - 1.0))
        naive_err = np.max(np.abs(naive.beta[1:] - 1.0))
        assert iv_err < naive_err

    def test_missing_instruments(self, dgp1_small):
        with pytest.raises(DimensionMismatch):
            fit_i2sls(dgp1_small)

    def test_under_identified(self, dgp1_small):
        z = DesignMatrix.from_array(dgp1_small.X.values[:, 1], ["z"], add_intercept=True)
        data = Dataset(y=dgp1_small.y, X=dgp1_small.X, Z=z)
        with pytest.raises(RankDeficient):
            fit_i2sls(data, FitOptions(variant="mp"))

    def test_covariance_is_symmetric(self, iv_data):
        fit = fit_i2sls(iv_data, FitOptions(variant="mp", max_iter=5_000))
        np.testing.assert_allclose(fit.covariance, fit.covariance.T, atol=1e-14)
