"""Tests for residuals, the transformed outcome and the centering terms."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zeroln.domain.errors import (
    AllZeroOutcome,
    InvalidOptions,
    NegativeOutcome,
    NegativeRegressor,
    NonFinite,
    NonPositiveDelta,
)
from zeroln.domain.models.data import DesignMatrix
from zeroln.domain.models.results import Centering
from zeroln.domain.transform import (
    c_ap,
    c_ap_from_index,
    c_delta_from_index,
    c_hat_delta,
    c_mp,
    c_mp_from_index,
    c_taylor,
    ihs_outcome,
    iols_delta_transform,
    linear_index,
    loglog_design,
    pf_outcome,
    residual_u,
    residuals_from_index,
    shift_negative,
    transform_from_index,
)


def _scalar(c: float) -> Centering:
    return Centering("delta_scalar", scalar_c=c)


class TestResiduals:
    def test_noiseless_model_gives_unit_residuals(self, rng):
        X = DesignMatrix.from_array(rng.normal(size=(20, 2)), add_intercept=True)
        beta = np.array([0.3, -0.5, 1.0])
        res = residual_u(np.exp(X.values @ beta), X, beta)
        np.testing.assert_allclose(res.u, 1.0, rtol=1e-12)

    def test_hand_computed(self):
        res = residuals_from_index([2.0, 0.0, 6.0], np.log([2.0, 5.0, 3.0]))
        np.testing.assert_allclose(res.u, [1.0, 0.0, 2.0], rtol=1e-12)
        assert res.u[1] == 0.0
        assert res.positive_mask.tolist() == [True, False, True]

    def test_negative_outcome(self):
        with pytest.raises(NegativeOutcome):
            residuals_from_index([1.0, -1.0], np.zeros(2))

    def test_exponent_guard(self):
        X = DesignMatrix.from_array(np.array([[800.0], [1.0]]))
        with pytest.raises(NonFinite):
            residual_u([1.0, 1.0], X, [1.0])

    def test_linear_index_clamps(self):
        X = DesignMatrix.from_array(np.array([[800.0], [-900.0], [1.0]]))
        index, clamps = linear_index(X, [1.0])
        assert clamps == 2
        assert index.tolist() == [700.0, -700.0, 1.0]

    def test_linear_index_beta_length(self):
        X = DesignMatrix.from_array(np.ones((3, 2)))
        with pytest.raises(InvalidOptions):
            linear_index(X, [1.0])


class TestTransform:
    def test_zero_outcome(self):
        y_tilde = transform_from_index([0.0], np.zeros(1), 1.0, _scalar(np.log(2.0)))
        assert y_tilde[0] == pytest.approx(-np.log(2.0), abs=1e-15)

    def test_direct_evaluation(self):
        y_tilde = transform_from_index([3.0], np.zeros(1), 0.25, _scalar(0.0))
        assert y_tilde[0] == pytest.approx(np.log(3.25), abs=1e-12)
        assert y_tilde[0] == pytest.approx(1.17865, abs=1e-5)

    def test_non_positive_delta(self):
        with pytest.raises(NonPositiveDelta):
            transform_from_index([1.0], np.zeros(1), 0.0, _scalar(0.0))

    def test_large_index_does_not_overflow(self):
        X = DesignMatrix.from_array(np.array([[650.0], [1.0]]))
        y_tilde = iols_delta_transform([0.0, 2.0], X, [1.0], 1.0, _scalar(0.0))
        assert np.all(np.isfinite(y_tilde))
        assert y_tilde[0] == pytest.approx(650.0)

    @settings(max_examples=40, deadline=None)
    @given(delta=st.floats(1e-3, 1e3), seed=st.integers(0, 10_000))
    def test_unit_residuals_give_the_index(self, delta, seed):
        gen = np.random.default_rng(seed)
        index = gen.normal(size=12)
        y_tilde = transform_from_index(np.exp(index), index, delta, _scalar(np.log1p(delta)))
        np.testing.assert_allclose(y_tilde, index, atol=1e-10)


class TestDeltaCentering:
    def test_unit_residuals(self, rng):
        X = DesignMatrix.from_array(rng.normal(size=(30, 2)), add_intercept=True)
        beta = np.array([0.7, 0.2, -0.4])
        c = c_hat_delta(np.exp(X.values @ beta), X, beta, 2.0)
        assert c.scalar_c == pytest.approx(np.log(3.0), abs=1e-12)
        assert c.intercept_tilde == pytest.approx(0.7, abs=1e-12)

    def test_hand_evaluated_toy(self):
        y = np.array([0.0, 1.0, 2.0, 5.0])
        index_r = np.array([0.0, 0.5, -0.5, 1.0])
        delta = 0.5
        w = y * np.exp(-index_r)
        phi = np.log(w.mean())
        expected = np.mean(np.log(delta + w / np.exp(phi)))
        c = c_delta_from_index(y, index_r, delta)
        assert c.scalar_c == pytest.approx(expected, abs=1e-12)
        assert c.intercept_tilde == pytest.approx(phi, abs=1e-12)

    def test_shift_invariant(self, rng):
        y = rng.lognormal(size=25) * (rng.random(25) > 0.3)
        index_r = rng.normal(size=25)
        base = c_delta_from_index(y, index_r, 1.0)
        shifted = c_delta_from_index(y, index_r + 3.0, 1.0)
        assert shifted.scalar_c == pytest.approx(base.scalar_c, abs=1e-12)
        assert shifted.intercept_tilde == pytest.approx(base.intercept_tilde - 3.0, abs=1e-12)

    def test_large_delta_limit(self, rng):
        y = rng.lognormal(size=50) * (rng.random(50) > 0.4)
        delta = 1e6
        c = c_delta_from_index(y, rng.normal(size=50), delta)
        assert c.scalar_c == pytest.approx(np.log1p(delta), abs=1e-9)

    def test_all_zero_outcome(self):
        with pytest.raises(AllZeroOutcome):
            c_delta_from_index(np.zeros(4), np.zeros(4), 1.0)

    def test_taylor_form_close_near_one(self, rng):
        u = 1.0 + 0.05 * rng.normal(size=5_000)
        exact = float(np.mean(np.log(1.0 + u)))
        assert c_taylor(u, 1.0) == pytest.approx(exact, abs=1e-5)


class TestPoissonCenterings:
    @pytest.mark.parametrize("delta", [0.1, 1.0, 24.0])
    def test_mp_unit_residual(self, delta):
        c = c_mp_from_index([1.0], np.zeros(1), delta)
        assert c.vector_c[0] == pytest.approx(np.log1p(delta))

    def test_mp_zero_residual(self):
        assert c_mp_from_index([0.0], np.zeros(1), 1.0).vector_c[0] == pytest.approx(0.5)

    def test_mp_residual_three(self):
        c = c_mp_from_index([3.0], np.zeros(1), 1.0)
        assert c.vector_c[0] == pytest.approx(np.log(4.0) - 1.0)
        assert c.vector_c[0] == pytest.approx(0.38629, abs=1e-5)

    def test_ap_exact_mean(self):
        c = c_ap_from_index([2.0], np.log([2.0]), 3.0)
        assert c.vector_c[0] == pytest.approx(np.log(4.0))

    def test_ap_zero_outcome(self):
        assert c_ap_from_index([0.0], np.log([2.0]), 1.0).vector_c[0] == pytest.approx(1.0)

    def test_ap_positive_outcome(self):
        c = c_ap_from_index([5.0], np.log([2.0]), 1.0)
        assert c.vector_c[0] == pytest.approx(np.log(3.5) - 1.5)

    def test_design_forms_match_the_index_forms(self, rng):
        X = DesignMatrix.from_array(rng.normal(size=(20, 2)), add_intercept=True)
        beta = np.array([0.3, -0.2, 0.5])
        y = rng.poisson(2.0, size=20).astype(float)
        index = X.values @ beta
        np.testing.assert_allclose(c_mp(y, X, beta, 2.0).vector_c, c_mp_from_index(y, index, 2.0).vector_c)
        np.testing.assert_allclose(c_ap(y, X, beta, 2.0).vector_c, c_ap_from_index(y, index, 2.0).vector_c)

    def test_centering_kinds_are_exclusive(self):
        with pytest.raises(InvalidOptions):
            Centering("delta_scalar", scalar_c=1.0, vector_c=np.zeros(2))
        with pytest.raises(InvalidOptions):
            Centering("mp_vector", scalar_c=1.0)


class TestPreTransformations:
    def test_loglog_without_zeros(self):
        X = DesignMatrix.from_array(np.array([[1.0], [np.e], [np.e**2]]), ["w"], add_intercept=True)
        out = loglog_design(X, ["w"])
        assert out.column_names == ("const", "log_w")
        np.testing.assert_allclose(out.values[:, 1], [0.0, 1.0, 2.0], atol=1e-12)
        assert out.intercept_index == 0

    def test_loglog_with_zeros_adds_indicator(self):
        X = DesignMatrix.from_array(np.array([[0.0], [1.0], [np.e]]), ["w"])
        out = loglog_design(X, ["w"])
        assert out.column_names == ("log_w", "w_is_zero")
        np.testing.assert_allclose(out.values[:, 0], [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_array_equal(out.values[:, 1], [1.0, 0.0, 0.0])

    def test_loglog_grows_k_by_zero_columns(self):
        X = DesignMatrix.from_array(np.array([[0.0, 1.0], [2.0, 3.0]]), ["a", "b"])
        assert loglog_design(X, ["a", "b"]).k == X.k + 1

    def test_loglog_negative_regressor(self):
        X = DesignMatrix.from_array(np.array([[-1.0], [1.0]]), ["a"])
        with pytest.raises(NegativeRegressor):
            loglog_design(X, ["a"])

    def test_loglog_unknown_column(self):
        X = DesignMatrix.from_array(np.ones((2, 1)), ["a"])
        with pytest.raises(InvalidOptions):
            loglog_design(X, ["b"])

    def test_shift_negative(self):
        shifted, alpha = shift_negative([-2.0, 0.0, 3.0])
        assert shifted.tolist() == [0.0, 2.0, 5.0]
        assert alpha == -2.0

    def test_shift_leaves_non_negative_alone(self):
        shifted, alpha = shift_negative([0.0, 1.0])
        assert shifted.tolist() == [0.0, 1.0]
        assert alpha == 0.0

    def test_shift_constant_negative(self):
        shifted, alpha = shift_negative([-1.0, -1.0])
        assert shifted.tolist() == [0.0, 0.0]
        assert alpha == -1.0

    def test_baseline_outcomes(self):
        np.testing.assert_allclose(pf_outcome([0.0, 1.0]), [0.0, np.log(2.0)])
        np.testing.assert_allclose(ihs_outcome([0.0, 1.0]), [0.0, np.arcsinh(1.0)])
        np.testing.assert_allclose(ihs_outcome([2.0], theta=0.5), [np.arcsinh(1.0) / 0.5])
