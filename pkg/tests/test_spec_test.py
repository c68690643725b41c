"""Tests for the λ specification tests and RESET."""

from __future__ import annotations

import numpy as np
import pytest

from tests.conftest import manual_fit
from zeroln.application.dgp import DgpSpec, gen_dgp, plant_null_delta, plant_null_poisson
from zeroln.application.spec_test import (
    lambda_regression,
    lambda_statistic,
    lambda_test_iols_delta,
    lambda_test_iv,
    lambda_test_poisson,
    reset_test,
    t_and_p,
)
from zeroln.domain.errors import (
    BootstrapDegenerate,
    Collinear,
    InvalidOptions,
    NoPositives,
    NotConverged,
)
from zeroln.domain.estimators import fit_baseline, fit_i2sls, fit_iols
from zeroln.domain.models.data import Dataset, DesignMatrix
from zeroln.domain.models.events import EventType
from zeroln.domain.options import FitOptions
from zeroln.domain.probability import fit_prob
from zeroln.infrastructure.event_bus import EventBus

BETA = np.array([0.2, 0.5, -0.3])


def planted_design(seed: int, n: int = 500) -> tuple[DesignMatrix, np.ndarray, np.ndarray]:
    gen = np.random.Generator(np.random.PCG64(seed))
    X = DesignMatrix.from_array(gen.normal(size=(n, 2)), add_intercept=True)
    p_hat = gen.uniform(0.2, 0.9, size=n)
    positive = gen.random(n) < p_hat
    return X, positive, p_hat


@pytest.fixture(scope="module")
def mp_fit(dgp1_small):
    return fit_iols(dgp1_small, FitOptions(variant="mp"))


@pytest.fixture(scope="module")
def logit(dgp1_small):
    return fit_prob(dgp1_small.X, dgp1_small.positive, "logit")


class TestPlantedNulls:
    def test_poisson_statistic_is_one(self):
        X, positive, p_hat = planted_design(1)
        data = Dataset(y=plant_null_poisson(X, positive, BETA, p_hat), X=X)
        fit = manual_fit(data, BETA, "mp")
        assert lambda_statistic("poisson", fit, p_hat, positive) == pytest.approx(1.0, abs=1e-10)

    def test_delta_statistic_is_one(self):
        X, positive, p_hat = planted_design(2)
        delta, c = 0.5, 0.4
        data = Dataset(y=plant_null_delta(X, positive, BETA, p_hat, delta, c), X=X)
        fit = manual_fit(data, BETA, "delta", delta=delta, scalar_c=c)
        assert lambda_statistic("delta", fit, p_hat, positive) == pytest.approx(1.0, abs=1e-10)

    def test_statistic_on_a_subset_of_rows(self):
        X, positive, p_hat = planted_design(3)
        data = Dataset(y=plant_null_poisson(X, positive, BETA, p_hat), X=X)
        fit = manual_fit(data, BETA, "ap")
        rows = positive & (np.arange(X.n) % 2 == 0)
        assert lambda_statistic("poisson", fit, p_hat, rows) == pytest.approx(1.0, abs=1e-10)

    def test_no_rows_left(self):
        X, positive, p_hat = planted_design(4)
        data = Dataset(y=plant_null_poisson(X, positive, BETA, p_hat), X=X)
        with pytest.raises(NoPositives):
            lambda_statistic("poisson", manual_fit(data, BETA), p_hat, np.zeros(X.n, dtype=bool))

    def test_regression_slope(self):
        assert lambda_regression(np.array([2.0, 4.0]), np.array([1.0, 2.0])) == pytest.approx(2.0)
        with pytest.raises(NoPositives):
            lambda_regression(np.ones(3), np.zeros(3))


class TestTAndP:
    def test_null_value(self):
        assert t_and_p(1.0, 0.1) == (0.0, 1.0)

    def test_two_sided(self):
        t, p = t_and_p(1.2, 0.1)
        assert t == pytest.approx(2.0)
        assert p == pytest.approx(0.0455, abs=1e-4)
        assert t_and_p(0.8, 0.1)[1] == pytest.approx(p)

    def test_zero_standard_error(self):
        assert t_and_p(1.0, 0.0) == (0.0, 1.0)
        t, p = t_and_p(1.5, 0.0)
        assert t == np.inf
        assert p == 0.0


class TestBootstrap:
    def test_deterministic_in_seed(self, dgp1_small, mp_fit, logit):
        a = lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=6, seed=3, n_jobs=1)
        b = lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=6, seed=3, n_jobs=1)
        assert a == b
        assert a.model_id == "mp"
        assert a.n_boot == 6
        assert 0.0 <= a.p_value <= 1.0
        assert a.se_boot > 0

    def test_independent_of_worker_count(self, dgp1_small, mp_fit, logit):
        serial = lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=6, seed=4, n_jobs=1)
        pooled = lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=6, seed=4, n_jobs=2)
        assert serial.lambda_hat == pooled.lambda_hat
        assert serial.se_boot == pooled.se_boot

    def test_rows_used_are_positive(self, dgp1_small, mp_fit, logit):
        result = lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=4, seed=0, n_jobs=1)
        assert result.n_used == int(dgp1_small.positive.sum())

    def test_delta_variant(self, dgp1_small, logit):
        fit = fit_iols(dgp1_small, FitOptions(variant="delta", delta=2.0))
        result = lambda_test_iols_delta(dgp1_small, fit, logit, n_boot=5, seed=1, n_jobs=1)
        assert result.model_id == "delta=2"
        assert np.isfinite(result.lambda_hat)

    def test_events(self, dgp1_small, mp_fit, logit):
        bus = EventBus()
        lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=4, seed=0, n_jobs=1, bus=bus)
        assert len(bus.get_history(EventType.BOOTSTRAP_REPLICATE)) == 4
        assert len(bus.get_history(EventType.TEST_DONE)) == 1

    def test_failing_refits_are_degenerate(self, dgp1_small, mp_fit, logit):
        def refit(data, opts):
            raise NotConverged("no luck")

        with pytest.raises(BootstrapDegenerate) as info:
            lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=5, seed=0, refit=refit, n_jobs=1)
        assert info.value.details["causes"] == {"not_converged": 5}

    def test_minimum_replicates(self, dgp1_small, mp_fit, logit):
        with pytest.raises(InvalidOptions):
            lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=1)


class TestVariantsAndGuards:
    def test_wrong_variant(self, dgp1_small, mp_fit, logit):
        with pytest.raises(InvalidOptions):
            lambda_test_iols_delta(dgp1_small, mp_fit, logit, n_boot=4)
        delta_fit = fit_iols(dgp1_small, FitOptions(variant="delta"))
        with pytest.raises(InvalidOptions):
            lambda_test_poisson(dgp1_small, delta_fit, logit, n_boot=4)

    def test_unconverged_fit_rejected(self, dgp1_small, logit):
        fit = manual_fit(dgp1_small, np.zeros(3), "mp")
        fit.converged = False
        with pytest.raises(InvalidOptions):
            lambda_test_poisson(dgp1_small, fit, logit, n_boot=4)

    def test_experimental_popular_fix(self, dgp1_small, logit):
        fit = fit_baseline(dgp1_small, "pf")
        result = lambda_test_iols_delta(dgp1_small, fit, logit, n_boot=4, seed=0, n_jobs=1,
                                        experimental_pf=True)
        assert result.model_id == "pf*"

    def test_experimental_needs_a_baseline(self, dgp1_small, mp_fit, logit):
        with pytest.raises(InvalidOptions):
            lambda_test_iols_delta(dgp1_small, mp_fit, logit, n_boot=4, experimental_pf=True)


class TestIvVersion:
    def test_exogenous_instruments_match_plain_test(self, dgp1_small, mp_fit, logit):
        data = Dataset(y=dgp1_small.y, X=dgp1_small.X, Z=dgp1_small.X)
        iv_fit = fit_i2sls(data, FitOptions(variant="mp"))
        iv = lambda_test_iv(data, iv_fit, logit, n_boot=5, seed=2, n_jobs=1)
        plain = lambda_test_poisson(dgp1_small, mp_fit, logit, n_boot=5, seed=2, n_jobs=1)
        assert iv.condition_on == "Z"
        assert iv.model_id == "i2sls_mp"
        assert iv.lambda_hat == pytest.approx(plain.lambda_hat, abs=1e-5)
        assert iv.se_boot == pytest.approx(plain.se_boot, rel=1e-3)

    def test_needs_instruments(self, dgp1_small, mp_fit, logit):
        with pytest.raises(InvalidOptions):
            lambda_test_iv(dgp1_small, mp_fit, logit, n_boot=4)


class TestReset:
    def test_p_value_in_unit_interval(self, dgp1_small):
        fit = fit_baseline(dgp1_small, "ppml")
        p = reset_test(dgp1_small, fit)
        assert 0.0 <= p <= 1.0

    def test_intercept_only_is_collinear(self, dgp1_small):
        X = DesignMatrix.from_array(np.ones((dgp1_small.n, 0)), [], add_intercept=True)
        data = Dataset(y=dgp1_small.y, X=X)
        fit = fit_baseline(data, "ppml")
        with pytest.raises(Collinear):
            reset_test(data, fit)

    def test_needs_additive_fit(self, dgp1_small, mp_fit):
        with pytest.raises(InvalidOptions):
            reset_test(dgp1_small, mp_fit)
        with pytest.raises(InvalidOptions):
            reset_test(dgp1_small, fit_baseline(dgp1_small, "ppml"), n_powers=0)


@pytest.mark.slow
class TestBootstrapScaling:
    def test_standard_error_shrinks_with_root_n(self):
        ses = []
        for n in (500, 2_000, 8_000):
            data = gen_dgp(DgpSpec("poisson_dgp1", n), seed=n)
            fit = fit_iols(data, FitOptions(variant="mp"))
            prob = fit_prob(data.X, data.positive, "logit")
            ses.append(lambda_test_poisson(data, fit, prob, n_boot=199, seed=1).se_boot)
        ratios = np.array(ses[:-1]) / np.array(ses[1:])
        np.testing.assert_allclose(ratios, 2.0, rtol=0.3)
