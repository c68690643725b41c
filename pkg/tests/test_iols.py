"""Tests for the iOLS fixed point in its three variants."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import minimize

from tests.conftest import noiseless
from zeroln.application.dgp import DgpSpec, gen_dgp
from zeroln.domain.errors import AllZeroOutcome, InvalidOptions, KappaGuardTripped, NotConverged
from zeroln.domain.estimators import fit_iols
from zeroln.domain.models.data import Dataset, DesignMatrix
from zeroln.domain.models.events import EventType
from zeroln.domain.options import FitOptions
from zeroln.infrastructure.event_bus import EventBus

BETA = (0.5, 1.0, -0.7)


def small_sample(seed: int = 7, n: int = 30) -> Dataset:
    gen = np.random.Generator(np.random.PCG64(seed))
    X = DesignMatrix.from_array(gen.normal(0.0, 0.5, size=(n, 1)), ["x"], add_intercept=True)
    u = gen.lognormal(-0.125, 0.5, size=n) * (gen.random(n) < 0.7)
    u[:2] = (1.3, 0.8)
    return Dataset(y=np.exp(X.values @ np.array([0.5, 0.8])) * u, X=X)


class TestNoiselessRecovery:
    @pytest.mark.parametrize("delta", [0.1, 1.0, 100.0])
    def test_delta_variant(self, delta):
        data = noiseless(200, BETA)
        fit = fit_iols(data, FitOptions(variant="delta", delta=delta, tol=1e-12, max_iter=5_000))
        np.testing.assert_allclose(fit.beta, BETA, atol=1e-8)
        assert fit.converged
        assert 0.0 <= fit.kappa_hat < 1.0
        assert fit.centering.scalar_c == pytest.approx(np.log1p(delta), abs=1e-8)

    @pytest.mark.parametrize("variant", ["mp", "ap"])
    def test_poisson_variants(self, variant):
        data = noiseless(200, BETA, seed=1)
        fit = fit_iols(data, FitOptions(variant=variant, tol=1e-12, max_iter=5_000))
        np.testing.assert_allclose(fit.beta, BETA, atol=1e-8)
        assert 0.0 <= fit.kappa_hat < 1.0

    def test_result_shape(self):
        data = noiseless(100, BETA)
        fit = fit_iols(data, FitOptions(variant="mp"))
        assert fit.estimator == "iols"
        assert fit.column_names == ("const", "x1", "x2")
        assert fit.covariance.shape == (3, 3)
        assert fit.residuals.u.shape == (100,)
        assert fit.iterations == fit.diagnostics["evaluations"]


class TestOracles:
    def test_mp_score_is_zero(self, dgp1_data):
        fit = fit_iols(dgp1_data, FitOptions(variant="mp", tol=1e-10, max_iter=5_000))
        score = dgp1_data.X.values.T @ (fit.residuals.u - 1.0)
        assert np.max(np.abs(score)) <= 1e-6 * dgp1_data.n

    def test_ap_score_is_zero(self, dgp1_data):
        fit = fit_iols(dgp1_data, FitOptions(variant="ap", tol=1e-10, max_iter=5_000))
        X = dgp1_data.X.values
        score = X.T @ (dgp1_data.y - np.exp(X @ fit.beta))
        assert np.max(np.abs(score)) <= 1e-6 * dgp1_data.n * max(1.0, float(dgp1_data.y.mean()))

    def test_mp_matches_direct_minimization(self):
        data = small_sample()
        X, y = data.X.values, data.y

        def objective(b):
            xb = X @ b
            return float(np.sum(y * np.exp(-xb) + xb))

        def gradient(b):
            return X.T @ (1.0 - y * np.exp(-(X @ b)))

        oracle = minimize(objective, np.zeros(2), jac=gradient, method="BFGS",
                          options={"gtol": 1e-12, "maxiter": 10_000}).x
        fit = fit_iols(data, FitOptions(variant="mp", tol=1e-12, max_iter=5_000))
        np.testing.assert_allclose(fit.beta, oracle, atol=1e-4)

    def test_ap_matches_direct_minimization(self):
        data = small_sample(seed=8)
        X, y = data.X.values, data.y

        def objective(b):
            xb = X @ b
            return float(np.sum(np.exp(xb) - y * xb))

        def gradient(b):
            return X.T @ (np.exp(X @ b) - y)

        oracle = minimize(objective, np.zeros(2), jac=gradient, method="BFGS",
                          options={"gtol": 1e-12, "maxiter": 10_000}).x
        fit = fit_iols(data, FitOptions(variant="ap", tol=1e-12, max_iter=5_000))
        np.testing.assert_allclose(fit.beta, oracle, atol=1e-4)

    @pytest.mark.parametrize("delta", [0.1, 1.0, 10.0])
    def test_delta_matches_derivative_free_root(self, delta):
        data = small_sample(seed=9)
        x, y = data.X.values[:, 1], data.y

        def intercept(slope):
            return float(np.log(np.mean(y * np.exp(-x * slope))))

        # squared normal equation of the least-squares problem in log(δ + U)
        def moment(params):
            slope = params[0]
            r = np.log(delta + y * np.exp(-intercept(slope) - x * slope))
            return float(np.sum(x * (r - r.mean())) ** 2)

        oracle = minimize(moment, np.zeros(1), method="Nelder-Mead",
                          options={"xatol": 1e-10, "fatol": 1e-20, "maxiter": 10_000}).x[0]
        fit = fit_iols(data, FitOptions(variant="delta", delta=delta, tol=1e-12, max_iter=5_000))
        np.testing.assert_allclose(fit.beta, [intercept(oracle), oracle], atol=1e-4)

    def test_large_delta_approaches_mp(self, dgp1_small):
        mp = fit_iols(dgp1_small, FitOptions(variant="mp", tol=1e-12, max_iter=5_000))
        big = fit_iols(dgp1_small, FitOptions(
            variant="delta", delta=1e4, tol=1e-12, max_iter=5_000, kappa_guard=0.999999,
        ))
        np.testing.assert_allclose(big.beta, mp.beta, atol=1e-3)


class TestOptionsAndErrors:
    def test_delta_needs_intercept(self):
        X = DesignMatrix.from_array(np.random.default_rng(0).normal(size=(20, 2)))
        data = Dataset(y=np.exp(X.values @ np.array([0.2, 0.3])), X=X)
        with pytest.raises(InvalidOptions):
            fit_iols(data, FitOptions(variant="delta"))

    def test_poisson_variants_run_without_intercept(self):
        X = DesignMatrix.from_array(np.random.default_rng(0).normal(size=(50, 2)))
        data = Dataset(y=np.exp(X.values @ np.array([0.2, 0.3])), X=X)
        fit = fit_iols(data, FitOptions(variant="mp", tol=1e-12, max_iter=5_000))
        np.testing.assert_allclose(fit.beta, [0.2, 0.3], atol=1e-8)

    def test_all_zero_outcome(self):
        X = DesignMatrix.from_array(np.ones((5, 1)), ["x"], add_intercept=False)
        with pytest.raises(AllZeroOutcome):
            fit_iols(Dataset(y=np.zeros(5), X=X), FitOptions(variant="mp"))

    def test_invalid_options(self):
        with pytest.raises(InvalidOptions):
            FitOptions.create(delta=-1.0)
        with pytest.raises(InvalidOptions):
            FitOptions.create(init="user_vector")

    def test_warm_start_length(self, dgp1_small):
        with pytest.raises(InvalidOptions):
            fit_iols(dgp1_small, FitOptions(variant="mp").with_start([1.0, 2.0]))

    def test_warm_start_at_solution(self, dgp1_small):
        opts = FitOptions(variant="delta", delta=1.0, tol=1e-10, acceleration="none", max_iter=5_000)
        first = fit_iols(dgp1_small, opts)
        again = fit_iols(dgp1_small, opts.with_start(first.beta))
        assert again.iterations <= 2
        np.testing.assert_allclose(again.beta, first.beta, atol=1e-8)

    def test_not_converged_carries_partial_fit(self, dgp1_small):
        with pytest.raises(NotConverged) as info:
            fit_iols(dgp1_small, FitOptions(variant="mp", max_iter=2, acceleration="none", escalate=False))
        partial = info.value.result
        assert partial.converged is False
        assert partial.beta.shape == (3,)


class TestEscalation:
    def _opts(self, variant: str) -> FitOptions:
        return FitOptions(
            variant=variant, delta=1.0, kappa_guard=1e-6, acceleration="none",
            tol=1e-12, max_iter=5_000, delta_ceiling=100.0,
        )

    def test_poisson_variant_escalates_then_gives_up(self, dgp1_small):
        bus = EventBus()
        with pytest.raises(KappaGuardTripped):
            fit_iols(dgp1_small, self._opts("mp"), bus)
        escalations = bus.get_history(EventType.FIT_ESCALATED)
        assert [e.data["to_delta"] for e in escalations] == [10.0, 100.0]
        assert bus.get_history(EventType.FIT_FAILED)

    def test_exhausted_budget_escalates(self, dgp1_small):
        bus = EventBus()
        opts = FitOptions(variant="ap", max_iter=2, acceleration="none", delta_ceiling=100.0)
        with pytest.raises(NotConverged) as info:
            fit_iols(dgp1_small, opts, bus)
        escalations = bus.get_history(EventType.FIT_ESCALATED)
        assert [e.data["to_delta"] for e in escalations] == [10.0, 100.0]
        partial = info.value.result
        assert partial.delta == 100.0
        assert partial.diagnostics["delta_escalations"] == [10.0, 100.0]

    def test_delta_variant_never_escalates(self, dgp1_small):
        bus = EventBus()
        with pytest.raises(KappaGuardTripped):
            fit_iols(dgp1_small, self._opts("delta"), bus)
        assert bus.get_history(EventType.FIT_ESCALATED) == []

    def test_converged_event(self, dgp1_small):
        bus = EventBus()
        fit = fit_iols(dgp1_small, FitOptions(variant="mp"), bus)
        events = bus.get_history(EventType.FIT_CONVERGED)
        assert len(events) == 1
        assert events[0].data["iterations"] == fit.iterations
        assert events[0].data["variant"] == "mp"


class TestCovariance:
    def test_reweighted_sandwich_bounds(self):
        gen = np.random.Generator(np.random.PCG64(42))
        n = 2_000
        X = DesignMatrix.from_array(gen.normal(size=(n, 2)), add_intercept=True)
        y = np.exp(X.values @ np.array([0.3, 0.5, -0.2])) * gen.lognormal(0.0, 0.1, size=n)
        fit = fit_iols(Dataset(y=y, X=X), FitOptions(variant="delta", delta=1.0, tol=1e-10))
        cov_diag, ols_diag = np.diag(fit.covariance), np.diag(fit.ols_covariance)
        assert np.all(cov_diag >= ols_diag)
        assert np.all(cov_diag <= 1.1 * (1.0 + fit.delta) ** 2 * ols_diag)

    def test_covariance_symmetric_psd(self, dgp1_data):
        fit = fit_iols(dgp1_data, FitOptions(variant="mp"))
        np.testing.assert_allclose(fit.covariance, fit.covariance.T, atol=1e-14)
        assert np.all(np.linalg.eigvalsh(fit.covariance) > 0)
        assert np.all(fit.std_errors > 0)

    def test_cluster_labels_switch_meat(self, dgp1_small):
        clustered = Dataset(y=dgp1_small.y, X=dgp1_small.X, cluster_ids=np.arange(dgp1_small.n) // 4)
        plain = fit_iols(dgp1_small, FitOptions(variant="mp"))
        fit = fit_iols(clustered, FitOptions(variant="mp"))
        np.testing.assert_allclose(fit.beta, plain.beta, atol=1e-10)
        assert not np.allclose(fit.covariance, plain.covariance)

    def test_cluster_meat_needs_labels(self, dgp1_small):
        with pytest.raises(InvalidOptions):
            fit_iols(dgp1_small, FitOptions(variant="mp", meat_kind="cluster"))


@pytest.mark.slow
class TestLargeSamples:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_additive_variant_converges_on_the_poisson_design(self, seed):
        data = gen_dgp(DgpSpec("poisson_dgp1", 10_000), seed)
        fit = fit_iols(data, FitOptions(variant="ap"))
        assert fit.converged
        np.testing.assert_allclose(fit.beta[1:], 1.0, atol=0.1)
