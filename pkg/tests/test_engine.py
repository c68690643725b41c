"""Tests for the fixed-point driver, κ̂ and the iteration bound."""

from __future__ import annotations

import numpy as np
import pytest

from zeroln.domain.errors import InsufficientTrace, KappaGuardTripped, NonFinite, NotConverged
from zeroln.domain.estimators.engine import (
    Evaluation,
    estimate_kappa,
    iteration_bound,
    run_fixed_point,
)

TARGET = np.array([1.0, -2.0, 0.5])


def linear_map(kappa: float):
    """G(θ) = θ* + κ(θ − θ*)."""
    def step(theta: np.ndarray) -> Evaluation:
        return Evaluation(TARGET + kappa * (theta - TARGET))
    return step


def run(step, **overrides):
    kw = {"max_iter": 5_000, "tol": 1e-10, "kappa_guard": 0.999, "kappa_window": 10}
    kw.update(overrides)
    return run_fixed_point(step, np.zeros(3), **kw)


class TestEstimateKappa:
    def test_geometric_trace(self):
        v = np.array([1.0, -1.0])
        trace = [TARGET[:2] + 0.5**t * v for t in range(8)]
        assert estimate_kappa(trace) == pytest.approx(0.5)

    def test_converged_in_one(self):
        assert estimate_kappa([np.zeros(2), np.ones(2), np.ones(2)]) == 0.0

    def test_median_of_ratios(self):
        steps = [1.0, 0.4, 0.2, 0.12]
        trace = np.concatenate([[0.0], np.cumsum(steps)])[:, None]
        assert estimate_kappa(list(trace)) == pytest.approx(0.5)

    def test_too_short(self):
        with pytest.raises(InsufficientTrace):
            estimate_kappa([np.zeros(1), np.ones(1)])


class TestIterationBound:
    def test_value(self):
        assert iteration_bound(10_000, 0.5) == int(np.ceil(0.5 * np.log(1e4) / np.log(2.0)))

    @pytest.mark.parametrize("kappa", [0.0, 1.0, 1.5])
    def test_undefined_outside_unit_interval(self, kappa):
        assert iteration_bound(100, kappa) is None


class TestRunFixedPoint:
    def test_plain_iteration_converges(self):
        outcome = run(linear_map(0.5), accelerate=False)
        assert outcome.converged
        np.testing.assert_allclose(outcome.state, TARGET, atol=1e-9)
        assert outcome.kappa_hat == pytest.approx(0.5, abs=1e-6)
        assert outcome.accelerated_steps == 0

    def test_acceleration_solves_linear_maps_quickly(self):
        plain = run(linear_map(0.99), accelerate=False)
        fast = run(linear_map(0.99), accelerate=True)
        np.testing.assert_allclose(fast.state, TARGET, atol=1e-8)
        assert plain.evaluations > 1_000
        assert fast.evaluations <= 10
        assert fast.accelerated_steps >= 1

    def test_kappa_guard(self):
        def drift(theta: np.ndarray) -> Evaluation:
            return Evaluation(theta + 1.0)

        with pytest.raises(KappaGuardTripped) as info:
            run(drift, accelerate=False, kappa_window=3)
        assert info.value.kappa_hat == pytest.approx(1.0)
        assert "delta" in info.value.advice

    def test_not_converged_carries_outcome(self):
        with pytest.raises(NotConverged) as info:
            run(linear_map(0.9), accelerate=False, max_iter=5)
        assert info.value.result.evaluations == 5
        assert len(info.value.result.trace) == 6

    def test_non_finite_state(self):
        def blow_up(theta: np.ndarray) -> Evaluation:
            return Evaluation(np.full(3, np.nan))

        with pytest.raises(NonFinite):
            run(blow_up)

    def test_clamp_counts_accumulate(self):
        def step(theta: np.ndarray) -> Evaluation:
            return Evaluation(TARGET + 0.1 * (theta - TARGET), clamp_count=1)

        outcome = run(step, accelerate=False)
        assert outcome.clamp_count == outcome.evaluations

    def test_budget_counts_map_evaluations(self):
        with pytest.raises(NotConverged) as info:
            run(linear_map(0.999), accelerate=False, max_iter=7)
        assert info.value.result.evaluations == 7
