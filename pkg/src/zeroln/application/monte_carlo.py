"""Monte Carlo runner: generate, fit, test and aggregate over replications.

Estimator ids
  iols_mp, iols_ap, iols_delta=<δ>        iOLS variants
  i2sls_mp, i2sls_ap, i2sls_delta=<δ>     i2SLS variants (needs instruments)
  iols_fe_<v>, i2sls_fe_<v>               the same with absorbed fixed effects
  pf, ihs, drop_ols, ppml, pf_2sls        comparison estimators
  iols_best                               grid of iOLS_δ, δ chosen ex post by slope MSE
  iols_auto                               δ chosen per replication by select_model

Test ids
  lambda_mp, lambda_ppml, lambda_delta=<δ>   λ tests conditioned on X
  lambda_iv_<v>                              λ tests of i2SLS conditioned on Z
  reset                                      RESET on the PPML fit
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from zeroln.application.dgp import DgpSpec, gen_dgp
from zeroln.application.model_select import default_grid, delta_path, select_model
from zeroln.application.spec_test import (
    lambda_test_iols_delta,
    lambda_test_iv,
    lambda_test_poisson,
    reset_test,
)
from zeroln.domain.errors import InvalidOptions, ZerolnError
from zeroln.domain.estimators import (
    BASELINE_KINDS,
    fit_baseline,
    fit_i2sls,
    fit_iols,
    fit_iols_fe,
)
from zeroln.domain.models.data import Dataset, FloatArray
from zeroln.domain.models.events import EventType
from zeroln.domain.models.results import EstimatorSummary, FitResult, McSummary
from zeroln.domain.options import FitOptions
from zeroln.domain.ports import EventBusPort, emit
from zeroln.domain.probability import fit_prob
from zeroln.infrastructure.parallel import child_seed, parallel_map

logger = logging.getLogger(__name__)

DIVERGENCE_BOUND = 100.0
NOMINAL_ALPHA = 0.05

_MODEL_RE = re.compile(
    r"^(?P<family>iols_fe|i2sls_fe|iols|i2sls)_(?:(?P<variant>mp|ap)|delta=(?P<delta>[0-9.eE+\-]+))$"
)
_TEST_RE = re.compile(r"^lambda_(?:(?P<iv>iv_)?(?P<target>mp|ap|ppml)|(?P<iv2>iv_)?delta=(?P<delta>[0-9.eE+\-]+))$")


@dataclass(frozen=True)
class ModelId:
    """A parsed estimator id."""

    name: str
    family: str
    variant: str = "none"
    delta: float = 1.0


@dataclass(frozen=True)
class TestId:
    name: str
    kind: str  # lambda | lambda_iv | reset
    variant: str = "none"
    delta: float = 1.0


def _parse_delta(raw: str, name: str) -> float:
    try:
        value = float(raw)
    except ValueError as exc:
        raise InvalidOptions(f"bad δ in {name!r}") from exc
    if not value > 0:
        raise InvalidOptions(f"δ must be positive in {name!r}")
    return value


def parse_estimator(name: str) -> ModelId:
    if name in BASELINE_KINDS:
        return ModelId(name, "baseline")
    if name in ("iols_best", "iols_auto"):
        return ModelId(name, name)
    match = _MODEL_RE.match(name)
    if match is None:
        raise InvalidOptions(f"unknown estimator {name!r}")
    if match["variant"]:
        return ModelId(name, match["family"], match["variant"])
    return ModelId(name, match["family"], "delta", _parse_delta(match["delta"], name))


def parse_test(name: str) -> TestId:
    if name == "reset":
        return TestId(name, "reset", "ap")
    match = _TEST_RE.match(name)
    if match is None:
        raise InvalidOptions(f"unknown test {name!r}")
    if match["delta"]:
        kind = "lambda_iv" if match["iv2"] else "lambda"
        return TestId(name, kind, "delta", _parse_delta(match["delta"], name))
    variant = "ap" if match["target"] in ("ap", "ppml") else "mp"
    return TestId(name, "lambda_iv" if match["iv"] else "lambda", variant)


def fit_model(model: ModelId, data: Dataset, opts: FitOptions) -> FitResult:
    """Fit one non-grid estimator."""
    if model.family == "baseline":
        return fit_baseline(data, model.name, opts)
    model_opts = opts.model_copy(update={"variant": model.variant, "delta": model.delta})
    if model.family == "iols":
        return fit_iols(data, model_opts)
    if model.family == "i2sls":
        return fit_i2sls(data, model_opts)
    if model.family in ("iols_fe", "i2sls_fe"):
        return fit_iols_fe(data, model_opts, instruments=model.family == "i2sls_fe")
    raise InvalidOptions(f"{model.name} is not a single-fit estimator")


def diverged(beta: FloatArray) -> bool:
    return not np.all(np.isfinite(beta)) or float(np.max(np.abs(beta))) > DIVERGENCE_BOUND


# ------------------------------------------------------------------
# One replication
# ------------------------------------------------------------------

@dataclass
class ReplicationOutcome:
    index: int
    betas: dict[str, FloatArray] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    column_names: dict[str, tuple[str, ...]] = field(default_factory=dict)
    grid_betas: FloatArray | None = None
    auto_selected: str | None = None
    p_values: dict[str, float] = field(default_factory=dict)
    lambdas: dict[str, float] = field(default_factory=dict)
    test_failures: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SimulationPlan:
    """What to run in every replication."""

    spec: DgpSpec
    estimators: tuple[ModelId, ...]
    tests: tuple[TestId, ...]
    seed: int
    opts: FitOptions = field(default_factory=FitOptions)
    prob_kind: str = "logit"
    k: int | None = None
    n_boot: int = 99
    grid: tuple[float, ...] = ()
    auto_n_boot: int = 49

    def replicate(self, index: int) -> ReplicationOutcome:
        rep_seed = child_seed(self.seed, index)
        out = ReplicationOutcome(index)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            data = gen_dgp(self.spec, rep_seed)
            cache: dict[ModelId, FitResult] = {}
            for model in self.estimators:
                self._run_estimator(model, data, rep_seed, out, cache)
            for j, test in enumerate(self.tests):
                self._run_test(test, data, child_seed(rep_seed, j + 1), out, cache)
        return out

    def _fit_cached(self, model: ModelId, data: Dataset,
                    cache: dict[ModelId, FitResult]) -> FitResult:
        # baselines differ only by name; iOLS fits are shared between estimators and tests
        key = model if model.family == "baseline" else ModelId("", model.family, model.variant, model.delta)
        if key not in cache:
            cache[key] = fit_model(model, data, self.opts)
        return cache[key]

    def _run_estimator(
        self, model: ModelId, data: Dataset, rep_seed: int, out: ReplicationOutcome,
        cache: dict[ModelId, FitResult],
    ) -> None:
        try:
            if model.family == "iols_best":
                out.grid_betas = self._grid_betas(data)
                return
            if model.family == "iols_auto":
                report = select_model(
                    data, self.grid, self.prob_kind, NOMINAL_ALPHA, self.auto_n_boot,
                    child_seed(rep_seed, 0), k=self.k, opts=self.opts, n_jobs=1,
                )
                out.auto_selected = report.selected
                if report.selected is None:
                    out.failures[model.name] = "all_rejected"
                    return
                beta = report.entry(report.selected).beta
                assert beta is not None
                out.betas[model.name] = beta
                out.column_names[model.name] = data.X.column_names
                return
            fit = self._fit_cached(model, data, cache)
            out.betas[model.name] = fit.beta
            out.column_names[model.name] = fit.column_names
        except ZerolnError as exc:
            out.failures[model.name] = exc.code
            logger.debug("replication %d: %s failed (%s)", out.index, model.name, exc.code)

    def _grid_betas(self, data: Dataset) -> FloatArray:
        betas = np.full((len(self.grid), data.X.k), np.nan)
        for g, point in enumerate(delta_path(data, self.grid, self.opts, max_jump=None)):
            if point.fit is not None:
                betas[g] = point.fit.beta
        return betas

    def _run_test(
        self, test: TestId, data: Dataset, seed: int, out: ReplicationOutcome,
        cache: dict[ModelId, FitResult],
    ) -> None:
        try:
            if test.kind == "reset":
                fit = self._fit_cached(ModelId("iols_ap", "iols", "ap"), data, cache)
                out.p_values[test.name] = reset_test(data, fit, opts=self.opts)
                return
            family = "i2sls" if test.kind == "lambda_iv" else "iols"
            fit = self._fit_cached(ModelId(test.name, family, test.variant, test.delta), data, cache)
            kw = {"n_boot": self.n_boot, "seed": seed, "opts": self.opts, "n_jobs": 1}
            if test.kind == "lambda_iv":
                assert data.Z is not None
                prob = fit_prob(data.Z, data.positive, self.prob_kind, self.k)
                result = lambda_test_iv(data, fit, prob, **kw)
            else:
                prob = fit_prob(data.X, data.positive, self.prob_kind, self.k)
                if test.variant == "delta":
                    result = lambda_test_iols_delta(data, fit, prob, **kw)
                else:
                    result = lambda_test_poisson(data, fit, prob, **kw)
            out.p_values[test.name] = result.p_value
            out.lambdas[test.name] = result.lambda_hat
        except ZerolnError as exc:
            out.test_failures[test.name] = exc.code
            logger.debug("replication %d: %s failed (%s)", out.index, test.name, exc.code)


# ------------------------------------------------------------------
# Aggregation
# ------------------------------------------------------------------

def _moments(betas: list[FloatArray]) -> tuple[FloatArray | None, FloatArray | None]:
    if not betas:
        return None, None
    stacked = np.vstack(betas)
    sd = stacked.std(axis=0, ddof=1) if len(betas) > 1 else None
    return stacked.mean(axis=0), sd


def _summarize(name: str, outcomes: Sequence[ReplicationOutcome]) -> EstimatorSummary:
    kept: list[FloatArray] = []
    n_failed = n_diverged = 0
    causes: dict[str, int] = {}
    names: tuple[str, ...] = ()
    for rep in outcomes:
        if name in rep.failures:
            n_failed += 1
            causes[rep.failures[name]] = causes.get(rep.failures[name], 0) + 1
            continue
        beta = rep.betas[name]
        names = names or rep.column_names.get(name, ())
        if diverged(beta):
            n_diverged += 1
        else:
            kept.append(beta)
    mean, sd = _moments(kept)
    extra: dict[str, object] = {"column_names": list(names), "failure_causes": causes}
    if name == "iols_auto":
        picks: dict[str, int] = {}
        for rep in outcomes:
            key = rep.auto_selected or "none"
            picks[key] = picks.get(key, 0) + 1
        extra["selected"] = picks
    return EstimatorSummary(name, mean, sd, len(kept), n_failed, n_diverged, extra)


def _summarize_best(
    outcomes: Sequence[ReplicationOutcome], grid: tuple[float, ...], truth: FloatArray,
    column_names: tuple[str, ...],
) -> EstimatorSummary:
    """Pick the grid δ whose slope estimates have the smallest MSE across replications."""
    stacks = [rep.grid_betas for rep in outcomes if rep.grid_betas is not None]
    n_failed = len(outcomes) - len(stacks)
    if not stacks:
        return EstimatorSummary("iols_best", None, None, 0, n_failed, 0, {"failure_causes": {}})
    cube = np.stack(stacks)  # reps × grid × K
    mse = np.full(len(grid), np.inf)
    for g in range(len(grid)):
        rows = [b for b in cube[:, g] if not diverged(b)]
        # a δ that fails in most replications is not a candidate
        if len(rows) * 2 >= len(stacks):
            mse[g] = float(np.mean(np.sum((np.vstack(rows)[:, 1:] - truth[1:]) ** 2, axis=1)))
    if not np.isfinite(mse).any():
        return EstimatorSummary("iols_best", None, None, 0, len(outcomes), 0, {"failure_causes": {}})
    best = int(np.argmin(mse))
    column = cube[:, best]
    ok = [b for b in column if not diverged(b)]
    n_div = int(sum(1 for b in column if np.all(np.isfinite(b)) and diverged(b)))
    n_fail_grid = len(column) - len(ok) - n_div
    mean, sd = _moments(ok)
    return EstimatorSummary(
        "iols_best", mean, sd, len(ok), n_failed + n_fail_grid, n_div,
        {"best_delta": grid[best], "column_names": list(column_names),
         "mse_by_delta": [None if not np.isfinite(m) else float(m) for m in mse],
         "failure_causes": {}},
    )


def run_monte_carlo(
    spec: DgpSpec,
    estimators: Sequence[str],
    tests: Sequence[str] = (),
    reps: int = 100,
    seed: int = 0,
    *,
    n_boot: int = 99,
    prob_kind: str = "logit",
    k: int | None = None,
    grid: Sequence[float] | None = None,
    opts: FitOptions | None = None,
    alpha: float = NOMINAL_ALPHA,
    auto_n_boot: int = 49,
    n_jobs: int | None = None,
    bus: EventBusPort | None = None,
) -> McSummary:
    """Simulate ``reps`` datasets from ``spec`` and summarize every estimator and test.

    Replication r uses a seed derived from (seed, r) only, so the summary is
    identical for any worker count. Failed and diverged fits are excluded
    from the moments and counted.
    """
    if reps < 1:
        raise InvalidOptions("reps must be at least 1", reps=reps)
    if not 0 < alpha < 1:
        raise InvalidOptions("alpha must lie in (0, 1)", alpha=alpha)
    models = tuple(parse_estimator(e) for e in estimators)
    test_ids = tuple(parse_test(t) for t in tests)
    plan = SimulationPlan(
        spec=spec,
        estimators=models,
        tests=test_ids,
        seed=seed,
        opts=opts or FitOptions(),
        prob_kind=prob_kind,
        k=k,
        n_boot=n_boot,
        grid=tuple(grid) if grid is not None else default_grid(),
        auto_n_boot=auto_n_boot,
    )
    logger.info("simulating %s n=%d reps=%d (%d estimators, %d tests)",
                spec.kind, spec.n, reps, len(models), len(test_ids))
    outcomes = parallel_map(plan.replicate, range(reps), n_jobs)
    for rep in outcomes:
        emit(bus, EventType.SIMULATION_REPLICATION, index=rep.index, total=reps,
             failures=len(rep.failures) + len(rep.test_failures))

    column_names = ("const", "x1", "x2")
    truth = np.asarray(spec.beta, dtype=np.float64)
    summaries = [
        _summarize_best(outcomes, plan.grid, truth, column_names) if m.family == "iols_best"
        else _summarize(m.name, outcomes)
        for m in models
    ]

    rejection_rates: dict[str, float | None] = {}
    lambda_means: dict[str, float | None] = {}
    test_failures: dict[str, int] = {}
    for test in test_ids:
        p_values = [rep.p_values[test.name] for rep in outcomes if test.name in rep.p_values]
        lambdas = [rep.lambdas[test.name] for rep in outcomes if test.name in rep.lambdas]
        test_failures[test.name] = sum(1 for rep in outcomes if test.name in rep.test_failures)
        rejection_rates[test.name] = (
            float(np.mean([p <= alpha for p in p_values])) if p_values else None
        )
        lambda_means[test.name] = float(np.mean(lambdas)) if lambdas else None

    emit(bus, EventType.SIMULATION_DONE, reps=reps)
    return McSummary(
        dgp=spec.kind,
        n=spec.n,
        reps=reps,
        seed=seed,
        column_names=column_names,
        estimators=tuple(summaries),
        rejection_rates=rejection_rates,
        test_failures=test_failures,
        lambda_means=lambda_means,
    )
