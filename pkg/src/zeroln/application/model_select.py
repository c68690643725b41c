"""Data-driven choice of δ among iOLS_δ, iOLS_MP and PPML.

Every candidate is fitted and λ-tested; among those the test does not reject,
the one with λ̂ closest to 1 wins. Ties go to the larger δ, with mp and ap
counted as the δ → ∞ end.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from zeroln.application.spec_test import (
    DEFAULT_N_BOOT,
    MAX_FAILURE_SHARE,
    lambda_test_iols_delta,
    lambda_test_poisson,
)
from zeroln.domain.errors import EmptyGrid, InvalidOptions, ZerolnError
from zeroln.domain.estimators import fit_baseline, fit_iols
from zeroln.domain.models.data import Dataset
from zeroln.domain.models.events import EventType
from zeroln.domain.models.results import FitResult, ModelEntry, SelectionReport, SpecTestResult
from zeroln.domain.options import FitOptions
from zeroln.domain.ports import EventBusPort, emit
from zeroln.domain.probability import ProbabilityModel, fit_prob

logger = logging.getLogger(__name__)

ALL_REJECTED_ADVICE = (
    "every candidate is rejected: the zero pattern fits none of them; "
    "consider a mixture (hurdle or two-part) model"
)


def default_grid(log_lo: float = -7.0, log_hi: float = 7.0, log_step: float = 0.5) -> tuple[float, ...]:
    """exp(log_lo), exp(log_lo + log_step), …, exp(log_hi)."""
    if log_step <= 0 or log_hi < log_lo:
        raise InvalidOptions("grid needs log_step > 0 and log_hi >= log_lo")
    count = int(math.floor((log_hi - log_lo) / log_step + 1e-9)) + 1
    return tuple(float(np.exp(log_lo + i * log_step)) for i in range(count))


def _check_grid(grid: Sequence[float]) -> tuple[float, ...]:
    values = tuple(float(d) for d in grid)
    if not values:
        raise EmptyGrid("the δ grid is empty")
    if any(not d > 0 for d in values):
        raise InvalidOptions("grid values must be strictly positive")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise InvalidOptions("grid must be strictly increasing")
    return values


def _entry(model_id: str, delta: float | None, fit: FitResult | None,
           test: SpecTestResult | None, error: str | None = None,
           experimental: bool = False) -> ModelEntry:
    return ModelEntry(
        model_id=model_id,
        delta=delta,
        lambda_hat=test.lambda_hat if test else None,
        se=test.se_boot if test else None,
        p_value=test.p_value if test else None,
        beta=fit.beta.copy() if fit is not None else None,
        error=error,
        experimental=experimental,
    )


def _tie_key(entry: ModelEntry) -> tuple[float, float]:
    # smaller |λ̂ − 1| first, then larger δ (mp / ap sit at +∞)
    assert entry.lambda_hat is not None
    delta = entry.delta if entry.delta is not None else math.inf
    return abs(entry.lambda_hat - 1.0), -delta


def choose(entries: Sequence[ModelEntry], alpha: float) -> str | None:
    """Selected model id, or None when every testable candidate is rejected."""
    eligible = [
        e for e in entries
        if not e.experimental and e.error is None
        and e.p_value is not None and e.p_value > alpha and e.lambda_hat is not None
    ]
    if not eligible:
        return None
    return min(eligible, key=_tie_key).model_id


# ------------------------------------------------------------------
# δ path
# ------------------------------------------------------------------

DEFAULT_MAX_JUMP = 0.05
MAX_REFINEMENTS = 5


@dataclass(frozen=True)
class PathPoint:
    """One iOLS_δ fit on the δ path; ``on_grid`` is False for inserted points."""

    delta: float
    fit: FitResult | None
    error: str | None = None
    on_grid: bool = True


def _jump(a: FitResult, b: FitResult) -> float:
    return float(np.max(np.abs(a.beta - b.beta)))


class _PathWalker:
    def __init__(self, data: Dataset, base: FitOptions, max_jump: float | None) -> None:
        self.data = data
        self.base = base
        self.max_jump = max_jump

    def fit_at(self, delta: float, warm: FitResult | None, on_grid: bool) -> PathPoint:
        opts = self.base.model_copy(update={"variant": "delta", "delta": delta})
        if warm is not None:
            opts = opts.with_start(warm.beta)
        try:
            return PathPoint(delta, fit_iols(self.data, opts), on_grid=on_grid)
        except ZerolnError as exc:
            logger.warning("delta=%.6g failed: %s", delta, exc.message)
            return PathPoint(delta, None, exc.code, on_grid)

    def bridge(self, left: FitResult | None, left_delta: float, delta: float,
               depth: int = 0) -> list[PathPoint]:
        """Fit ``delta`` from ``left``, bisecting log δ while the step in β̂ exceeds ``max_jump``."""
        point = self.fit_at(delta, left, on_grid=depth == 0)
        if (
            self.max_jump is None or left is None or point.fit is None
            or depth >= MAX_REFINEMENTS or _jump(left, point.fit) <= self.max_jump
        ):
            return [point]
        mid = math.sqrt(left_delta * delta)
        head = self.bridge(left, left_delta, mid, depth + 1)
        anchor = head[-1].fit
        if anchor is None:
            return [point]
        tail = self.bridge(anchor, mid, delta, depth + 1)
        tail[-1] = replace(tail[-1], on_grid=depth == 0)
        return head + tail


def delta_path(
    data: Dataset,
    grid: Sequence[float],
    opts: FitOptions | None = None,
    *,
    max_jump: float | None = DEFAULT_MAX_JUMP,
) -> list[PathPoint]:
    """iOLS_δ fits along an increasing grid, each warm-started from the last converged one.

    Where two neighbouring estimates differ by more than ``max_jump`` in sup
    norm, geometric midpoints are inserted (at most ``MAX_REFINEMENTS``
    halvings of log δ) so the path follows one branch of fixed points.
    ``max_jump=None`` keeps the plain grid.
    """
    walker = _PathWalker(data, opts or FitOptions(), max_jump)
    path: list[PathPoint] = []
    last: PathPoint | None = None
    for delta in _check_grid(grid):
        if last is None:
            points = [walker.fit_at(delta, None, on_grid=True)]
        else:
            points = walker.bridge(last.fit, last.delta, delta)
        path.extend(points)
        converged = [p for p in points if p.fit is not None]
        if converged:
            last = converged[-1]
    return path


def select_model(
    data: Dataset,
    grid: Sequence[float] | None = None,
    prob_kind: str = "logit",
    alpha: float = 0.05,
    n_boot: int = DEFAULT_N_BOOT,
    seed: int = 0,
    *,
    k: int | None = None,
    clip_eps: float = 1e-3,
    trim: bool | None = None,
    opts: FitOptions | None = None,
    prob: ProbabilityModel | None = None,
    include_poisson: bool = True,
    include_pf: bool = False,
    n_jobs: int | None = None,
    bus: EventBusPort | None = None,
    max_failure_share: float = MAX_FAILURE_SHARE,
    max_jump: float | None = DEFAULT_MAX_JUMP,
) -> SelectionReport:
    """Fit and λ-test every candidate, then apply the selection rule.

    The grid is walked in increasing δ by ``delta_path``, so each fit is
    warm-started from the previous converged estimate. Fit and test
    failures are recorded on the entry and never abort the run. All tests
    share ``seed``.
    """
    if not 0 < alpha < 1:
        raise InvalidOptions("alpha must lie in (0, 1)", alpha=alpha)
    deltas = _check_grid(default_grid() if grid is None else grid)
    base = opts or FitOptions()
    prob = prob or fit_prob(data.X, data.positive, prob_kind, k, clip_eps, trim)
    test_kw = {"n_jobs": n_jobs, "max_failure_share": max_failure_share}

    entries: list[ModelEntry] = []
    for point in delta_path(data, deltas, base, max_jump=max_jump):
        if not point.on_grid:
            continue
        delta, fit = point.delta, point.fit
        model_id = f"delta={delta:.6g}"
        if fit is None:
            entry = _entry(model_id, delta, None, None, point.error)
        else:
            try:
                test = lambda_test_iols_delta(data, fit, prob, n_boot, seed, opts=base, **test_kw)
                entry = _entry(model_id, delta, fit, test)
            except ZerolnError as exc:
                logger.warning("%s failed: %s", model_id, exc.message)
                entry = _entry(model_id, delta, fit, None, exc.code)
        entries.append(entry)
        emit(bus, EventType.SELECTION_GRID_POINT, model_id=model_id, delta=delta,
             lambda_hat=entry.lambda_hat)

    if include_poisson:
        for variant, model_id in (("mp", "mp"), ("ap", "ppml")):
            fit = None
            try:
                fit = fit_iols(data, base.model_copy(update={"variant": variant, "delta": 1.0}))
                test = lambda_test_poisson(data, fit, prob, n_boot, seed, opts=base, **test_kw)
                entry = _entry(model_id, None, fit, test)
            except ZerolnError as exc:
                logger.warning("%s failed: %s", model_id, exc.message)
                entry = _entry(model_id, None, fit, None, exc.code)
            entries.append(entry)
            emit(bus, EventType.SELECTION_GRID_POINT, model_id=model_id, delta=None,
                 lambda_hat=entry.lambda_hat)

    if include_pf:
        fit = None
        try:
            fit = fit_baseline(data, "pf", base)
            test = lambda_test_iols_delta(data, fit, prob, n_boot, seed, opts=base,
                                          experimental_pf=True, **test_kw)
            entries.append(_entry("pf*", fit.delta, fit, test, experimental=True))
        except ZerolnError as exc:
            entries.append(_entry("pf*", None, fit, None, exc.code, experimental=True))

    selected = choose(entries, alpha)
    all_rejected = selected is None
    report = SelectionReport(
        grid=deltas,
        per_model=tuple(entries),
        selected=selected,
        alpha=alpha,
        all_rejected=all_rejected,
        advice=ALL_REJECTED_ADVICE if all_rejected else "",
    )
    logger.info("selection: %s", selected or "none (all rejected)")
    emit(bus, EventType.SELECTION_DONE, selected=selected)
    return report
