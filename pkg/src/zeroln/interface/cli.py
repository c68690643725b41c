"""Command-line interface for zeroln.

Subcommands:
- fit       estimate one model on a CSV file
- test      fit, then run the λ specification test for that model
- select    choose δ among iOLS_δ, iOLS_MP and PPML
- simulate  Monte Carlo study on a built-in design

Results go to ``--out`` (or stdout) as JSON or a CSV table. Progress and
logs go to stderr. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Literal, Sequence

import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from zeroln.application.dgp import DGP_KINDS, DgpSpec
from zeroln.application.model_select import default_grid, select_model
from zeroln.application.monte_carlo import run_monte_carlo
from zeroln.application.spec_test import (
    lambda_test_iols_delta,
    lambda_test_iv,
    lambda_test_poisson,
)
from zeroln.domain.errors import InvalidOptions, ZerolnError
from zeroln.domain.estimators import fit_baseline, fit_i2sls, fit_iols, fit_iols_fe
from zeroln.domain.models.data import Dataset
from zeroln.domain.models.events import Event, EventType
from zeroln.domain.models.results import FitResult, McSummary, SelectionReport, SpecTestResult
from zeroln.domain.options import FitOptions
from zeroln.domain.probability import PROB_KINDS, fit_prob
from zeroln.infrastructure.config import AppConfig, set_config
from zeroln.infrastructure.event_bus import EventBus
from zeroln.infrastructure.logging_setup import setup_logging
from zeroln.infrastructure.persistence.dataset_loader import ColumnSchema, load_csv
from zeroln.infrastructure.persistence.result_store import to_csv, to_json, write_result

logger = logging.getLogger(__name__)

ESTIMATORS = ("iols", "i2sls", "pf", "ihs", "drop-ols", "ppml", "pf-2sls")
_BASELINE = {"pf": "pf", "ihs": "ihs", "drop-ols": "drop_ols", "ppml": "ppml", "pf-2sls": "pf_2sls"}


def _split(value: str | None) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


# ------------------------------------------------------------------
# Run configuration
# ------------------------------------------------------------------

class RunConfig(BaseModel):
    """Validated command, merged from the config file and the flags."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Literal["fit", "test", "select", "simulate"]
    data: Path | None = None
    outcome: str = "y"
    regressors: list[str] = []
    estimator: str = "iols"
    fit_options: FitOptions = FitOptions()
    variant_given: bool = False
    fe: list[str] = []
    iv: list[str] = []
    cluster: str | None = None
    shift_negative: bool = False
    loglog: list[str] = []
    add_intercept: bool = True
    prob: str = "logit"
    k: int | None = None
    n_boot: int = 300
    trim: bool | None = None
    clip_eps: float = 1e-3
    grid: tuple[float, ...] = ()
    alpha: float = 0.05
    include_pf: bool = False
    dgp: str = "poisson_dgp1"
    n: int = 10_000
    reps: int = 200
    periods: int = 100
    estimators: list[str] = []
    tests: list[str] = []
    seed: int = 0
    threads: int | None = None
    out: Path | None = None
    format: Literal["json", "csv"] = "json"

    @model_validator(mode="after")
    def _check_combinations(self) -> RunConfig:
        if self.command != "simulate" and self.data is None:
            raise ValueError(f"{self.command} needs a data file")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.iv and self.estimator not in ("i2sls", "pf-2sls"):
            raise ValueError(f"--iv cannot be used with --estimator {self.estimator}")
        if self.estimator in ("i2sls", "pf-2sls") and not self.iv:
            raise ValueError(f"--estimator {self.estimator} needs --iv")
        if self.variant_given and self.estimator in _BASELINE:
            raise ValueError(f"--variant has no meaning for --estimator {self.estimator}")
        if self.fe and self.estimator not in ("iols", "i2sls"):
            raise ValueError("--fe is only available for iols and i2sls")
        if self.command == "select" and (self.fe or self.iv):
            raise ValueError("select supports neither --fe nor --iv")
        if self.prob not in PROB_KINDS:
            raise ValueError(f"unknown probability model {self.prob!r}")
        if self.dgp not in DGP_KINDS:
            raise ValueError(f"unknown DGP {self.dgp!r}")
        return self

    def schema(self) -> ColumnSchema:
        assert self.data is not None
        regressors = self.regressors or _default_regressors(self)
        return ColumnSchema(
            outcome=self.outcome,
            regressors=regressors,
            instruments=self.iv,
            fixed_effects=self.fe,
            cluster=self.cluster,
            add_intercept=self.add_intercept,
            shift_negative=self.shift_negative,
            loglog=self.loglog,
        )


def _default_regressors(cfg: RunConfig) -> list[str]:
    """Every column not used in another role."""
    assert cfg.data is not None
    header = [c.strip() for c in pd.read_csv(cfg.data, nrows=0).columns]
    taken = {cfg.outcome, *cfg.iv, *cfg.fe, *([cfg.cluster] if cfg.cluster else [])}
    return [c for c in header if c not in taken]


def _parse_grid(raw: str | None, app: AppConfig) -> tuple[float, ...]:
    if raw is None or raw == "default":
        s = app.selection
        return default_grid(s.log_lo, s.log_hi, s.log_step)
    parts = raw.split(":")
    if len(parts) == 3:
        try:
            lo, hi, step = (float(p) for p in parts)
        except ValueError as exc:
            raise InvalidOptions(f"bad --grid {raw!r}; expected lo:hi:step in log δ") from exc
        return default_grid(lo, hi, step)
    try:
        return tuple(float(v) for v in _split(raw))
    except ValueError as exc:
        raise InvalidOptions(f"bad --grid {raw!r}") from exc


def build_run_config(args: argparse.Namespace, app: AppConfig) -> RunConfig:
    """Flags override config-file values, which override defaults."""
    est, tst, sim = app.estimation, app.testing, app.simulation
    command = args.command
    values: dict[str, Any] = {
        "command": command,
        "seed": args.seed if args.seed is not None else app.runtime.seed,
        "threads": args.threads if args.threads is not None else app.runtime.threads,
        "out": args.out,
        "format": args.format,
    }
    if command in ("fit", "test", "select"):
        values.update(
            data=args.data,
            outcome=args.y,
            regressors=_split(args.x),
            fe=_split(args.fe),
            iv=_split(args.iv),
            cluster=args.cluster,
            shift_negative=args.shift_negative,
            loglog=_split(args.loglog),
            add_intercept=not args.no_intercept,
        )
    if command in ("fit", "test"):
        values.update(
            estimator=args.estimator,
            variant_given=args.variant is not None,
            fit_options=est.fit_options(variant=args.variant, delta=args.delta,
                                        max_iter=args.max_iter, tol=args.tol),
        )
    else:
        values["fit_options"] = est.fit_options()
    if command in ("test", "select", "simulate"):
        values.update(
            prob=args.prob or tst.prob,
            k=args.k if args.k is not None else (tst.k if (args.prob or tst.prob) == "knn" else None),
            n_boot=args.boot if args.boot is not None else (
                sim.n_boot if command == "simulate" else tst.n_boot),
            trim=args.trim if args.trim is not None else tst.trim,
            alpha=args.alpha if args.alpha is not None else tst.alpha,
        )
    if command == "test":
        values["clip_eps"] = tst.clip_eps
    if command == "select":
        values.update(grid=_parse_grid(args.grid, app), include_pf=args.include_pf,
                      clip_eps=tst.clip_eps)
    if command == "simulate":
        values.update(
            dgp=args.dgp or sim.dgp,
            n=args.n if args.n is not None else sim.n,
            reps=args.reps if args.reps is not None else sim.reps,
            periods=args.periods,
            estimators=_split(args.estimators) or list(sim.estimators),
            tests=_split(args.tests) if args.tests is not None else list(sim.tests),
            grid=_parse_grid(args.grid, app),
        )
    return RunConfig(**values)


# ------------------------------------------------------------------
# Argument parser
# ------------------------------------------------------------------

def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", type=Path, help="CSV file with a header row")
    p.add_argument("--y", default="y", help="outcome column (default: y)")
    p.add_argument("--x", help="comma-separated regressors (default: all other columns)")
    p.add_argument("--fe", help="fixed-effect column(s), comma-separated, at most two")
    p.add_argument("--iv", help="comma-separated instrument columns")
    p.add_argument("--cluster", help="cluster column for the covariance")
    p.add_argument("--shift-negative", action="store_true",
                   help="shift a negative outcome by its minimum")
    p.add_argument("--loglog", help="regressors to log-transform, comma-separated")
    p.add_argument("--no-intercept", action="store_true")


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=ESTIMATORS, default="iols")
    p.add_argument("--variant", choices=("delta", "mp", "ap"))
    p.add_argument("--delta", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)


def _add_test_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prob", choices=PROB_KINDS)
    p.add_argument("--k", type=int, help="neighbours for --prob knn (default: 100)")
    p.add_argument("--boot", type=int, help="bootstrap replicates")
    p.add_argument("--trim", dest="trim", action="store_true", default=None,
                   help="drop rows outside the 5th-95th percentile of P̂")
    p.add_argument("--no-trim", dest="trim", action="store_false")
    p.add_argument("--alpha", type=float)


def _add_global_args(p: argparse.ArgumentParser, suppress: bool = False) -> None:
    # subcommands accept the global flags too; SUPPRESS keeps the top-level value
    def default(value: Any) -> Any:
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--seed", type=int, default=default(None))
    p.add_argument("--out", type=Path, default=default(None), help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=default("json"))
    p.add_argument("--config", type=Path, default=default(Path("config.yaml")))
    p.add_argument("--threads", type=int, default=default(None))
    p.add_argument("--quiet", action="store_true", default=default(False),
                   help="no progress, no log file")
    p.add_argument("--log-level", default=default(None))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeroln", description=__doc__.splitlines()[0])
    _add_global_args(parser)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_args(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", parents=[common], help="estimate one model")
    _add_data_args(fit)
    _add_estimator_args(fit)

    test = sub.add_parser("test", parents=[common], help="λ specification test of one model")
    _add_data_args(test)
    _add_estimator_args(test)
    _add_test_args(test)

    select = sub.add_parser("select", parents=[common], help="choose δ by the λ test")
    _add_data_args(select)
    _add_test_args(select)
    select.add_argument("--grid", help="lo:hi:step in log δ, a comma list of δ, or 'default'")
    select.add_argument("--include-pf", action="store_true",
                        help="report the experimental popular-fix diagnostic")

    simulate = sub.add_parser("simulate", parents=[common], help="Monte Carlo study")
    simulate.add_argument("--dgp", choices=DGP_KINDS)
    simulate.add_argument("--n", type=int)
    simulate.add_argument("--reps", type=int)
    simulate.add_argument("--periods", type=int, default=100, help="T for iv_fe_dgp")
    simulate.add_argument("--estimators", help="comma-separated estimator ids")
    simulate.add_argument("--tests", help="comma-separated test ids")
    simulate.add_argument("--grid", help="δ grid for iols_best / iols_auto")
    _add_test_args(simulate)
    return parser


# ------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------

def _fit(cfg: RunConfig, data: Dataset, bus: EventBus) -> FitResult:
    opts = cfg.fit_options
    if cfg.estimator in _BASELINE:
        return fit_baseline(data, _BASELINE[cfg.estimator], opts, bus)
    if data.fe_groups:
        return fit_iols_fe(data, opts, bus, instruments=cfg.estimator == "i2sls")
    if cfg.estimator == "i2sls":
        return fit_i2sls(data, opts, bus)
    return fit_iols(data, opts, bus)


def _test(cfg: RunConfig, data: Dataset, bus: EventBus) -> SpecTestResult:
    fit = _fit(cfg, data, bus)
    kw: dict[str, Any] = {"n_boot": cfg.n_boot, "seed": cfg.seed, "opts": cfg.fit_options,
                          "n_jobs": cfg.threads, "bus": bus}
    if cfg.estimator == "i2sls":
        assert data.Z is not None
        prob = fit_prob(data.Z, data.positive, cfg.prob, cfg.k, cfg.clip_eps, cfg.trim)
        return lambda_test_iv(data, fit, prob, **kw)
    prob = fit_prob(data.X, data.positive, cfg.prob, cfg.k, cfg.clip_eps, cfg.trim)
    if cfg.estimator in ("pf", "ihs"):
        return lambda_test_iols_delta(data, fit, prob, experimental_pf=True, **kw)
    if fit.variant == "delta":
        return lambda_test_iols_delta(data, fit, prob, **kw)
    if fit.variant in ("mp", "ap"):
        return lambda_test_poisson(data, fit, prob, **kw)
    raise InvalidOptions(f"no λ test for --estimator {cfg.estimator}")


def _select(cfg: RunConfig, data: Dataset, bus: EventBus) -> SelectionReport:
    return select_model(
        data, cfg.grid, cfg.prob, cfg.alpha, cfg.n_boot, cfg.seed,
        k=cfg.k, clip_eps=cfg.clip_eps, trim=cfg.trim, opts=cfg.fit_options,
        include_pf=cfg.include_pf, n_jobs=cfg.threads, bus=bus,
    )


def _simulate(cfg: RunConfig, bus: EventBus) -> McSummary:
    spec = DgpSpec(kind=cfg.dgp, n=cfg.n, periods=cfg.periods)
    return run_monte_carlo(
        spec, cfg.estimators, cfg.tests, cfg.reps, cfg.seed,
        n_boot=cfg.n_boot, prob_kind=cfg.prob, k=cfg.k, grid=cfg.grid or None,
        opts=cfg.fit_options, alpha=cfg.alpha, n_jobs=cfg.threads, bus=bus,
    )


def execute(cfg: RunConfig, bus: EventBus) -> Any:
    if cfg.command == "simulate":
        return _simulate(cfg, bus)
    data = load_csv(cfg.data, cfg.schema())  # type: ignore[arg-type]
    if cfg.command == "fit":
        return _fit(cfg, data, bus)
    if cfg.command == "test":
        return _test(cfg, data, bus)
    return _select(cfg, data, bus)


# ------------------------------------------------------------------
# Rendering
# ------------------------------------------------------------------

def _num(value: float | None, digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


class CLIRenderer:
    """Progress bars from bus events and result tables."""

    def __init__(self, console: Console) -> None:
        self.console = console
        self._progress: Progress | None = None
        self._tasks: dict[str, Any] = {}

    def attach(self, bus: EventBus) -> None:
        bus.on(EventType.BOOTSTRAP_REPLICATE, lambda e: self._advance("bootstrap", e))
        bus.on(EventType.SIMULATION_REPLICATION, lambda e: self._advance("replications", e))
        bus.on(EventType.SELECTION_GRID_POINT, self._on_grid_point)
        bus.on(EventType.FIT_ESCALATED, self._on_escalated)

    def _advance(self, label: str, event: Event) -> None:
        if self._progress is None:
            self._progress = Progress(
                TextColumn("[dim]{task.description}"), BarColumn(), MofNCompleteColumn(),
                TimeElapsedColumn(), console=self.console, transient=True,
            )
            self._progress.start()
        task = self._tasks.get(label)
        if task is None:
            task = self._tasks[label] = self._progress.add_task(label, total=event.data.get("total"))
        self._progress.advance(task)
        if self._progress.tasks[task].finished:
            self._progress.remove_task(task)
            del self._tasks[label]

    def _on_grid_point(self, event: Event) -> None:
        self.console.print(f"  [dim]{event.data['model_id']}: λ̂ = {_num(event.data.get('lambda_hat'))}[/dim]")

    def _on_escalated(self, event: Event) -> None:
        self.console.print(
            f"  [yellow]δ raised {event.data.get('from_delta'):g} → {event.data.get('to_delta'):g}[/yellow]"
        )

    def stop(self) -> None:
        if self._progress is not None:
            self._progress.stop()
            self._progress = None

    def print_result(self, result: Any) -> None:
        if isinstance(result, FitResult):
            table = Table(title=f"{result.estimator} ({result.variant}, δ={result.delta:g})")
            for col in ("term", "estimate", "std. error"):
                table.add_column(col, justify="right" if col != "term" else "left")
            for name, b, se in zip(result.column_names, result.beta, result.std_errors):
                table.add_row(name, _num(float(b)), _num(float(se)))
            self.console.print(table)
            self.console.print(f"[dim]iterations={result.iterations} κ̂={result.kappa_hat:.4f}[/dim]")
        elif isinstance(result, SpecTestResult):
            self.console.print(
                f"{result.model_id}: λ̂ = {result.lambda_hat:.4f} (se {result.se_boot:.4f}), "
                f"t = {result.t_stat:.3f}, p = {result.p_value:.4f}, n = {result.n_used}"
            )
        elif isinstance(result, SelectionReport):
            table = Table(title="model selection")
            for col in ("model", "λ̂", "se", "p-value", "note"):
                table.add_column(col)
            for e in result.per_model:
                note = "selected" if e.model_id == result.selected else (e.error or "")
                table.add_row(e.model_id, _num(e.lambda_hat), _num(e.se), _num(e.p_value), note)
            self.console.print(table)
            if result.all_rejected:
                self.console.print(f"[yellow]{result.advice}[/yellow]")
        elif isinstance(result, McSummary):
            table = Table(title=f"{result.dgp}, n={result.n}, reps={result.reps}")
            for col in ("estimator", "mean", "sd", "ok / failed / diverged"):
                table.add_column(col)
            for s in result.estimators:
                mean = "-" if s.mean is None else " ".join(f"{v:.3f}" for v in s.mean)
                sd = "-" if s.sd is None else " ".join(f"{v:.3f}" for v in s.sd)
                table.add_row(s.estimator, mean, sd, f"{s.n_ok} / {s.n_failed} / {s.n_diverged}")
            self.console.print(table)
            for test, rate in result.rejection_rates.items():
                self.console.print(f"{test}: rejection rate {_num(rate, 3)}")


def _emit_error(err: dict[str, Any]) -> None:
    sys.stderr.write(json.dumps({"error": err}, default=str) + "\n")


# ------------------------------------------------------------------
# Entry points
# ------------------------------------------------------------------

def run_cli(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        app = AppConfig.from_yaml(args.config)
    except (ValidationError, OSError) as exc:
        _emit_error({"code": "invalid_config", "message": str(exc), "details": {}})
        return 2
    set_config(app)
    level = args.log_level or ("WARNING" if args.quiet else app.logging.level)
    setup_logging(level, None if args.quiet else app.logging.log_dir,
                  json_console=app.logging.format == "json")

    try:
        cfg = build_run_config(args, app)
    except ValidationError as exc:
        _emit_error({"code": "invalid_options", "message": exc.errors()[0]["msg"],
                     "details": {"errors": [e["msg"] for e in exc.errors()]}})
        return 2
    except InvalidOptions as exc:
        _emit_error(exc.to_dict())
        return 2

    bus = EventBus()
    renderer = CLIRenderer(Console(stderr=True, quiet=args.quiet))
    renderer.attach(bus)
    try:
        result = execute(cfg, bus)
    except InvalidOptions as exc:
        _emit_error(exc.to_dict())
        return 2
    except ZerolnError as exc:
        logger.error("%s: %s", exc.code, exc.message)
        _emit_error(exc.to_dict())
        return 1
    finally:
        renderer.stop()

    if cfg.out is None:
        sys.stdout.write(to_json(result) if cfg.format == "json" else to_csv(result))
    else:
        write_result(result, cfg.out, cfg.format)
        renderer.print_result(result)
    return 0


def main() -> None:
    """Console-script entry point."""
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
