"""Configuration management for zeroln."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from zeroln.domain.options import FitOptions


class EstimationConfig(BaseModel):
    variant: Literal["delta", "mp", "ap"] = "delta"
    delta: float = Field(default=1.0, gt=0)
    max_iter: int = Field(default=500, ge=1)
    tol: float = Field(default=1e-8, gt=0)
    kappa_guard: float = Field(default=0.999, gt=0, lt=1)
    kappa_window: int = Field(default=10, ge=3)
    delta_ceiling: float = Field(default=1e6, gt=0)
    pf_delta: float = Field(default=1.0, gt=0)
    ihs_theta: float = Field(default=1.0, gt=0)
    acceleration: Literal["squarem", "none"] = "squarem"

    def fit_options(self, **overrides: object) -> FitOptions:
        """FitOptions from this section, with explicit overrides applied."""
        fields = self.model_dump()
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return FitOptions.create(**fields)


class SpecTestConfig(BaseModel):
    prob: Literal["logit", "probit", "knn", "lpm"] = "logit"
    k: int = Field(default=100, ge=1)
    n_boot: int = Field(default=300, ge=1)
    clip_eps: float = Field(default=1e-3, gt=0, lt=0.5)
    trim: bool | None = None  # None: on for knn only
    alpha: float = Field(default=0.05, gt=0, lt=1)
    max_failure_share: float = Field(default=0.10, ge=0, lt=1)


class SelectionConfig(BaseModel):
    # grid exp(lo), exp(lo + step), ..., exp(hi)
    log_lo: float = -7.0
    log_hi: float = 7.0
    log_step: float = Field(default=0.5, gt=0)


class SimulationConfig(BaseModel):
    dgp: str = "poisson_dgp1"
    n: int = Field(default=10_000, ge=10)
    reps: int = Field(default=200, ge=1)
    estimators: list[str] = ["iols_mp", "pf"]
    tests: list[str] = []
    n_boot: int = Field(default=99, ge=1)


class LoggingConfig(BaseModel):
    level: str = "INFO"
    format: Literal["console", "json"] = "console"
    log_dir: str | None = "data/logs"


class RuntimeConfig(BaseModel):
    threads: int | None = None  # None: ZEROLN_THREADS or CPU count
    seed: int = 0


class AppConfig(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="ZEROLN_", env_nested_delimiter="__")

    estimation: EstimationConfig = EstimationConfig()
    testing: SpecTestConfig = SpecTestConfig()
    selection: SelectionConfig = SelectionConfig()
    simulation: SimulationConfig = SimulationConfig()
    logging: LoggingConfig = LoggingConfig()
    runtime: RuntimeConfig = RuntimeConfig()

    @classmethod
    def from_yaml(cls, path: str | Path = "config.yaml") -> AppConfig:
        path = Path(path)
        if path.exists():
            with open(path) as f:
                data = yaml.safe_load(f) or {}
            return cls(**data)
        return cls()


_config: AppConfig | None = None


def get_config() -> AppConfig:
    global _config
    if _config is None:
        _config = AppConfig.from_yaml()
    return _config


def set_config(config: AppConfig) -> None:
    global _config
    _config = config
