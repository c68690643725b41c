"""Estimator hyper-parameters."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from zeroln.domain.errors import InvalidOptions


class FitOptions(BaseModel):
    """Options for the iOLS / i2SLS fixed-point engines.

    ``delta`` is the transformation hyper-parameter for variant ``delta`` and
    only a step-size control for ``mp`` / ``ap``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal["delta", "mp", "ap"] = "delta"
    delta: float = Field(default=1.0, gt=0)
    max_iter: int = Field(default=500, ge=1)
    tol: float = Field(default=1e-8, gt=0)
    init: Literal["pf_delta1", "user_vector"] = "pf_delta1"
    warm_start: tuple[float, ...] | None = None
    kappa_guard: float = Field(default=0.999, gt=0, lt=1)
    kappa_window: int = Field(default=10, ge=3)
    delta_ceiling: float = Field(default=1e6, gt=0)
    escalate: bool = True
    meat_kind: Literal["HC0", "HC1", "cluster"] = "HC1"
    pf_delta: float = Field(default=1.0, gt=0)
    ihs_theta: float = Field(default=1.0, gt=0)
    clamp: float = Field(default=700.0, gt=0)
    acceleration: Literal["squarem", "none"] = "squarem"

    @model_validator(mode="after")
    def _check_init(self) -> FitOptions:
        if self.init == "user_vector" and self.warm_start is None:
            raise ValueError("init='user_vector' requires warm_start")
        return self

    @classmethod
    def create(cls, **kwargs: Any) -> FitOptions:
        """Validate keyword options, raising ``InvalidOptions`` on bad input."""
        try:
            return cls(**kwargs)
        except ValidationError as exc:
            raise InvalidOptions(f"invalid fit options: {exc.errors()[0]['msg']}",
                                 errors=[e["msg"] for e in exc.errors()]) from exc

    def with_start(self, beta: Any) -> FitOptions:
        """Copy with a user start vector (warm starting)."""
        return self.model_copy(update={"init": "user_vector",
                                       "warm_start": tuple(float(b) for b in beta)})
