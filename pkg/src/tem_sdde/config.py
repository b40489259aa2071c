"""Experiment configuration: a nested JSON document validated with pydantic."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .model import ModelParams, validate_params


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ModelBlock(_Block):
    alpha_m1: float
    alpha_0: float
    alpha_1: float
    alpha_2: float
    alpha_3: float
    rho: float = 2.0
    theta: float = 1.25
    lam: float = Field(alias="lambda")

    @model_validator(mode="after")
    def _invariants(self):
        report = validate_params(self.to_params(1.0))
        if not report.ok:
            raise ValueError("violated: " + "; ".join(report.failures))
        return self

    def to_params(self, tau: float) -> ModelParams:
        return ModelParams(self.alpha_m1, self.alpha_0, self.alpha_1, self.alpha_2,
                           self.alpha_3, rho=self.rho, theta=self.theta, tau=tau, lam=self.lam)


class VolatilityBlock(_Block):
    kind: Literal["sigmoid", "constant"] = "sigmoid"
    value: Optional[float] = None

    @model_validator(mode="after")
    def _constant_needs_value(self):
        if self.kind == "constant" and (self.value is None or self.value < 0):
            raise ValueError("constant volatility needs a nonnegative 'value'")
        if self.kind == "sigmoid" and self.value is not None:
            raise ValueError("'value' applies only to constant volatility")
        return self


class InitialBlock(_Block):
    value: float = Field(0.2, gt=0)


class TruncationBlock(_Block):
    pi_exponent: float = Field(2.0 / 3.0, gt=0)
    mu: Literal["default"] = "default"


class GridBlock(_Block):
    tau: float = Field(1.0, gt=0)
    T: float = Field(gt=0)
    M: Optional[int] = Field(None, gt=0)
    M_ladder: Optional[list[int]] = None
    M_reference: Optional[int] = Field(None, gt=0)

    @field_validator("M_ladder")
    @classmethod
    def _positive_rungs(cls, v):
        if v is not None and any(m <= 0 for m in v):
            raise ValueError("ladder rungs must be positive integers")
        return v

    def all_M(self) -> list[int]:
        ms = [] if self.M is None else [self.M]
        ms += self.M_ladder or []
        if self.M_reference is not None:
            ms.append(self.M_reference)
        return ms


class RunBlock(_Block):
    seed: int = Field(ge=0, lt=2**64)
    n_paths: int = Field(gt=0)
    scheme: Literal["TEM", "BEM", "EM"] = "TEM"
    p: float = Field(2.0, ge=2, le=8)
    workers: int = Field(1, ge=1)
    chunk_size: int = Field(256, gt=0)
    nonfinite_tolerance: float = Field(0.0, ge=0, le=1)


class MomentsBlock(_Block):
    orders: list[float] = Field(default_factory=lambda: [2.0, 4.0])
    inverse: bool = False

    @field_validator("orders")
    @classmethod
    def _orders(cls, v):
        if not v or any(p < 2 for p in v):
            raise ValueError("moment orders must be >= 2")
        return v


class BondBlock(_Block):
    maturity: float = Field(gt=0)


class BarrierBlock(_Block):
    expiry: float = Field(gt=0)
    strike: float = Field(ge=0)
    barrier: Optional[float] = Field(None, gt=0)


class PricingBlock(_Block):
    bond: Optional[BondBlock] = None
    barrier: Optional[BarrierBlock] = None
    M_ladder: Optional[list[int]] = None

    @model_validator(mode="after")
    def _something_to_price(self):
        if self.bond is None and self.barrier is None:
            raise ValueError("pricing block needs a bond or a barrier contract")
        return self

    def horizon(self) -> float:
        return max(c for c in (self.bond and self.bond.maturity,
                               self.barrier and self.barrier.expiry) if c)


class OutputBlock(_Block):
    dir: str = "out"


class ExperimentConfig(_Block):
    model: ModelBlock
    volatility: VolatilityBlock = Field(default_factory=VolatilityBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    truncation: TruncationBlock = Field(default_factory=TruncationBlock)
    grid: GridBlock
    run: RunBlock
    moments: MomentsBlock = Field(default_factory=MomentsBlock)
    pricing: Optional[PricingBlock] = None
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _grid_consistency(self):
        g = self.grid
        horizons = [("grid.T", g.T)]
        if self.pricing is not None:
            horizons.append(("pricing horizon", self.pricing.horizon()))
        ms = g.all_M() + (self.pricing.M_ladder or [] if self.pricing else [])
        for m in ms:
            delta = g.tau / m
            for name, T in horizons:
                n = round(T / delta)
                if n <= 0 or abs(n * delta - T) > 1e-9 * max(T, delta):
                    raise ValueError(f"{name}={T!r} is not a multiple of delta = tau/{m}")
        if self.pricing is not None and self.pricing.horizon() > g.T + 1e-12:
            raise ValueError("pricing horizon exceeds grid.T")
        return self

    def config_hash(self) -> str:
        canon = json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return ExperimentConfig.model_validate(json.loads(text))
