from __future__ import annotations

import enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator


class FillKind(str, enum.Enum):
    ZERO = "zero"
    LOCAL_MEAN = "local_mean"
    RANDOM_NEIGHBOR = "random_neighbor"


class DFVariant(str, enum.Enum):
    MASKED_QUADRATIC = "masked_quadratic"
    FULL_IMAGE = "full_image"
    COLORED_CG = "colored_cg"


class FillStrategy(BaseModel):
    """How masked pixels are presented to the network."""

    model_config = ConfigDict(frozen=True)

    kind: FillKind = FillKind.LOCAL_MEAN
    radius: int = Field(default=1, ge=1)

    @classmethod
    def parse(cls, value: str) -> FillStrategy:
        """Accept ``"local_mean"`` or ``"local_mean:2"`` shorthand."""
        kind, _, radius = value.partition(":")
        return cls(kind=FillKind(kind.strip()), radius=int(radius) if radius else 1)


class UnrollConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    iterations: int = Field(default=10, ge=1)
    df_variant: DFVariant = DFVariant.MASKED_QUADRATIC
    fill: FillStrategy = FillStrategy()
    cg_tol: float = Field(default=1e-6, gt=0)
    cg_max_iter: int = Field(default=200, ge=1)

    @field_validator("fill", mode="before")
    @classmethod
    def fill_from_shorthand(cls, v: Any) -> Any:
        if isinstance(v, str):
            return FillStrategy.parse(v)
        return v
