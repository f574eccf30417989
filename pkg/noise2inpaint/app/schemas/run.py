from __future__ import annotations

import enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from noise2inpaint.app.schemas.noise import NoiseSpec
from noise2inpaint.app.schemas.training import TrainConfig, UNetConfig
from noise2inpaint.app.schemas.unroll import UnrollConfig


class Command(str, enum.Enum):
    SYNTH = "synth"
    TRAIN = "train"
    DENOISE = "denoise"
    EVAL = "eval"
    COMPARE = "compare"


class RegularizerKind(str, enum.Enum):
    UNET = "unet"
    DCT_SOFT_THRESHOLD = "dct_soft_threshold"


def _split_commas(v: Any) -> Any:
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


# ─── Sections ────────────────────────────────────────────────────────────────


class PathsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    input: Path | None = None
    clean: Path | None = None
    out: Path | None = None
    checkpoint: Path | None = None
    validation: Path | None = None


class RegularizerConfig(BaseModel):
    """Plug-in regularizer used by ``denoise`` when no checkpoint is given."""

    model_config = ConfigDict(frozen=True)

    kind: RegularizerKind = RegularizerKind.UNET
    tau: float = Field(default=0.02, ge=0)  # normalized [0,1] units
    mu: float = Field(default=1.0, ge=0)


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    count: int = Field(default=20, ge=1)
    height: int = Field(default=64, ge=2)
    width: int = Field(default=64, ge=2)
    channels: int = 1
    peak: float = Field(default=255.0, gt=0)
    style: str = "shapes"
    write_clean: bool = True

    @field_validator("channels")
    @classmethod
    def grey_or_rgb(cls, v: int) -> int:
        if v not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        return v

    @field_validator("style")
    @classmethod
    def known_style(cls, v: str) -> str:
        if v not in ("shapes", "glyphs"):
            raise ValueError("style must be 'shapes' or 'glyphs'")
        return v


class CompareConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    checkpoints: list[Path] = []
    labels: list[str] = []

    @field_validator("checkpoints", "labels", mode="before")
    @classmethod
    def split_comma_lists(cls, v: Any) -> Any:
        return _split_commas(v)

    @model_validator(mode="after")
    def labels_match_checkpoints(self) -> CompareConfig:
        if self.labels and len(self.labels) != len(self.checkpoints):
            raise ValueError("compare.labels must have one entry per checkpoint")
        return self


# ─── Run configuration ───────────────────────────────────────────────────────


class RunConfig(BaseModel):
    """Everything a command needs, merged from defaults, file and flags."""

    model_config = ConfigDict(frozen=True)

    command: Command | None = None
    seed: int = 0
    paths: PathsConfig = PathsConfig()
    noise: NoiseSpec | None = None
    train: TrainConfig = TrainConfig()
    unet: UNetConfig = UNetConfig()
    unroll: UnrollConfig = UnrollConfig()
    regularizer: RegularizerConfig = RegularizerConfig()
    synth: SynthConfig = SynthConfig()
    compare: CompareConfig = CompareConfig()

    @field_validator("seed")
    @classmethod
    def seed_fits_64_bits(cls, v: int) -> int:
        if not 0 <= v < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v
