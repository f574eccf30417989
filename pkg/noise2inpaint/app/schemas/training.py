from __future__ import annotations

import enum

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from noise2inpaint.app.schemas.noise import NoiseSpec


class TrainMode(str, enum.Enum):
    N2T = "n2t"
    N2N = "n2n"
    N2S = "n2s"
    N2I = "n2i"

    @property
    def uses_mask(self) -> bool:
        return self in (TrainMode.N2S, TrainMode.N2I)


class MaskMode(str, enum.Enum):
    UNIFORM = "uniform"
    STRATIFIED = "stratified"


class UNetConfig(BaseModel):
    """U-Net descriptor; defaults are the shallow depth-2, 32-channel network."""

    model_config = ConfigDict(frozen=True)

    depth: int = Field(default=2, ge=1)
    base_channels: int = Field(default=32, ge=1)
    kernel: int = Field(default=3, ge=1)
    batch_norm: bool = False
    final_activation: str = "linear"

    @field_validator("kernel")
    @classmethod
    def kernel_must_be_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("U-Net kernel size must be odd")
        return v

    @field_validator("final_activation")
    @classmethod
    def only_linear_head(cls, v: str) -> str:
        if v != "linear":
            raise ValueError("Only a linear final activation is supported")
        return v


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: TrainMode = TrainMode.N2I
    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=8, ge=1)
    learning_rate: float = 1e-5
    mask_density: float | None = 1 / 25
    mask_mode: MaskMode = MaskMode.STRATIFIED
    patch_size: int | None = None
    augment: bool = True
    resample_noise: bool = False
    noise: NoiseSpec | None = None
    target_noise: NoiseSpec | None = None
    mu_init: float = Field(default=0.05, gt=0)
    seed: int = 0
    checkpoint_every: int | None = None

    @field_validator("learning_rate")
    @classmethod
    def learning_rate_non_negative(cls, v: float) -> float:
        # lr = 0 is allowed; it freezes the parameters
        if v < 0:
            raise ValueError("learning_rate must be >= 0")
        return v

    @model_validator(mode="after")
    def density_for_masked_modes(self) -> TrainConfig:
        if self.mode.uses_mask:
            if self.mask_density is None or not 0 < self.mask_density < 1:
                raise ValueError(f"mode {self.mode.value} requires 0 < mask_density < 1")
        return self


class EpochRecord(BaseModel):
    epoch: int
    loss: float
    psnr: float | None = None
    mu: float | None = None
    seconds: float = 0.0
