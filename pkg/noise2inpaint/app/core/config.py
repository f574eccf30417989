from __future__ import annotations

import torch
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="N2I_", extra="ignore")

    LOG_LEVEL: str = "INFO"

    # Numerics
    TORCH_DTYPE: str = "float64"  # "float32" or "float64"
    NUM_THREADS: int | None = None

    # Masked colored data fidelity falls back to a dense solve; 32×32 ceiling
    DENSE_COLORED_MAX_PIXELS: int = 1024

    # Output layout
    CHECKPOINT_FILENAME: str = "model.ckpt"
    TRAIN_LOG_FILENAME: str = "train_log.tsv"
    MANIFEST_FILENAME: str = "manifest.tsv"
    EVAL_FILENAME: str = "eval.tsv"
    COMPARE_FILENAME: str = "compare.tsv"

    IMAGE_SUFFIXES: list[str] = [".png", ".pgm", ".ppm"]


settings = Settings()  # type: ignore[call-arg]


def torch_dtype() -> torch.dtype:
    """Resolve the configured floating point dtype for networks and tensors."""
    dtypes = {"float32": torch.float32, "float64": torch.float64}
    try:
        return dtypes[settings.TORCH_DTYPE]
    except KeyError:
        raise ValueError(f"Unsupported TORCH_DTYPE: {settings.TORCH_DTYPE}") from None
