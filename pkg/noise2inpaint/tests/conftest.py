"""Shared test fixtures.

Tensors default to float64 (``N2I_TORCH_DTYPE``), which the gradient
checks rely on. Tests marked ``slow`` (desk-scale training runs) are
skipped unless ``N2I_RUN_SLOW=1`` is set.
"""

from __future__ import annotations

import os

import numpy as np
import pytest
import torch

from noise2inpaint.app.schemas.training import UNetConfig
from noise2inpaint.app.services.corpus import synthesize_corpus
from noise2inpaint.app.services.images import Dataset, Image


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: desk-scale training runs (set N2I_RUN_SLOW=1)")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if os.environ.get("N2I_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="slow; set N2I_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# ─── Randomness ──────────────────────────────────────────────────────────────


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def torch_gen() -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(1234)
    return g


# ─── Models ──────────────────────────────────────────────────────────────────


@pytest.fixture
def tiny_unet() -> UNetConfig:
    """Depth-1, 4-channel network used by gradient checks and toy training."""
    return UNetConfig(depth=1, base_channels=4, kernel=3)


def randomize_biases(module: torch.nn.Module, seed: int = 7) -> None:
    """Give every bias a small random value so no ReLU sits exactly on its kink."""
    g = torch.Generator()
    g.manual_seed(seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias"):
                param.uniform_(-0.1, 0.1, generator=g)


# ─── Images ──────────────────────────────────────────────────────────────────


@pytest.fixture
def shapes_16() -> list[Image]:
    return synthesize_corpus(4, 16, 16, seed=3)


@pytest.fixture
def shapes_dataset(shapes_16: list[Image]) -> Dataset:
    return Dataset(items=shapes_16, provenance="synthetic", names=[f"img_{i}.png" for i in range(4)])


def ramp_image(height: int = 12, width: int = 10, channels: int = 1, peak: float = 255.0) -> Image:
    """Distinct values at every pixel, handy for geometry checks."""
    data = np.arange(height * width * channels, dtype=np.float64).reshape(height, width, channels)
    return Image(data=data % (peak + 1), peak=peak)
