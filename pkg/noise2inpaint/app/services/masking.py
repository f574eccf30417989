"""Pixel partitions J / J^c, the projections P_J / P_{J^c}, and masked-input fills."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from noise2inpaint.app.core.errors import DimensionError, InvalidParameterError
from noise2inpaint.app.core.seeding import make_rng
from noise2inpaint.app.schemas.training import MaskMode
from noise2inpaint.app.schemas.unroll import FillKind, FillStrategy
from noise2inpaint.app.services.images import Image

MASK_MAGIC = b"N2IMASK1"
_MAX_REDRAWS = 1000


class Side(str, enum.Enum):
    J = "J"
    JC = "Jc"


@dataclass(frozen=True)
class MaskPartition:
    """Boolean indicator of J over an H×W grid (True = held out)."""

    masked: np.ndarray
    density: float

    def __post_init__(self) -> None:
        indicator = np.array(self.masked, dtype=bool, copy=True)
        if indicator.ndim != 2:
            raise DimensionError(f"mask indicator must be 2D, got shape {indicator.shape}")
        if not indicator.any() or indicator.all():
            raise InvalidParameterError("J and its complement must both be non-empty")
        indicator.setflags(write=False)
        object.__setattr__(self, "masked", indicator)

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.masked.shape[0]), int(self.masked.shape[1])

    @property
    def indices(self) -> np.ndarray:
        """Sorted row-major flat indices of J."""
        return np.flatnonzero(self.masked)

    @property
    def complement_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.masked)

    @property
    def count(self) -> int:
        return int(self.masked.sum())


# ─── Sampling ────────────────────────────────────────────────────────────────


def sample_mask(
    shape: tuple[int, int],
    density: float,
    mode: MaskMode | str = MaskMode.STRATIFIED,
    seed: int = 0,
) -> MaskPartition:
    height, width = shape
    if height < 2 or width < 2:
        raise DimensionError(f"mask shape must be at least 2×2, got {shape}")
    if not 0 < density < 1:
        raise InvalidParameterError(f"mask density must lie in (0, 1), got {density}")
    mode = MaskMode(mode)
    rng = make_rng(seed, f"mask-{mode.value}")

    if mode == MaskMode.UNIFORM:
        for _ in range(_MAX_REDRAWS):
            indicator = rng.random((height, width)) < density
            if indicator.any() and not indicator.all():
                return MaskPartition(masked=indicator, density=density)
        raise InvalidParameterError(f"could not draw a proper partition at density {density}")

    # Stratified: one held-out pixel per cell×cell block, boundary blocks may be smaller
    cell = math.ceil(1 / math.sqrt(density))
    n_rows, n_cols = math.ceil(height / cell), math.ceil(width / cell)
    block_h = np.minimum(cell, height - np.arange(n_rows) * cell)
    block_w = np.minimum(cell, width - np.arange(n_cols) * cell)
    offsets_r = np.floor(rng.random((n_rows, n_cols)) * block_h[:, None]).astype(int)
    offsets_c = np.floor(rng.random((n_rows, n_cols)) * block_w[None, :]).astype(int)
    rows = np.arange(n_rows)[:, None] * cell + offsets_r
    cols = np.arange(n_cols)[None, :] * cell + offsets_c
    indicator = np.zeros((height, width), dtype=bool)
    indicator[rows.ravel(), cols.ravel()] = True
    return MaskPartition(masked=indicator, density=density)


# ─── Projections ─────────────────────────────────────────────────────────────


def _check_shape(image: Image, partition: MaskPartition) -> None:
    if (image.height, image.width) != partition.shape:
        raise DimensionError(
            f"image {image.height}×{image.width} does not match partition {partition.shape}"
        )


def project(image: Image, partition: MaskPartition, side: Side | str) -> Image:
    """Keep the pixels of *side* and zero the rest (P_J or P_{J^c})."""
    _check_shape(image, partition)
    keep = partition.masked if Side(side) == Side.J else ~partition.masked
    return image.with_data(np.where(keep[:, :, None], image.data, 0.0))


# ─── Network-input fills ─────────────────────────────────────────────────────


def fill_masked(
    image: Image,
    partition: MaskPartition,
    strategy: FillStrategy | None = None,
    seed: int = 0,
) -> Image:
    """Replace J pixels using only J^c values; J^c pixels are returned unchanged."""
    strategy = strategy or FillStrategy()
    observed = project(image, partition, Side.JC).data
    held_out = partition.masked
    if strategy.kind == FillKind.ZERO:
        return image.with_data(observed)

    if strategy.kind == FillKind.LOCAL_MEAN:
        size = 2 * strategy.radius + 1
        kernel = np.ones((size, size))
        available = (~held_out).astype(np.float64)
        counts = ndimage.convolve(available, kernel, mode="constant", cval=0.0)
        filled = observed.copy()
        for c in range(image.channels):
            sums = ndimage.convolve(observed[:, :, c], kernel, mode="constant", cval=0.0)
            means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
            filled[:, :, c] = np.where(held_out, means, observed[:, :, c])
        return image.with_data(filled)

    if strategy.kind == FillKind.RANDOM_NEIGHBOR:
        return image.with_data(_random_neighbor(observed, held_out, strategy.radius, seed))

    raise InvalidParameterError(f"unknown fill strategy {strategy.kind!r}")


def _random_neighbor(observed: np.ndarray, held_out: np.ndarray, radius: int, seed: int) -> np.ndarray:
    height, width = held_out.shape
    rng = make_rng(seed, "fill-random-neighbor")
    offsets = [
        (dr, dc)
        for dr in range(-radius, radius + 1)
        for dc in range(-radius, radius + 1)
        if (dr, dc) != (0, 0)
    ]
    rows, cols = np.mgrid[0:height, 0:width]
    src_r = np.stack([rows + dr for dr, _ in offsets])
    src_c = np.stack([cols + dc for _, dc in offsets])
    inside = (src_r >= 0) & (src_r < height) & (src_c >= 0) & (src_c < width)
    src_r, src_c = np.clip(src_r, 0, height - 1), np.clip(src_c, 0, width - 1)
    valid = inside & ~held_out[src_r, src_c]

    # Uniform choice among valid neighbours: argmax of random keys over valid offsets
    keys = np.where(valid, rng.random(valid.shape), -1.0)
    choice = keys.argmax(axis=0)
    has_neighbor = valid.any(axis=0)
    pick_r = np.take_along_axis(src_r, choice[None], axis=0)[0]
    pick_c = np.take_along_axis(src_c, choice[None], axis=0)[0]

    filled = observed.copy()
    replacement = np.where(has_neighbor[:, :, None], observed[pick_r, pick_c], 0.0)
    filled[held_out] = replacement[held_out]
    return filled


# ─── Debug dumps ─────────────────────────────────────────────────────────────


def encode_partition(partition: MaskPartition) -> bytes:
    """Run-length encode J row-major: magic, H, W, density, run count, runs.

    Runs alternate unmasked/masked starting with an unmasked run (possibly 0).
    """
    flat = partition.masked.ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    height, width = partition.shape
    header = MASK_MAGIC + struct.pack("<IIdI", height, width, partition.density, len(runs))
    return header + struct.pack(f"<{len(runs)}I", *runs)


def decode_partition(data: bytes) -> MaskPartition:
    head = len(MASK_MAGIC) + struct.calcsize("<IIdI")
    if len(data) < head or not data.startswith(MASK_MAGIC):
        raise InvalidParameterError("not a partition dump")
    height, width, density, n_runs = struct.unpack("<IIdI", data[len(MASK_MAGIC) : head])
    if len(data) != head + 4 * n_runs:
        raise InvalidParameterError("truncated partition dump")
    runs = struct.unpack(f"<{n_runs}I", data[head:])
    if sum(runs) != height * width:
        raise InvalidParameterError("partition runs do not cover the grid")
    values = np.arange(n_runs) % 2 == 1
    flat = np.repeat(values, runs)
    return MaskPartition(masked=flat.reshape(height, width), density=density)
