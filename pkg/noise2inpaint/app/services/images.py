"""Image representation, file I/O, patches, augmentation and PSNR.

Images hold real-valued intensities in an (H, W, C) float64 array together
with the peak of their dynamic range. Networks consume intensities divided
by the peak; see :func:`images_to_batch` and :func:`batch_to_images`.
"""

from __future__ import annotations

import io
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from noise2inpaint.app.core.config import settings, torch_dtype
from noise2inpaint.app.core.errors import (
    ConfigurationError,
    DimensionError,
    ImageFormatError,
)
from noise2inpaint.app.core.storage import atomic_write_bytes

logger = logging.getLogger(__name__)

# Returned by psnr() when the images are identical; finite so it serializes.
PSNR_CAP_DB = 300.0

PEAK_8BIT = 255.0
PEAK_16BIT = 65535.0

_GREY_MODES = {
    "L": PEAK_8BIT,
    "I;16": PEAK_16BIT,
    "I;16B": PEAK_16BIT,
    "I;16L": PEAK_16BIT,
    "I": PEAK_16BIT,
}


# ─── Types ───────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Image:
    """Immutable H×W×C grid of real intensities with a declared peak."""

    data: np.ndarray
    peak: float = PEAK_8BIT

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise DimensionError(f"image data must be H×W×C with C in (1, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"image must be non-empty, got {arr.shape}")
        if not self.peak > 0:
            raise DimensionError(f"peak must be positive, got {self.peak}")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("image intensities must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "peak", float(self.peak))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.height, self.width, self.channels

    def with_data(self, data: np.ndarray) -> Image:
        """New image with the same peak and *data* replaced."""
        return Image(data=data, peak=self.peak)

    def normalized(self) -> np.ndarray:
        return self.data / self.peak


@dataclass(frozen=True)
class Dataset:
    items: list[Image]
    patch_size: int | None = None
    provenance: str = ""
    names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.items:
            raise ConfigurationError(f"dataset is empty ({self.provenance or 'no source'})")
        channels = {img.channels for img in self.items}
        if len(channels) != 1:
            raise DimensionError(f"dataset mixes channel counts {sorted(channels)}")
        if self.patch_size is not None:
            smallest = min(min(img.height, img.width) for img in self.items)
            if not 1 <= self.patch_size <= smallest:
                raise DimensionError(
                    f"patch_size {self.patch_size} exceeds smallest image side {smallest}"
                )
        if self.names and len(self.names) != len(self.items):
            raise DimensionError("dataset names must match items one to one")

    @property
    def channels(self) -> int:
        return self.items[0].channels


# ─── Metrics ─────────────────────────────────────────────────────────────────


def psnr(reference: Image, test: Image) -> float:
    """PSNR in dB over all channels jointly; PSNR_CAP_DB when MSE is zero."""
    if reference.shape != test.shape:
        raise DimensionError(f"shape mismatch: {reference.shape} vs {test.shape}")
    if reference.peak != test.peak:
        raise DimensionError(f"peak mismatch: {reference.peak} vs {test.peak}")
    mse = float(np.mean((reference.data - test.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(reference.peak**2 / mse))


# ─── File I/O ────────────────────────────────────────────────────────────────


def load_image(path: Path | str) -> Image:
    """Read an 8/16-bit grayscale or 8-bit RGB PNG/PGM/PPM file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        with PILImage.open(path) as pil:
            pil.load()
            mode = pil.mode
            arr = np.asarray(pil)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a recognised image") from exc
    except (OSError, EOFError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"{path}: unreadable or truncated image ({exc})") from exc

    if mode in _GREY_MODES:
        peak = _GREY_MODES[mode]
    elif mode == "RGB":
        peak = PEAK_8BIT
    else:
        raise ImageFormatError(f"{path}: unsupported pixel mode {mode!r}")
    return Image(data=arr.astype(np.float64), peak=peak)


def encode_image(image: Image, fmt: str) -> bytes:
    """Quantize *image* to its source depth and encode it as PNG/PGM/PPM bytes."""
    fmt = fmt.lower().lstrip(".")
    quantized = np.clip(np.rint(image.data), 0, image.peak)
    if image.peak == PEAK_8BIT:
        arr = quantized.astype(np.uint8)
        pil = PILImage.fromarray(arr[:, :, 0] if image.channels == 1 else arr)
    elif image.peak == PEAK_16BIT and image.channels == 1:
        if fmt not in ("pgm", "ppm"):
            raise ImageFormatError("16-bit images are only written as PGM")
        pil = PILImage.fromarray(quantized[:, :, 0].astype(np.int32))
    else:
        raise ImageFormatError(
            f"cannot encode peak={image.peak} with {image.channels} channel(s); rescale to 8-bit first"
        )
    pil_format = {"png": "PNG", "pgm": "PPM", "ppm": "PPM"}.get(fmt)
    if pil_format is None:
        raise ImageFormatError(f"unsupported output format {fmt!r}")
    buf = io.BytesIO()
    pil.save(buf, format=pil_format)
    return buf.getvalue()


def save_image(image: Image, path: Path | str) -> Path:
    """Write *image* atomically; the format follows the file suffix."""
    path = Path(path)
    atomic_write_bytes(path, encode_image(image, path.suffix))
    return path


def rescale_to_peak(image: Image, peak: float) -> Image:
    return Image(data=image.data * (peak / image.peak), peak=peak)


def list_image_files(directory: Path | str) -> list[Path]:
    """Image files of *directory* in lexicographic filename order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"not a directory: {directory}")
    suffixes = {s.lower() for s in settings.IMAGE_SUFFIXES}
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in suffixes),
        key=lambda p: p.name,
    )


def load_dataset(directory: Path | str, patch_size: int | None = None) -> Dataset:
    files = list_image_files(directory)
    if not files:
        raise ConfigurationError(f"no images found in {directory}")
    items = [load_image(p) for p in files]
    logger.info("Loaded %d images from %s", len(items), directory)
    return Dataset(
        items=items,
        patch_size=patch_size,
        provenance=str(directory),
        names=[p.name for p in files],
    )


# ─── Geometry ────────────────────────────────────────────────────────────────


def augment_eightfold(image: Image) -> list[Image]:
    """Return {id, rot90, rot180, rot270} followed by their mirrored versions."""
    rotations = [np.rot90(image.data, k, axes=(0, 1)) for k in range(4)]
    mirrored = [np.flip(r, axis=1) for r in rotations]
    return [image.with_data(arr) for arr in (*rotations, *mirrored)]


def extract_patches(image: Image, size: int, stride: int) -> list[Image]:
    """Row-major tiling with *size*×*size* patches; partial edge tiles are dropped."""
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if size < 1 or size > image.height or size > image.width:
        raise DimensionError(f"patch size {size} does not fit image {image.height}×{image.width}")
    return [
        image.with_data(image.data[r : r + size, c : c + size])
        for r in range(0, image.height - size + 1, stride)
        for c in range(0, image.width - size + 1, stride)
    ]


# ─── Tensor bridges ──────────────────────────────────────────────────────────


def images_to_batch(images: Sequence[Image]) -> torch.Tensor:
    """Stack images into an (N, C, H, W) tensor of peak-normalized intensities."""
    if not images:
        raise DimensionError("cannot batch an empty image list")
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DimensionError(f"batch mixes image shapes {sorted(shapes)}")
    stacked = np.stack([img.normalized().transpose(2, 0, 1) for img in images])
    return torch.from_numpy(stacked).to(torch_dtype())


def batch_to_images(batch: torch.Tensor, peak: float) -> list[Image]:
    arr = batch.detach().cpu().to(torch.float64).numpy()
    return [Image(data=item.transpose(1, 2, 0) * peak, peak=peak) for item in arr]
