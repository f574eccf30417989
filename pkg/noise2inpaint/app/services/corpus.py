"""Desk-scale synthetic image corpora.

``shapes`` images stand in for natural grey/RGB photographs: a smooth
background gradient with piecewise-constant rectangles and disks.
``glyphs`` images stand in for character datasets: thin dark strokes on a
bright page, drawn in the [0, peak] range.
"""

from __future__ import annotations

import numpy as np

from noise2inpaint.app.core.errors import InvalidParameterError
from noise2inpaint.app.core.seeding import make_rng
from noise2inpaint.app.services.images import Image

STYLES = ("shapes", "glyphs")


def synthesize_corpus(
    count: int,
    height: int,
    width: int,
    *,
    channels: int = 1,
    peak: float = 255.0,
    seed: int = 0,
    style: str = "shapes",
) -> list[Image]:
    if style not in STYLES:
        raise InvalidParameterError(f"unknown corpus style {style!r}; expected one of {STYLES}")
    if count < 1 or height < 2 or width < 2:
        raise InvalidParameterError("corpus needs count >= 1 and images of at least 2×2")
    draw = _draw_shapes if style == "shapes" else _draw_glyph
    images = []
    for index in range(count):
        rng = make_rng(seed, f"corpus-{style}", index)
        planes = [draw(rng, height, width) for _ in range(channels)]
        data = np.clip(np.stack(planes, axis=2), 0.0, 1.0) * peak
        images.append(Image(data=data, peak=peak))
    return images


def _draw_shapes(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    gx, gy = rng.uniform(-0.3, 0.3, size=2)
    canvas = 0.5 + gx * (cols / width - 0.5) + gy * (rows / height - 0.5)
    for _ in range(int(rng.integers(3, 7))):
        level = rng.uniform(0.1, 0.9)
        if rng.random() < 0.5:
            r0, c0 = rng.integers(0, height), rng.integers(0, width)
            h = rng.integers(max(2, height // 8), max(3, height // 2))
            w = rng.integers(max(2, width // 8), max(3, width // 2))
            canvas[r0 : r0 + h, c0 : c0 + w] = level
        else:
            cr, cc = rng.uniform(0, height), rng.uniform(0, width)
            radius = rng.uniform(min(height, width) / 10, min(height, width) / 3)
            canvas[(rows - cr) ** 2 + (cols - cc) ** 2 <= radius**2] = level
    return canvas


def _draw_glyph(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    canvas = np.ones((height, width))
    thickness = max(1, min(height, width) // 16)
    margin = min(height, width) // 8
    for _ in range(int(rng.integers(3, 8))):
        if rng.random() < 0.5:
            r = int(rng.integers(margin, height - margin))
            c0, c1 = sorted(rng.integers(margin, width - margin, size=2))
            canvas[r : r + thickness, c0 : c1 + 1] = 0.0
        else:
            c = int(rng.integers(margin, width - margin))
            r0, r1 = sorted(rng.integers(margin, height - margin, size=2))
            canvas[r0 : r1 + 1, c : c + thickness] = 0.0
    return canvas
