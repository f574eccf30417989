"""Synthetic corruption processes and the DCT band-limited noise covariance.

Every draw is a pure function of (input, seed): streams come from
:func:`noise2inpaint.app.core.seeding.make_rng`, so repeated calls are
bitwise identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft

from noise2inpaint.app.core.errors import DimensionError, NoiseSpecError
from noise2inpaint.app.core.seeding import derive_seed, make_rng
from noise2inpaint.app.schemas.noise import NoiseKind, NoiseSpec
from noise2inpaint.app.services.images import Image

logger = logging.getLogger(__name__)

DEFAULT_FLOOR_RATIO = 1e-3


# ─── Orthonormal DCT-II ──────────────────────────────────────────────────────


def dct2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DCT-II over the two leading axes (per channel for H×W×C)."""
    return scipy.fft.dctn(np.asarray(x, dtype=np.float64), type=2, norm="ortho", axes=(0, 1))


def idct2(coefficients: np.ndarray) -> np.ndarray:
    return scipy.fft.idctn(
        np.asarray(coefficients, dtype=np.float64), type=2, norm="ortho", axes=(0, 1)
    )


# ─── Colored covariance ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class ColoredCovariance:
    """Covariance K = Cᵀ diag(variance) C, diagonal in the orthonormal DCT basis C.

    ``floor`` (ε) whitens the stop band: K⁻¹ uses 1/max(variance, ε) on the
    pass band and 1/ε elsewhere.
    """

    height: int
    width: int
    passband: np.ndarray
    variance: np.ndarray
    floor: float

    def __post_init__(self) -> None:
        shape = (self.height, self.width)
        if self.passband.shape != shape or self.variance.shape != shape:
            raise DimensionError(f"covariance arrays must be {shape}")
        if not self.passband.any():
            raise NoiseSpecError("colored covariance has an empty pass band")
        if np.any(self.variance < 0) or np.any(self.variance[~self.passband] != 0):
            raise NoiseSpecError("variance must be >= 0 and exactly zero on the stop band")
        if not self.floor > 0:
            raise NoiseSpecError("whitening floor must be positive")
        for arr in (self.passband, self.variance):
            arr.setflags(write=False)

    @property
    def inverse_weights(self) -> np.ndarray:
        return np.where(self.passband, 1.0 / np.maximum(self.variance, self.floor), 1.0 / self.floor)

    def rescaled(self, factor: float) -> ColoredCovariance:
        """The same operator expressed in intensity units scaled by sqrt(*factor*)."""
        return ColoredCovariance(
            height=self.height,
            width=self.width,
            passband=self.passband.copy(),
            variance=self.variance * factor,
            floor=self.floor * factor,
        )


def colored_covariance(
    height: int,
    width: int,
    band_lo: int,
    band_hi: int,
    energy_per_pixel: float,
    floor_ratio: float = DEFAULT_FLOOR_RATIO,
) -> ColoredCovariance:
    """Ideal band-pass covariance on the DCT plane.

    The pass band is the square annulus ``band_lo <= max(u, v) < band_hi``
    anchored at the low-frequency corner (``band_lo >= 1`` excludes DC);
    ``band_hi`` is clipped to the grid. The flat pass-band variance makes the
    expected energy per pixel exactly *energy_per_pixel*.
    """
    if not 0 <= band_lo < band_hi:
        raise NoiseSpecError(f"invalid band [{band_lo}, {band_hi})")
    if not energy_per_pixel > 0:
        raise NoiseSpecError("energy_per_pixel must be positive")
    u, v = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    radius = np.maximum(u, v)
    passband = (radius >= band_lo) & (radius < band_hi)
    n_pass = int(passband.sum())
    if n_pass == 0:
        raise NoiseSpecError(f"band [{band_lo}, {band_hi}) is empty on a {height}×{width} grid")
    level = energy_per_pixel * height * width / n_pass
    variance = np.where(passband, level, 0.0)
    return ColoredCovariance(
        height=height,
        width=width,
        passband=passband,
        variance=variance,
        floor=floor_ratio * level,
    )


def covariance_for(spec: NoiseSpec, height: int, width: int) -> ColoredCovariance:
    """Covariance of a colored *spec* on an H×W grid."""
    if spec.kind != NoiseKind.COLORED:
        raise NoiseSpecError(f"{spec.kind.value} noise has no colored covariance")
    assert spec.band_lo is not None and spec.band_hi is not None and spec.energy is not None
    return colored_covariance(height, width, spec.band_lo, spec.band_hi, spec.energy)


def _check_grid(cov: ColoredCovariance, v: np.ndarray) -> None:
    if v.shape[:2] != (cov.height, cov.width):
        raise DimensionError(f"grid {v.shape[:2]} does not match covariance {(cov.height, cov.width)}")


def _diag(weights: np.ndarray, v: np.ndarray) -> np.ndarray:
    return weights if v.ndim == 2 else weights[:, :, None]


def apply_covariance(cov: ColoredCovariance, v: np.ndarray) -> np.ndarray:
    """K·v = idct2(variance ⊙ dct2(v))."""
    _check_grid(cov, v)
    return idct2(_diag(cov.variance, v) * dct2(v))


def apply_inverse_covariance(cov: ColoredCovariance, v: np.ndarray) -> np.ndarray:
    """K⁻¹·v with the whitening floor on the stop band."""
    _check_grid(cov, v)
    return idct2(_diag(cov.inverse_weights, v) * dct2(v))


def sample_colored(cov: ColoredCovariance, seed: int) -> np.ndarray:
    """Draw one H×W noise field with covariance *cov*."""
    rng = make_rng(seed, "colored")
    white = rng.standard_normal((cov.height, cov.width))
    return idct2(np.sqrt(cov.variance) * white)


# ─── Corruption ──────────────────────────────────────────────────────────────


def draw_blind_sigma(spec: NoiseSpec) -> float:
    """The σ a blind_gaussian *spec* draws for one image (uniform on its range)."""
    if spec.kind != NoiseKind.BLIND_GAUSSIAN:
        raise NoiseSpecError(f"{spec.kind.value} noise has no blind sigma")
    assert spec.sigma_min is not None and spec.sigma_max is not None
    rng = make_rng(spec.seed, "blind-sigma")
    return float(rng.uniform(spec.sigma_min, spec.sigma_max))


def corrupt(image: Image, spec: NoiseSpec) -> Image:
    """Apply *spec* to *image*; deterministic given (image, spec.seed)."""
    return image.with_data(_apply(image.data, image.peak, spec))


def _apply(data: np.ndarray, peak: float, spec: NoiseSpec) -> np.ndarray:
    kind = spec.kind
    if kind == NoiseKind.GAUSSIAN:
        assert spec.sigma is not None
        return _add_gaussian(data, spec.sigma, spec.seed)
    if kind == NoiseKind.BLIND_GAUSSIAN:
        return _add_gaussian(data, draw_blind_sigma(spec), spec.seed)
    if kind == NoiseKind.BERNOULLI:
        assert spec.p is not None
        rng = make_rng(spec.seed, "bernoulli")
        dropped = rng.random(data.shape[:2]) < spec.p
        out = data.copy()
        out[dropped] = 0.0
        return out
    if kind == NoiseKind.POISSON:
        assert spec.lam is not None
        rng = make_rng(spec.seed, "poisson")
        rate = spec.lam * np.clip(data, 0.0, None) / peak
        return peak * rng.poisson(rate).astype(np.float64) / spec.lam
    if kind == NoiseKind.MIXTURE:
        assert spec.components
        out = data
        for index, component in enumerate(spec.components):
            out = _apply(out, peak, component.with_seed(derive_seed(spec.seed, "mixture", index)))
        return out
    if kind == NoiseKind.COLORED:
        cov = covariance_for(spec, data.shape[0], data.shape[1])
        field = np.stack(
            [sample_colored(cov, derive_seed(spec.seed, "channel", c)) for c in range(data.shape[2])],
            axis=2,
        )
        return data + field
    raise NoiseSpecError(f"unsupported noise kind {kind!r}")


def _add_gaussian(data: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    if sigma == 0:
        return data.copy()
    rng = make_rng(seed, "gaussian")
    return data + sigma * rng.standard_normal(data.shape)
