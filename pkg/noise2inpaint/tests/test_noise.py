"""Tests for corruption processes and the band-limited covariance."""

from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from noise2inpaint.app.core.errors import NoiseSpecError
from noise2inpaint.app.schemas.noise import (
    NoiseKind,
    NoiseSpec,
    blind_gaussian,
    glyph_mixture,
    known_gaussian,
    natural_mixture,
    structured_colored,
)
from noise2inpaint.app.services.images import Image
from noise2inpaint.app.services.noise import (
    apply_covariance,
    apply_inverse_covariance,
    colored_covariance,
    corrupt,
    dct2,
    draw_blind_sigma,
    idct2,
    sample_colored,
)


def _dense(cov) -> np.ndarray:
    """K as a matrix over row-major pixels, one apply_covariance column at a time."""
    size = cov.height * cov.width
    basis = np.eye(size).reshape(size, cov.height, cov.width)
    return np.stack([apply_covariance(cov, e).ravel() for e in basis], axis=1)


def _zeros(height: int = 1000, width: int = 1000, peak: float = 255.0) -> Image:
    return Image(np.zeros((height, width)), peak=peak)


# ─── Schema ──────────────────────────────────────────────────────────────────


class TestNoiseSpec:
    def test_gaussian_requires_sigma(self) -> None:
        with pytest.raises(ValidationError):
            NoiseSpec(kind=NoiseKind.GAUSSIAN)

    def test_blind_range_ordered(self) -> None:
        with pytest.raises(ValidationError):
            NoiseSpec(kind=NoiseKind.BLIND_GAUSSIAN, sigma_min=10, sigma_max=5)

    def test_bernoulli_probability_range(self) -> None:
        with pytest.raises(ValidationError):
            NoiseSpec(kind=NoiseKind.BERNOULLI, p=1.5)

    def test_lambda_alias(self) -> None:
        spec = NoiseSpec.model_validate({"kind": "poisson", "lambda": 30})
        assert spec.lam == 30.0

    def test_colored_band_order(self) -> None:
        with pytest.raises(ValidationError):
            NoiseSpec(kind=NoiseKind.COLORED, band_lo=20, band_hi=10, energy=1)

    def test_presets_validate(self) -> None:
        for spec in (
            known_gaussian(25),
            blind_gaussian(),
            glyph_mixture(),
            natural_mixture(),
            structured_colored(),
        ):
            assert spec.seed == 0


# ─── DCT ─────────────────────────────────────────────────────────────────────


class TestDct:
    def test_inverse_pair(self, rng) -> None:
        x = rng.standard_normal((12, 9, 3))
        np.testing.assert_allclose(idct2(dct2(x)), x, atol=1e-12)
        np.testing.assert_allclose(dct2(idct2(x)), x, atol=1e-12)

    def test_constant_image_is_pure_dc(self) -> None:
        coefficients = dct2(np.full((6, 10), 3.0))
        assert coefficients[0, 0] == pytest.approx(3.0 * np.sqrt(60.0))
        coefficients[0, 0] = 0.0
        assert np.max(np.abs(coefficients)) < 1e-12

    def test_energy_preserved(self, rng) -> None:
        x = rng.standard_normal((16, 16))
        assert np.sum(dct2(x) ** 2) == pytest.approx(np.sum(x**2), rel=1e-12)


# ─── Gaussian / blind ────────────────────────────────────────────────────────


class TestGaussian:
    def test_sigma_within_two_percent(self) -> None:
        noisy = corrupt(_zeros(), known_gaussian(25, seed=11))
        assert noisy.data.std() == pytest.approx(25.0, rel=0.02)

    def test_same_seed_same_noise(self) -> None:
        image = _zeros(32, 32)
        a = corrupt(image, known_gaussian(25, seed=5))
        b = corrupt(image, known_gaussian(25, seed=5))
        np.testing.assert_array_equal(a.data, b.data)

    def test_different_seed_different_noise(self) -> None:
        image = _zeros(32, 32)
        a = corrupt(image, known_gaussian(25, seed=5))
        b = corrupt(image, known_gaussian(25, seed=6))
        assert not np.array_equal(a.data, b.data)

    def test_zero_sigma_is_identity(self) -> None:
        image = Image(np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(corrupt(image, known_gaussian(0)).data, image.data)

    def test_preserves_mean(self) -> None:
        noisy = corrupt(Image(np.full((1000, 1000), 100.0)), known_gaussian(25, seed=13))
        assert noisy.data.mean() == pytest.approx(100.0, abs=0.1)

    def test_input_not_mutated(self) -> None:
        image = Image(np.ones((8, 8)))
        corrupt(image, known_gaussian(25))
        np.testing.assert_array_equal(image.data, np.ones((8, 8, 1)))

    def test_blind_sigma_in_range(self) -> None:
        sigmas = [draw_blind_sigma(blind_gaussian(0, 50, seed=s)) for s in range(200)]
        assert min(sigmas) >= 0.0 and max(sigmas) <= 50.0
        assert max(sigmas) - min(sigmas) > 25.0

    def test_blind_corruption_uses_drawn_sigma(self) -> None:
        spec = blind_gaussian(10, 50, seed=42)
        noisy = corrupt(_zeros(512, 512), spec)
        assert noisy.data.std() == pytest.approx(draw_blind_sigma(spec), rel=0.03)


# ─── Bernoulli / Poisson / mixture ───────────────────────────────────────────


class TestImpulseAndShot:
    def test_bernoulli_fraction(self) -> None:
        image = Image(np.ones((1000, 1000)))
        noisy = corrupt(image, NoiseSpec(kind=NoiseKind.BERNOULLI, p=0.3, seed=2))
        assert np.mean(noisy.data == 0.0) == pytest.approx(0.3, abs=0.01)

    def test_bernoulli_drops_whole_pixels(self) -> None:
        image = Image(np.ones((64, 64, 3)))
        noisy = corrupt(image, NoiseSpec(kind=NoiseKind.BERNOULLI, p=0.5, seed=2))
        dropped = noisy.data == 0.0
        assert np.array_equal(dropped[:, :, 0], dropped[:, :, 1])
        assert np.array_equal(dropped[:, :, 0], dropped[:, :, 2])

    def test_poisson_preserves_mean(self) -> None:
        image = Image(np.full((1000, 1000), 100.0))
        noisy = corrupt(image, NoiseSpec(kind=NoiseKind.POISSON, lam=30.0, seed=4))
        assert noisy.data.mean() == pytest.approx(100.0, rel=0.01)

    def test_glyph_mixture_blacks_out_half(self) -> None:
        page = Image(np.ones((256, 256)), peak=1.0)
        noisy = corrupt(page, glyph_mixture(seed=8))
        assert np.mean(noisy.data == 0.0) == pytest.approx(0.5, abs=0.02)

    def test_natural_mixture_stage_statistics(self) -> None:
        # Poisson (lambda=30) then Gaussian (sigma=80) then 20% blackout on a flat 120 image
        noisy = corrupt(Image(np.full((1000, 1000), 120.0)), natural_mixture(seed=6)).data.ravel()
        kept = noisy[noisy != 0.0]
        assert np.mean(noisy == 0.0) == pytest.approx(0.2, abs=0.005)
        assert kept.mean() == pytest.approx(120.0, rel=0.01)
        shot_variance = 255.0 * 120.0 / 30.0
        assert kept.var() == pytest.approx(shot_variance + 80.0**2, rel=0.02)

    def test_mixture_seed_changes_draw(self) -> None:
        image = Image(np.full((64, 64), 120.0))
        a = corrupt(image, natural_mixture(seed=1))
        b = corrupt(image, natural_mixture(seed=2))
        assert not np.array_equal(a.data, b.data)


# ─── Colored ─────────────────────────────────────────────────────────────────


class TestColored:
    def test_energy_per_pixel(self) -> None:
        cov = colored_covariance(64, 64, 1, 80, 100.0)
        energies = [np.mean(sample_colored(cov, seed) ** 2) for seed in range(20)]
        assert np.mean(energies) == pytest.approx(100.0, rel=0.05)

    def test_stop_band_is_exactly_zero(self) -> None:
        cov = colored_covariance(32, 32, 4, 12, 100.0)
        assert np.all(cov.variance[~cov.passband] == 0.0)
        coefficients = dct2(sample_colored(cov, 3))
        assert np.max(np.abs(coefficients[~cov.passband])) < 1e-9

    def test_dense_assembly_symmetric_psd(self) -> None:
        cov = colored_covariance(8, 8, 1, 5, 10.0)
        dense = _dense(cov)
        np.testing.assert_allclose(dense, dense.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(dense)) > -1e-10

    def test_flat_image_in_stop_band(self) -> None:
        cov = colored_covariance(8, 8, 1, 5, 10.0)
        np.testing.assert_allclose(apply_covariance(cov, np.full((8, 8), 7.0)), 0.0, atol=1e-10)

    def test_sample_covariance_matches_operator(self) -> None:
        cov = colored_covariance(8, 8, 1, 5, 10.0)
        draws = np.stack([sample_colored(cov, seed).ravel() for seed in range(20_000)])
        empirical = draws.T @ draws / len(draws)
        dense = _dense(cov)
        assert np.linalg.norm(empirical - dense) / np.linalg.norm(dense) < 0.06

    def test_band_excludes_dc(self) -> None:
        cov = colored_covariance(16, 16, 1, 8, 1.0)
        assert not cov.passband[0, 0]

    def test_empty_band_rejected(self) -> None:
        with pytest.raises(NoiseSpecError):
            colored_covariance(64, 64, 70, 80, 100.0)

    def test_inverse_undoes_covariance_on_passband(self, rng) -> None:
        cov = colored_covariance(16, 16, 2, 10, 5.0)
        v = idct2(np.where(cov.passband, rng.standard_normal((16, 16)), 0.0))
        np.testing.assert_allclose(apply_inverse_covariance(cov, apply_covariance(cov, v)), v, atol=1e-10)

    def test_rescaled_scales_variance_and_floor(self) -> None:
        cov = colored_covariance(8, 8, 1, 4, 100.0)
        scaled = cov.rescaled(0.5)
        np.testing.assert_allclose(scaled.variance, cov.variance * 0.5)
        assert scaled.floor == pytest.approx(cov.floor * 0.5)

    def test_colored_corruption_per_channel(self) -> None:
        image = Image(np.zeros((32, 32, 3)))
        noisy = corrupt(image, structured_colored(1, 20, 100.0, seed=9))
        assert not np.array_equal(noisy.data[:, :, 0], noisy.data[:, :, 1])
