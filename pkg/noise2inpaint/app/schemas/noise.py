from __future__ import annotations

import enum

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BLIND_GAUSSIAN = "blind_gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"
    MIXTURE = "mixture"
    COLORED = "colored"


# ─── Noise specification ─────────────────────────────────────────────────────


class NoiseSpec(BaseModel):
    """Tagged description of one corruption process.

    Intensities (``sigma``, ``energy``) are in the units of the image being
    corrupted, e.g. 25 for an 8-bit image or 25/255 for a [0,1] image.
    """

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    kind: NoiseKind
    sigma: float | None = None
    sigma_min: float | None = None
    sigma_max: float | None = None
    p: float | None = None
    lam: float | None = Field(default=None, alias="lambda")
    band_lo: int | None = None
    band_hi: int | None = None
    energy: float | None = None
    components: list[NoiseSpec] | None = None
    seed: int = 0

    @field_validator("seed")
    @classmethod
    def seed_fits_64_bits(cls, v: int) -> int:
        if not 0 <= v < 2**64:
            raise ValueError("Noise seed must be an unsigned 64-bit integer")
        return v

    @model_validator(mode="after")
    def check_kind_parameters(self) -> NoiseSpec:
        kind = self.kind
        if kind == NoiseKind.GAUSSIAN:
            if self.sigma is None or self.sigma < 0:
                raise ValueError("gaussian noise requires sigma >= 0")
        elif kind == NoiseKind.BLIND_GAUSSIAN:
            if self.sigma_min is None or self.sigma_max is None:
                raise ValueError("blind_gaussian noise requires sigma_min and sigma_max")
            if not 0 <= self.sigma_min <= self.sigma_max:
                raise ValueError("blind_gaussian requires 0 <= sigma_min <= sigma_max")
        elif kind == NoiseKind.BERNOULLI:
            if self.p is None or not 0 <= self.p <= 1:
                raise ValueError("bernoulli noise requires 0 <= p <= 1")
        elif kind == NoiseKind.POISSON:
            if self.lam is None or self.lam <= 0:
                raise ValueError("poisson noise requires lambda > 0")
        elif kind == NoiseKind.MIXTURE:
            if not self.components:
                raise ValueError("mixture noise requires at least one component")
        elif kind == NoiseKind.COLORED:
            if self.band_lo is None or self.band_hi is None:
                raise ValueError("colored noise requires band_lo and band_hi")
            if not 0 <= self.band_lo < self.band_hi:
                raise ValueError("colored noise requires 0 <= band_lo < band_hi")
            if self.energy is None or self.energy <= 0:
                raise ValueError("colored noise requires energy > 0")
        return self

    def with_seed(self, seed: int) -> NoiseSpec:
        return self.model_copy(update={"seed": seed})


NoiseSpec.model_rebuild()


# ─── Preset recipes ───────────────────────────────────────────────────────────


def known_gaussian(sigma: float, seed: int = 0) -> NoiseSpec:
    return NoiseSpec(kind=NoiseKind.GAUSSIAN, sigma=sigma, seed=seed)


def blind_gaussian(sigma_min: float = 0.0, sigma_max: float = 50.0, seed: int = 0) -> NoiseSpec:
    return NoiseSpec(
        kind=NoiseKind.BLIND_GAUSSIAN, sigma_min=sigma_min, sigma_max=sigma_max, seed=seed
    )


def glyph_mixture(seed: int = 0) -> NoiseSpec:
    """Gaussian σ=0.7 then half the pixels blacked out, on [0,1] glyph images."""
    return NoiseSpec(
        kind=NoiseKind.MIXTURE,
        components=[
            NoiseSpec(kind=NoiseKind.GAUSSIAN, sigma=0.7),
            NoiseSpec(kind=NoiseKind.BERNOULLI, p=0.5),
        ],
        seed=seed,
    )


def natural_mixture(seed: int = 0) -> NoiseSpec:
    """Multiplicative Poisson λ=30, Gaussian σ=80, Bernoulli p=0.2 on 8-bit images."""
    return NoiseSpec(
        kind=NoiseKind.MIXTURE,
        components=[
            NoiseSpec(kind=NoiseKind.POISSON, lam=30.0),
            NoiseSpec(kind=NoiseKind.GAUSSIAN, sigma=80.0),
            NoiseSpec(kind=NoiseKind.BERNOULLI, p=0.2),
        ],
        seed=seed,
    )


def structured_colored(
    band_lo: int = 1, band_hi: int = 80, energy: float = 100.0, seed: int = 0
) -> NoiseSpec:
    return NoiseSpec(
        kind=NoiseKind.COLORED, band_lo=band_lo, band_hi=band_hi, energy=energy, seed=seed
    )
