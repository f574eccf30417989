"""Exception hierarchy shared by every service.

Each error carries a short ``category`` string; the CLI prints it as the
machine-parsable part of its one-line failure message.
"""

from __future__ import annotations


class Noise2InpaintError(Exception):
    """Base class for all library errors."""

    category = "error"

    def __init__(self, message: str, *, detail: dict[str, object] | None = None) -> None:
        self.detail = detail or {}
        super().__init__(message)


class DimensionError(Noise2InpaintError, ValueError):
    """Shapes, channel counts or peaks do not line up."""

    category = "dimension"


class ImageFormatError(Noise2InpaintError, ValueError):
    """File is not a supported, complete image."""

    category = "format"


class NoiseSpecError(Noise2InpaintError, ValueError):
    category = "noise"


class InvalidParameterError(Noise2InpaintError, ValueError):
    category = "parameter"


class NumericError(Noise2InpaintError, ArithmeticError):
    """Non-finite values appeared in a solver, loss or gradient."""

    category = "numeric"


class UnrollError(Noise2InpaintError):
    category = "unroll"


class CheckpointError(Noise2InpaintError):
    category = "checkpoint"


class ConfigurationError(Noise2InpaintError):
    category = "config"


class TrainingError(Noise2InpaintError):
    category = "training"


class UsageError(Noise2InpaintError):
    """Command-line arguments did not parse."""

    category = "usage"
