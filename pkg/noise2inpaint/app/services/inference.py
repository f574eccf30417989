"""Denoising with trained models or the classical plug-in."""

from __future__ import annotations

import logging

import torch
from torch import nn

from noise2inpaint.app.core.errors import DimensionError
from noise2inpaint.app.schemas.unroll import DFVariant, UnrollConfig
from noise2inpaint.app.services.images import Image, batch_to_images, images_to_batch
from noise2inpaint.app.services.noise import ColoredCovariance
from noise2inpaint.app.services.regularizer import DCTSoftThreshold
from noise2inpaint.app.services.unroll import UnrolledInpainter

logger = logging.getLogger(__name__)


def plugin_model(tau: float, mu: float, unroll: UnrollConfig | None = None) -> UnrolledInpainter:
    """Unrolled solver around DCT soft-thresholding; *tau* is in peak-normalized units."""
    return UnrolledInpainter(DCTSoftThreshold(tau), unroll or UnrollConfig(), mu_init=mu)


def denoise(model: nn.Module, image: Image, cov: ColoredCovariance | None = None) -> Image:
    """Denoise one full noisy image.

    Unrolled models see every pixel (no partition) through the full_image
    data fidelity, or colored_cg when *cov* (in the image's own units) is
    given. Plain networks run one forward pass.
    """
    channels = getattr(model, "channels", None)
    if channels is not None and channels != image.channels:
        raise DimensionError(f"model expects {channels} channel(s), image has {image.channels}")
    batch = images_to_batch([image])
    model.eval()
    with torch.no_grad():
        if isinstance(model, UnrolledInpainter):
            if cov is not None:
                normalized = cov.rescaled(1.0 / image.peak**2)
                output, _ = model.unroll(batch, df_variant=DFVariant.COLORED_CG, cov=normalized)
            else:
                output, _ = model.unroll(batch, df_variant=DFVariant.FULL_IMAGE)
        else:
            if cov is not None:
                logger.warning("Noise covariance ignored: model has no data-fidelity units")
            output = model(batch)
    return batch_to_images(output, image.peak)[0]
