"""Regularizer units: the shared U-Net and the learning-free DCT shrinkage plug-in."""

from __future__ import annotations

import functools
import logging
import math

import numpy as np
import scipy.fft
import torch
import torch.nn.functional as F
from torch import nn

from noise2inpaint.app.core.config import torch_dtype
from noise2inpaint.app.core.errors import DimensionError, InvalidParameterError
from noise2inpaint.app.core.seeding import make_torch_generator
from noise2inpaint.app.schemas.training import TrainMode, UNetConfig
from noise2inpaint.app.schemas.unroll import UnrollConfig
from noise2inpaint.app.services.images import Image
from noise2inpaint.app.services.noise import dct2, idct2
from noise2inpaint.app.services.unroll import UnrolledInpainter

logger = logging.getLogger(__name__)


# ─── U-Net ───────────────────────────────────────────────────────────────────


class ConvBlock(nn.Module):
    """Two same-padded convolutions, each followed by (optional BN and) ReLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, batch_norm: bool) -> None:
        super().__init__()
        layers: list[nn.Module] = []
        for c_in in (in_channels, out_channels):
            layers.append(nn.Conv2d(c_in, out_channels, kernel, padding=kernel // 2))
            if batch_norm:
                layers.append(nn.BatchNorm2d(out_channels))
            layers.append(nn.ReLU())
        self.block = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class UpBlock(nn.Module):
    """Nearest-neighbour ×2 upsampling, a convolution, then concatenation with the skip."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, batch_norm: bool) -> None:
        super().__init__()
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(in_channels, out_channels, kernel, padding=kernel // 2),
        )
        self.block = ConvBlock(2 * out_channels, out_channels, kernel, batch_norm)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.block(torch.cat([self.up(x), skip], dim=1))


class UNet(nn.Module):
    """Encoder/decoder with max-pool downsampling, concat skips and a linear 1×1 head.

    Inputs whose sides are not multiples of 2**depth are reflect-padded and
    the output is cropped back, so the output shape always equals the input.
    """

    def __init__(self, config: UNetConfig, channels: int, seed: int = 0) -> None:
        super().__init__()
        if channels not in (1, 3):
            raise DimensionError(f"U-Net supports 1 or 3 channels, got {channels}")
        self.config = config
        self.channels = channels
        widths = [config.base_channels * 2**level for level in range(config.depth + 1)]
        k, bn = config.kernel, config.batch_norm

        self.encoders = nn.ModuleList(
            ConvBlock(channels if level == 0 else widths[level - 1], widths[level], k, bn)
            for level in range(config.depth)
        )
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = ConvBlock(widths[config.depth - 1], widths[config.depth], k, bn)
        self.decoders = nn.ModuleList(
            UpBlock(widths[level + 1], widths[level], k, bn)
            for level in reversed(range(config.depth))
        )
        self.head = nn.Conv2d(widths[0], channels, kernel_size=1)
        self.reset_parameters(seed)
        self.to(torch_dtype())

    def reset_parameters(self, seed: int) -> None:
        """He-uniform weights from a seeded generator; zero biases."""
        generator = make_torch_generator(seed, "unet-init")
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("bias"):
                    param.zero_()
                elif param.ndim == 4:
                    fan_in = param.shape[1] * param.shape[2] * param.shape[3]
                    bound = math.sqrt(6.0 / fan_in)
                    param.uniform_(-bound, bound, generator=generator)
                else:
                    param.fill_(1.0)  # batch-norm scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(
                f"expected (N, {self.channels}, H, W) input, got {tuple(x.shape)}"
            )
        height, width = x.shape[-2:]
        multiple = 2**self.config.depth
        pad_h, pad_w = -height % multiple, -width % multiple
        if pad_h or pad_w:
            mode = "reflect" if pad_h < height and pad_w < width else "replicate"
            x = F.pad(x, (0, pad_w, 0, pad_h), mode=mode)

        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for decoder, skip in zip(self.decoders, reversed(skips)):
            x = decoder(x, skip)
        return self.head(x)[..., :height, :width]


def unet_parameter_count(config: UNetConfig, channels: int) -> int:
    """Trainable parameter count implied by *config*, computed from the descriptor alone."""

    def conv(c_in: int, c_out: int, k: int) -> int:
        return c_in * c_out * k * k + c_out

    def block(c_in: int, c_out: int) -> int:
        norm = 2 * c_out if config.batch_norm else 0
        return conv(c_in, c_out, config.kernel) + conv(c_out, c_out, config.kernel) + 2 * norm

    widths = [config.base_channels * 2**level for level in range(config.depth + 1)]
    total = 0
    for level in range(config.depth):
        total += block(channels if level == 0 else widths[level - 1], widths[level])
        total += conv(widths[level + 1], widths[level], config.kernel)
        total += block(2 * widths[level], widths[level])
    total += block(widths[config.depth - 1], widths[config.depth])
    total += conv(widths[0], channels, 1)
    return total


def trainable_parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


# ─── Classical plug-in ───────────────────────────────────────────────────────


@functools.lru_cache(maxsize=16)
def _dct_matrix(n: int) -> np.ndarray:
    # C @ v == scipy.fft.dct(v, norm="ortho")
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)


def _shrink(coefficients: np.ndarray | torch.Tensor, tau: float):
    if isinstance(coefficients, torch.Tensor):
        return torch.sign(coefficients) * torch.clamp(coefficients.abs() - tau, min=0.0)
    return np.sign(coefficients) * np.maximum(np.abs(coefficients) - tau, 0.0)


def dct_soft_threshold(image: Image, tau: float) -> Image:
    """idct2(shrink(dct2(x), tau)) per channel, with the DC coefficient left untouched."""
    if tau < 0:
        raise InvalidParameterError(f"tau must be >= 0, got {tau}")
    coefficients = dct2(image.data)
    shrunk = _shrink(coefficients, tau)
    shrunk[0, 0, :] = coefficients[0, 0, :]
    return image.with_data(idct2(shrunk))


class DCTSoftThreshold(nn.Module):
    """Tensor form of :func:`dct_soft_threshold` for (N, C, H, W) batches.

    The transform is applied as dense orthonormal DCT matrices, so the
    operator is differentiable and has no trainable parameters.
    """

    def __init__(self, tau: float) -> None:
        super().__init__()
        if tau < 0:
            raise InvalidParameterError(f"tau must be >= 0, got {tau}")
        self.tau = float(tau)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise DimensionError(f"expected (N, C, H, W) input, got {tuple(x.shape)}")
        height, width = x.shape[-2:]
        c_h = torch.from_numpy(_dct_matrix(height)).to(x.dtype)
        c_w = torch.from_numpy(_dct_matrix(width)).to(x.dtype)
        coefficients = c_h @ x @ c_w.T
        dc = torch.zeros(height, width, dtype=torch.bool)
        dc[0, 0] = True
        shrunk = torch.where(dc, coefficients, _shrink(coefficients, self.tau))
        return c_h.T @ shrunk @ c_w


# ─── Gradients ───────────────────────────────────────────────────────────────


def regularizer_backward(
    module: nn.Module, x: torch.Tensor, upstream: torch.Tensor
) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
    """Exact reverse-mode gradients of ``module(x)`` contracted with *upstream*.

    Returns (gradient per named parameter, gradient with respect to *x*).
    """
    x = x.detach().requires_grad_(True)
    output = module(x)
    if upstream.shape != output.shape:
        raise DimensionError(f"upstream {tuple(upstream.shape)} vs output {tuple(output.shape)}")
    named = list(module.named_parameters())
    names = [name for name, _ in named]
    params = [param for _, param in named]
    grads = torch.autograd.grad(output, (*params, x), grad_outputs=upstream, allow_unused=True)
    param_grads = {
        name: torch.zeros_like(p) if g is None else g
        for name, p, g in zip(names, params, grads[:-1])
    }
    grad_x = torch.zeros_like(x) if grads[-1] is None else grads[-1]
    return param_grads, grad_x


# ─── Model construction ──────────────────────────────────────────────────────


def build_model(
    mode: TrainMode | str,
    unet: UNetConfig,
    channels: int,
    unroll: UnrollConfig | None = None,
    *,
    seed: int = 0,
    mu_init: float = 0.05,
) -> nn.Module:
    """A bare U-Net for n2t/n2n/n2s; the unrolled inpainter around it for n2i."""
    mode = TrainMode(mode)
    network = UNet(unet, channels, seed=seed)
    if mode != TrainMode.N2I:
        return network
    model = UnrolledInpainter(network, unroll or UnrollConfig(), mu_init=mu_init)
    logger.debug("Built n2i model with %d parameters", trainable_parameter_count(model))
    return model
