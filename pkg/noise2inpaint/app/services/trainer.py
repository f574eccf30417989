"""Training loops for n2t, n2n, n2s and n2i with seed-derived corruption and masks."""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from noise2inpaint.app.core.errors import (
    ConfigurationError,
    DimensionError,
    NumericError,
    TrainingError,
)
from noise2inpaint.app.core.seeding import derive_seed, make_rng
from noise2inpaint.app.core.storage import atomic_write_bytes
from noise2inpaint.app.schemas.training import EpochRecord, TrainConfig, TrainMode, UNetConfig
from noise2inpaint.app.schemas.unroll import DFVariant, UnrollConfig
from noise2inpaint.app.services.checkpoint import CheckpointHeader, save_checkpoint
from noise2inpaint.app.services.images import (
    Dataset,
    Image,
    augment_eightfold,
    extract_patches,
    images_to_batch,
    psnr,
)
from noise2inpaint.app.services.inference import denoise
from noise2inpaint.app.services.masking import MaskPartition, sample_mask
from noise2inpaint.app.services.noise import corrupt
from noise2inpaint.app.services.regularizer import build_model
from noise2inpaint.app.services.unroll import UnrolledInpainter, fill_batch, partitions_to_tensor

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


# ─── Losses ──────────────────────────────────────────────────────────────────


def masked_loss(
    output: torch.Tensor,
    y: torch.Tensor,
    held_out: torch.Tensor | Sequence[MaskPartition],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Σ_{j∈J} (output_j − y_j)² and its gradient, which is exactly zero on J^c.

    The loss stays attached to *output*'s graph; the returned gradient is detached.
    """
    if output.shape != y.shape:
        raise DimensionError(f"shape mismatch: {tuple(output.shape)} vs {tuple(y.shape)}")
    if not isinstance(held_out, torch.Tensor):
        held_out = partitions_to_tensor(held_out, y)
    residual = torch.where(held_out, output - y, torch.zeros_like(output))
    loss = (residual**2).sum()
    return loss, (2 * residual).detach()


def full_loss(output: torch.Tensor, target: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if output.shape != target.shape:
        raise DimensionError(f"shape mismatch: {tuple(output.shape)} vs {tuple(target.shape)}")
    residual = output - target
    return (residual**2).sum(), (2 * residual).detach()


# ─── Optimizer ───────────────────────────────────────────────────────────────


def make_optimizer(params: Sequence[nn.Parameter], lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def adam_step(
    params: Sequence[nn.Parameter],
    grads: Sequence[torch.Tensor],
    optimizer: torch.optim.Adam,
    lr: float,
) -> None:
    """One bias-corrected Adam update of *params* with explicit *grads*.

    Raises NumericError before touching any parameter if a gradient is not finite.
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for param, grad in zip(params, grads):
        if grad.shape != param.shape:
            raise DimensionError(f"gradient {tuple(grad.shape)} vs parameter {tuple(param.shape)}")
        if not torch.all(torch.isfinite(grad)):
            raise NumericError("non-finite gradient; optimizer step aborted")
    for group in optimizer.param_groups:
        group["lr"] = lr
    for param, grad in zip(params, grads):
        param.grad = grad.detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


# ─── Log ─────────────────────────────────────────────────────────────────────


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def _cell(value: float | None, fmt: str) -> str:
    return "-" if value is None else format(value, fmt)


def format_train_log(log: TrainLog) -> str:
    lines = ["epoch\tloss\tpsnr\tmu\tseconds"]
    for r in log.records:
        lines.append(
            "\t".join(
                [
                    str(r.epoch),
                    _cell(r.loss, ".17g"),
                    _cell(r.psnr, ".17g"),
                    _cell(r.mu, ".17g"),
                    _cell(r.seconds, ".3f"),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def write_train_log(log: TrainLog, path: Path | str) -> Path:
    path = Path(path)
    atomic_write_bytes(path, format_train_log(log).encode("utf-8"))
    return path


# ─── Sample preparation ──────────────────────────────────────────────────────


@dataclass
class _Sample:
    noisy: Image
    target: Image | None


def _geometry(image: Image, patch_size: int | None, augment: bool) -> list[Image]:
    tiles = [image] if patch_size is None else extract_patches(image, patch_size, patch_size)
    if not augment:
        return tiles
    return [variant for tile in tiles for variant in augment_eightfold(tile)]


def _build_samples(
    dataset: Dataset,
    clean: Dataset | None,
    config: TrainConfig,
    epoch: int,
) -> list[_Sample]:
    patch_size = config.patch_size or dataset.patch_size
    samples: list[_Sample] = []
    for index, image in enumerate(dataset.items):
        noise_index = (epoch, index) if config.resample_noise else (index,)
        if config.noise is not None:
            noisy = corrupt(image, config.noise.with_seed(derive_seed(config.seed, "noise", *noise_index)))
            if config.mode == TrainMode.N2T:
                target = image
            elif config.mode == TrainMode.N2N:
                spec = config.target_noise or config.noise
                target = corrupt(image, spec.with_seed(derive_seed(config.seed, "noise-target", *noise_index)))
            else:
                target = None
        else:
            noisy = image
            target = clean.items[index] if config.mode == TrainMode.N2T and clean is not None else None

        noisy_tiles = _geometry(noisy, patch_size, config.augment)
        target_tiles = (
            _geometry(target, patch_size, config.augment) if target is not None else [None] * len(noisy_tiles)
        )
        samples.extend(_Sample(n, t) for n, t in zip(noisy_tiles, target_tiles))
    return samples


def _check_inputs(dataset: Dataset, clean: Dataset | None, config: TrainConfig) -> None:
    if config.mode == TrainMode.N2T and config.noise is None and clean is None:
        raise ConfigurationError("mode n2t needs clean references (a clean folder or a noise spec)")
    if config.mode == TrainMode.N2N and config.noise is None:
        raise ConfigurationError("mode n2n needs clean images and a noise spec to draw two corruptions")
    if clean is not None and len(clean.items) != len(dataset.items):
        raise ConfigurationError(
            f"{len(dataset.items)} training images but {len(clean.items)} clean references"
        )
    if clean is not None:
        for noisy, reference in zip(dataset.items, clean.items):
            if noisy.shape != reference.shape:
                raise DimensionError(f"clean reference {reference.shape} vs noisy {noisy.shape}")


def _default_validation(
    dataset: Dataset, clean: Dataset | None, config: TrainConfig
) -> list[tuple[Image, Image]]:
    if config.noise is not None:
        return [
            (corrupt(image, config.noise.with_seed(derive_seed(config.seed, "val-noise", i))), image)
            for i, image in enumerate(dataset.items)
        ]
    if clean is not None:
        return list(zip(dataset.items, clean.items))
    return []


def validation_psnr(model: nn.Module, pairs: Sequence[tuple[Image, Image]]) -> float | None:
    """Mean PSNR of the model's full-image inference over (noisy, clean) pairs."""
    if not pairs:
        return None
    scores = [psnr(reference, denoise(model, noisy)) for noisy, reference in pairs]
    return float(np.mean(scores))


# ─── Training ────────────────────────────────────────────────────────────────


def checkpoint_header(
    mode: TrainMode, channels: int, unet: UNetConfig, unroll: UnrollConfig
) -> CheckpointHeader:
    return CheckpointHeader(
        mode=mode, channels=channels, unet=unet, unroll=unroll if mode == TrainMode.N2I else None
    )


def _batch_loss(
    model: nn.Module,
    batch: Sequence[_Sample],
    config: TrainConfig,
    unroll: UnrollConfig,
    epoch: int,
    offsets: Sequence[int],
    batch_index: int,
) -> torch.Tensor:
    x = images_to_batch([s.noisy for s in batch])
    n = x.shape[0]
    if not config.mode.uses_mask:
        target = images_to_batch([s.target for s in batch])
        loss, _ = full_loss(model(x), target)
        return loss / n

    assert config.mask_density is not None
    height, width = x.shape[-2:]
    partitions = [
        sample_mask(
            (height, width),
            config.mask_density,
            config.mask_mode,
            seed=derive_seed(config.seed, "mask", epoch, offset),
        )
        for offset in offsets
    ]
    fill_seed = derive_seed(config.seed, "fill", epoch, batch_index)
    if config.mode == TrainMode.N2I:
        assert isinstance(model, UnrolledInpainter)
        output, _ = model.unroll(
            x, partitions, df_variant=DFVariant.MASKED_QUADRATIC, fill_seed=fill_seed
        )
    else:
        # n2s sees the same J^c-only fill that starts the n2i unroll
        output = model(fill_batch(x, partitions, unroll, seed=fill_seed))
    loss, _ = masked_loss(output, x, partitions)
    return loss / n


def train(
    dataset: Dataset,
    config: TrainConfig,
    *,
    unet: UNetConfig | None = None,
    unroll: UnrollConfig | None = None,
    clean: Dataset | None = None,
    validation: Sequence[tuple[Image, Image]] | None = None,
    checkpoint_dir: Path | str | None = None,
) -> tuple[nn.Module, TrainLog]:
    """Train a fresh model for ``config.mode`` and return it with its epoch log.

    With ``config.noise`` set, *dataset* holds clean images that are corrupted
    here; otherwise it holds the noisy observations and *clean* (paired by
    index) supplies references. Validation defaults to the training images
    under an independent noise draw when references exist.
    """
    _check_inputs(dataset, clean, config)
    unet = unet or UNetConfig()
    unroll = unroll or UnrollConfig()
    model = build_model(
        config.mode, unet, dataset.channels, unroll, seed=config.seed, mu_init=config.mu_init
    )
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = make_optimizer(params, config.learning_rate)
    pairs = list(validation) if validation is not None else _default_validation(dataset, clean, config)
    header = checkpoint_header(config.mode, dataset.channels, unet, unroll)

    log = TrainLog()
    samples = None
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        model.train()
        if samples is None or config.resample_noise:
            samples = _build_samples(dataset, clean, config, epoch)

        order = make_rng(config.seed, "shuffle", epoch).permutation(len(samples))
        total, count = 0.0, 0
        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            offsets = order[start : start + config.batch_size].tolist()
            batch = [samples[i] for i in offsets]
            loss = _batch_loss(model, batch, config, unroll, epoch, offsets, batch_index)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}",
                    detail={"epoch": epoch, "batch": batch_index},
                )
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
            adam_step(params, grads, optimizer, config.learning_rate)
            total += float(loss) * len(batch)
            count += len(batch)

        mu = float(model.mu) if isinstance(model, UnrolledInpainter) else None
        record = EpochRecord(
            epoch=epoch,
            loss=total / count,
            psnr=validation_psnr(model, pairs),
            mu=mu,
            seconds=time.perf_counter() - started,
        )
        log.records.append(record)
        logger.info(
            "epoch %d/%d loss=%.6g psnr=%s mu=%s (%.2fs)",
            epoch,
            config.epochs,
            record.loss,
            "-" if record.psnr is None else f"{record.psnr:.3f}",
            "-" if mu is None else f"{mu:.5g}",
            record.seconds,
        )
        if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(model, header, Path(checkpoint_dir) / f"epoch_{epoch:04d}.ckpt")

    model.eval()
    return model, log
