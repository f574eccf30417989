"""Command implementations behind ``synth``, ``train``, ``denoise``, ``eval`` and ``compare``.

Each command takes a fully merged :class:`RunConfig` and writes its results
through an :class:`OutputStore` rooted at ``paths.out``.
"""

from __future__ import annotations

import logging
from collections import Counter
from pathlib import Path

import numpy as np
from torch import nn

from noise2inpaint.app.core.config import settings
from noise2inpaint.app.core.config_file import dump_run_config
from noise2inpaint.app.core.errors import ConfigurationError
from noise2inpaint.app.core.seeding import derive_seed
from noise2inpaint.app.core.storage import OutputStore
from noise2inpaint.app.schemas.noise import NoiseKind, NoiseSpec
from noise2inpaint.app.schemas.run import RegularizerKind, RunConfig
from noise2inpaint.app.services.checkpoint import load_checkpoint, save_checkpoint
from noise2inpaint.app.services.corpus import synthesize_corpus
from noise2inpaint.app.services.images import (
    PEAK_8BIT,
    PEAK_16BIT,
    Dataset,
    Image,
    encode_image,
    list_image_files,
    load_dataset,
    load_image,
    psnr,
    rescale_to_peak,
)
from noise2inpaint.app.services.inference import denoise, plugin_model
from noise2inpaint.app.services.noise import (
    ColoredCovariance,
    corrupt,
    covariance_for,
    draw_blind_sigma,
)
from noise2inpaint.app.services.trainer import checkpoint_header, format_train_log, train

logger = logging.getLogger(__name__)

DENOISED_SUFFIX = "_denoised"


def _require(value, message: str):
    if value is None:
        raise ConfigurationError(message)
    return value


def _store(config: RunConfig) -> OutputStore:
    return OutputStore(_require(config.paths.out, "an output directory is required (--out)"))


def _noise_sigma(spec: NoiseSpec) -> float | None:
    if spec.kind == NoiseKind.GAUSSIAN:
        return spec.sigma
    if spec.kind == NoiseKind.BLIND_GAUSSIAN:
        return draw_blind_sigma(spec)
    return None


def _covariance(spec: NoiseSpec | None, image: Image) -> ColoredCovariance | None:
    if spec is None or spec.kind != NoiseKind.COLORED:
        return None
    return covariance_for(spec, image.height, image.width)


def _storable(image: Image) -> Image:
    """*image* itself when a PNG/PGM holds its peak, else an 8-bit rescaled copy."""
    if image.peak == PEAK_8BIT or (image.peak == PEAK_16BIT and image.channels == 1):
        return image
    return rescale_to_peak(image, PEAK_8BIT)


def _format_table(header: list[str], rows: list[list[str]]) -> str:
    return "".join("\t".join(cells) + "\n" for cells in [header, *rows])


# ─── synth ───────────────────────────────────────────────────────────────────


def cmd_synth(config: RunConfig) -> Path:
    """Write corrupted copies (and clean copies) of a folder or synthetic corpus, plus a manifest."""
    spec = _require(config.noise, "synth needs a noise section (noise.kind=...)")
    store = _store(config)

    if config.paths.input is not None:
        dataset = load_dataset(config.paths.input)
        items, names = dataset.items, dataset.names
    else:
        synth = config.synth
        items = synthesize_corpus(
            synth.count,
            synth.height,
            synth.width,
            channels=synth.channels,
            peak=synth.peak,
            seed=config.seed,
            style=synth.style,
        )
        suffix = ".pgm" if _storable(items[0]).peak == PEAK_16BIT else ".png"
        names = [f"img_{index:04d}{suffix}" for index in range(len(items))]

    rows = []
    for index, (image, name) in enumerate(zip(items, names)):
        image_seed = derive_seed(config.seed, "synth", index)
        seeded = spec.with_seed(image_seed)
        noisy = corrupt(image, seeded)
        store.save(f"noisy/{name}", encode_image(_storable(noisy), Path(name).suffix))
        if config.synth.write_clean:
            store.save(f"clean/{name}", encode_image(_storable(image), Path(name).suffix))
        sigma = _noise_sigma(seeded)
        # sigma is in the units of the source peak, before any rescale on write
        rows.append(
            [name, str(image_seed), "-" if sigma is None else repr(float(sigma)), repr(image.peak)]
        )

    header = ["filename", "seed", "sigma", "peak"]
    store.save_text(settings.MANIFEST_FILENAME, _format_table(header, rows))
    logger.info("Synthesized %d noisy images into %s", len(rows), store.root)
    return store.root


# ─── train ───────────────────────────────────────────────────────────────────


def cmd_train(config: RunConfig) -> Path:
    """Train per ``train.*`` and write the checkpoint and epoch log to ``paths.out``."""
    input_dir = _require(config.paths.input, "train needs an input folder (--input)")
    store = _store(config)
    train_config = config.train.model_copy(update={"seed": config.seed})

    dataset = load_dataset(input_dir, patch_size=train_config.patch_size)
    clean = load_dataset(config.paths.clean) if config.paths.clean is not None else None
    validation = None
    if config.paths.validation is not None:
        spec = _require(
            train_config.noise or config.noise,
            "a validation folder needs a noise spec to corrupt it",
        )
        references = load_dataset(config.paths.validation).items
        validation = [
            (corrupt(image, spec.with_seed(derive_seed(config.seed, "val-noise", i))), image)
            for i, image in enumerate(references)
        ]

    model, log = train(
        dataset,
        train_config,
        unet=config.unet,
        unroll=config.unroll,
        clean=clean,
        validation=validation,
        checkpoint_dir=store.root,
    )
    header = checkpoint_header(train_config.mode, dataset.channels, config.unet, config.unroll)
    save_checkpoint(model, header, store.path(settings.CHECKPOINT_FILENAME))
    store.save_text(settings.TRAIN_LOG_FILENAME, format_train_log(log))
    store.save_text("run_config.txt", dump_run_config(config))
    return store.path(settings.CHECKPOINT_FILENAME)


# ─── denoise ─────────────────────────────────────────────────────────────────


def _denoiser(config: RunConfig) -> nn.Module:
    if config.paths.checkpoint is not None:
        model, _ = load_checkpoint(config.paths.checkpoint)
        return model
    if config.regularizer.kind == RegularizerKind.DCT_SOFT_THRESHOLD:
        return plugin_model(config.regularizer.tau, config.regularizer.mu, config.unroll)
    raise ConfigurationError(
        "denoise needs a checkpoint (--checkpoint) or regularizer.kind=dct_soft_threshold"
    )


def cmd_denoise(config: RunConfig) -> list[Path]:
    """Denoise every image of ``paths.input``; outputs are named ``<stem>_denoised<suffix>``."""
    input_dir = _require(config.paths.input, "denoise needs an input folder (--input)")
    store = _store(config)
    model = _denoiser(config)
    files = list_image_files(input_dir)
    if not files:
        raise ConfigurationError(f"no images found in {input_dir}")

    written = []
    for path in files:
        image = load_image(path)
        result = denoise(model, image, _covariance(config.noise, image))
        name = f"{path.stem}{DENOISED_SUFFIX}{path.suffix}"
        written.append(store.save(name, encode_image(result, path.suffix)))
    logger.info("Denoised %d images into %s", len(written), store.root)
    return written


# ─── eval ────────────────────────────────────────────────────────────────────


def _paired(denoised_dir: Path, clean_dir: Path) -> list[tuple[str, Path, Path]]:
    clean = {p.stem: p for p in list_image_files(clean_dir)}
    pairs = []
    for path in list_image_files(denoised_dir):
        stem = path.stem.removesuffix(DENOISED_SUFFIX)
        if stem not in clean:
            raise ConfigurationError(f"{path.name} has no clean reference in {clean_dir}")
        pairs.append((stem, path, clean.pop(stem)))
    if clean:
        raise ConfigurationError(f"clean references without a denoised image: {sorted(clean)}")
    if not pairs:
        raise ConfigurationError(f"no images found in {denoised_dir}")
    return pairs


def cmd_eval(config: RunConfig) -> list[tuple[str, float]]:
    """Per-image PSNR of ``paths.input`` (denoised) against ``paths.clean``, plus the average."""
    denoised_dir = _require(config.paths.input, "eval needs the denoised folder (--input)")
    clean_dir = _require(config.paths.clean, "eval needs the clean folder (--clean)")
    store = _store(config)

    scores = [
        (stem, psnr(load_image(clean_path), load_image(path)))
        for stem, path, clean_path in _paired(denoised_dir, clean_dir)
    ]
    average = float(np.mean([score for _, score in scores]))
    rows = [[stem, f"{score:.6f}"] for stem, score in scores]
    rows.append(["average", f"{average:.6f}"])
    store.save_text(settings.EVAL_FILENAME, _format_table(["image", "psnr"], rows))
    return [*scores, ("average", average)]


# ─── compare ─────────────────────────────────────────────────────────────────


def _labels(config: RunConfig) -> list[str]:
    raw = config.compare.labels or [p.stem for p in config.compare.checkpoints]
    seen: Counter[str] = Counter()
    labels = []
    for label in raw:
        seen[label] += 1
        labels.append(label if seen[label] == 1 else f"{label}#{seen[label]}")
    return labels


def cmd_compare(config: RunConfig) -> dict[str, list[float]]:
    """PSNR of every listed checkpoint on one seeded noisy copy of the clean test folder.

    Columns follow the order of ``compare.checkpoints``.
    """
    input_dir = _require(config.paths.input, "compare needs a clean test folder (--input)")
    spec = _require(config.noise, "compare needs a noise section to corrupt the test folder")
    if not config.compare.checkpoints:
        raise ConfigurationError("compare needs at least one checkpoint (compare.checkpoints)")
    store = _store(config)
    dataset: Dataset = load_dataset(input_dir)

    noisy = [
        corrupt(image, spec.with_seed(derive_seed(config.seed, "compare-noise", i)))
        for i, image in enumerate(dataset.items)
    ]
    columns: dict[str, list[float]] = {}
    for label, checkpoint in zip(_labels(config), config.compare.checkpoints):
        model, _ = load_checkpoint(checkpoint)
        columns[label] = [
            psnr(clean, denoise(model, observed, _covariance(spec, observed)))
            for clean, observed in zip(dataset.items, noisy)
        ]

    rows = [
        [name, *(f"{columns[label][i]:.6f}" for label in columns)]
        for i, name in enumerate(dataset.names)
    ]
    rows.append(["average", *(f"{float(np.mean(values)):.6f}" for values in columns.values())])
    store.save_text(settings.COMPARE_FILENAME, _format_table(["image", *columns], rows))
    return columns
