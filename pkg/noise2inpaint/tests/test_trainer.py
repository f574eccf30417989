"""Tests for training losses, the Adam step, the epoch log and the training loops."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from noise2inpaint.app.core.errors import ConfigurationError, DimensionError, NumericError
from noise2inpaint.app.schemas.noise import known_gaussian
from noise2inpaint.app.schemas.training import EpochRecord, MaskMode, TrainConfig, TrainMode
from noise2inpaint.app.schemas.unroll import DFVariant, UnrollConfig
from noise2inpaint.app.services.corpus import synthesize_corpus
from noise2inpaint.app.services.images import Dataset, images_to_batch, psnr
from noise2inpaint.app.services.inference import denoise
from noise2inpaint.app.services.masking import sample_mask
from noise2inpaint.app.services.noise import corrupt
from noise2inpaint.app.services.regularizer import build_model
from noise2inpaint.app.services.trainer import (
    TrainLog,
    adam_step,
    format_train_log,
    full_loss,
    make_optimizer,
    masked_loss,
    train,
    write_train_log,
)
from noise2inpaint.app.services.unroll import UnrolledInpainter, partitions_to_tensor

SMALL_UNROLL = UnrollConfig(iterations=2)


def _config(mode: TrainMode, **overrides) -> TrainConfig:
    values = dict(
        mode=mode,
        epochs=2,
        batch_size=2,
        learning_rate=1e-3,
        mask_density=0.1,
        augment=False,
        noise=known_gaussian(25.0),
        seed=11,
    )
    values.update(overrides)
    return TrainConfig(**values)


# ─── Losses ──────────────────────────────────────────────────────────────────


class TestLosses:
    def test_masked_loss_sums_over_held_out_pixels(self) -> None:
        output = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        y = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=torch.float64)
        held = torch.tensor([[[[True, False], [False, True]]]])
        loss, grad = masked_loss(output, y, held)
        assert float(loss) == 17.0
        assert torch.equal(grad, torch.tensor([[[[-2.0, 0.0], [0.0, -8.0]]]], dtype=torch.float64))

    def test_gradient_vanishes_off_mask(self, rng) -> None:
        for seed in range(100):
            output = torch.from_numpy(rng.normal(size=(1, 1, 8, 8))).requires_grad_(True)
            y = torch.from_numpy(rng.normal(size=(1, 1, 8, 8)))
            partitions = [sample_mask((8, 8), 0.2, MaskMode.UNIFORM, seed=seed)]
            loss, grad = masked_loss(output, y, partitions)
            loss.backward()
            held = partitions_to_tensor(partitions, y).expand_as(y)
            assert torch.count_nonzero(grad[~held]) == 0
            assert torch.count_nonzero(output.grad[~held]) == 0

    def test_everything_held_out_equals_full_loss(self, rng) -> None:
        output = torch.from_numpy(rng.normal(size=(1, 1, 6, 6)))
        y = torch.from_numpy(rng.normal(size=(1, 1, 6, 6)))
        masked, masked_grad = masked_loss(output, y, torch.ones_like(y, dtype=torch.bool))
        full, full_grad = full_loss(output, y)
        assert float(masked) == pytest.approx(float(full), rel=1e-14)
        torch.testing.assert_close(masked_grad, full_grad)

    def test_loss_is_differentiable(self, rng) -> None:
        output = torch.from_numpy(rng.normal(size=(1, 1, 4, 4))).requires_grad_(True)
        y = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
        loss, grad = masked_loss(output, y, torch.ones_like(y, dtype=torch.bool))
        loss.backward()
        torch.testing.assert_close(output.grad, grad)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(DimensionError):
            full_loss(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 2, 3))


# ─── Optimizer ───────────────────────────────────────────────────────────────


class TestAdamStep:
    def _param(self, rng) -> torch.nn.Parameter:
        return torch.nn.Parameter(torch.from_numpy(rng.normal(size=(3, 4))))

    def test_first_step_moves_by_learning_rate(self, rng) -> None:
        param = self._param(rng)
        before = param.detach().clone()
        grad = torch.from_numpy(rng.normal(size=(3, 4)))
        grad = grad + 0.5 * torch.sign(grad)
        adam_step([param], [grad], make_optimizer([param], 0.01), 0.01)
        torch.testing.assert_close(before - param.detach(), 0.01 * torch.sign(grad), rtol=1e-5, atol=0)

    def test_zero_learning_rate_freezes(self, rng) -> None:
        param = self._param(rng)
        before = param.detach().clone()
        adam_step([param], [torch.ones(3, 4, dtype=torch.float64)], make_optimizer([param], 0.0), 0.0)
        assert torch.equal(param.detach(), before)

    def test_non_finite_gradient_leaves_parameters(self, rng) -> None:
        first, second = self._param(rng), self._param(rng)
        before = [first.detach().clone(), second.detach().clone()]
        bad = torch.ones(3, 4, dtype=torch.float64)
        bad[1, 2] = math.nan
        optimizer = make_optimizer([first, second], 0.1)
        with pytest.raises(NumericError):
            adam_step([first, second], [torch.ones(3, 4, dtype=torch.float64), bad], optimizer, 0.1)
        assert torch.equal(first.detach(), before[0])
        assert torch.equal(second.detach(), before[1])

    def test_gradient_shape_mismatch(self, rng) -> None:
        param = self._param(rng)
        with pytest.raises(DimensionError):
            adam_step([param], [torch.ones(4, 3)], make_optimizer([param], 0.1), 0.1)


# ─── Log ─────────────────────────────────────────────────────────────────────


class TestTrainLog:
    def test_format(self) -> None:
        log = TrainLog(
            records=[
                EpochRecord(epoch=1, loss=0.5, psnr=None, mu=0.05, seconds=1.23456),
                EpochRecord(epoch=2, loss=0.25, psnr=30.0, mu=None, seconds=0.5),
            ]
        )
        lines = format_train_log(log).splitlines()
        assert lines[0] == "epoch\tloss\tpsnr\tmu\tseconds"
        assert lines[1] == "1\t0.5\t-\t0.050000000000000003\t1.235"
        assert lines[2] == "2\t0.25\t30\t-\t0.500"
        assert log.losses == [0.5, 0.25]

    def test_write(self, tmp_path) -> None:
        log = TrainLog(records=[EpochRecord(epoch=1, loss=1.0)])
        path = write_train_log(log, tmp_path / "logs" / "train_log.tsv")
        assert path.read_text(encoding="utf-8").endswith("1\t1\t-\t-\t0.000\n")


# ─── Training loops ──────────────────────────────────────────────────────────


class TestTrain:
    def test_deterministic(self, shapes_dataset, tiny_unet) -> None:
        config = _config(TrainMode.N2I)
        first, log_a = train(shapes_dataset, config, unet=tiny_unet, unroll=SMALL_UNROLL)
        second, log_b = train(shapes_dataset, config, unet=tiny_unet, unroll=SMALL_UNROLL)
        assert log_a.losses == log_b.losses
        assert [r.psnr for r in log_a.records] == [r.psnr for r in log_b.records]
        assert [r.mu for r in log_a.records] == [r.mu for r in log_b.records]
        for (name, a), (_, b) in zip(first.state_dict().items(), second.state_dict().items()):
            assert torch.equal(a, b), name

    def test_seed_changes_run(self, shapes_dataset, tiny_unet) -> None:
        _, log_a = train(shapes_dataset, _config(TrainMode.N2S), unet=tiny_unet)
        _, log_b = train(shapes_dataset, _config(TrainMode.N2S, seed=12), unet=tiny_unet)
        assert log_a.losses != log_b.losses

    def test_zero_learning_rate_keeps_initialization(self, shapes_dataset, tiny_unet) -> None:
        config = _config(TrainMode.N2I, learning_rate=0.0)
        model, _ = train(shapes_dataset, config, unet=tiny_unet, unroll=SMALL_UNROLL)
        fresh = build_model(TrainMode.N2I, tiny_unet, 1, SMALL_UNROLL, seed=config.seed, mu_init=config.mu_init)
        for (name, a), (_, b) in zip(model.state_dict().items(), fresh.state_dict().items()):
            assert torch.equal(a, b), name

    def test_mu_init_sets_inference_blend(self, shapes_dataset, shapes_16, tiny_unet) -> None:
        config = _config(TrainMode.N2I, learning_rate=0.0, mu_init=4.0)
        model, log = train(shapes_dataset, config, unet=tiny_unet, unroll=SMALL_UNROLL)
        assert log.records[-1].mu == pytest.approx(4.0)

        noisy = corrupt(shapes_16[0], known_gaussian(25.0, seed=3))
        y = images_to_batch([noisy])
        with torch.no_grad():
            _, trace = model.unroll(y, df_variant=DFVariant.FULL_IMAGE, trace=True)
        z_last = trace.z_snapshots[-1]
        output = images_to_batch([denoise(model, noisy)])
        assert torch.allclose(output, (y + 4.0 * z_last) / 5.0, atol=1e-9)
        assert torch.linalg.norm(output - z_last) < torch.linalg.norm(output - y)

    def test_n2i_logs_mu(self, shapes_dataset, tiny_unet) -> None:
        model, log = train(shapes_dataset, _config(TrainMode.N2I), unet=tiny_unet, unroll=SMALL_UNROLL)
        assert isinstance(model, UnrolledInpainter)
        assert len(log) == 2
        assert all(r.mu is not None and r.mu > 0 for r in log.records)
        assert all(r.psnr is not None for r in log.records)

    def test_plain_modes_log_no_mu(self, shapes_dataset, tiny_unet) -> None:
        for mode in (TrainMode.N2T, TrainMode.N2N, TrainMode.N2S):
            _, log = train(shapes_dataset, _config(mode), unet=tiny_unet)
            assert all(r.mu is None for r in log.records), mode

    def test_supervised_loss_decreases(self, shapes_dataset, tiny_unet) -> None:
        config = _config(TrainMode.N2T, epochs=8, learning_rate=3e-3)
        _, log = train(shapes_dataset, config, unet=tiny_unet)
        assert log.losses[-1] < log.losses[0]

    def test_clean_folder_pairs(self, shapes_16, tiny_unet) -> None:
        noisy = Dataset(items=[corrupt(img, known_gaussian(20.0, seed=i)) for i, img in enumerate(shapes_16)])
        clean = Dataset(items=shapes_16)
        _, log = train(noisy, _config(TrainMode.N2T, noise=None), unet=tiny_unet, clean=clean)
        assert all(r.psnr is not None for r in log.records)

    def test_blind_self_supervised_has_no_validation(self, shapes_dataset, tiny_unet) -> None:
        _, log = train(shapes_dataset, _config(TrainMode.N2S, noise=None), unet=tiny_unet)
        assert all(r.psnr is None for r in log.records)

    def test_checkpoint_every(self, shapes_dataset, tiny_unet, tmp_path) -> None:
        config = _config(TrainMode.N2S, epochs=3, checkpoint_every=2)
        train(shapes_dataset, config, unet=tiny_unet, checkpoint_dir=tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0002.ckpt"]


class TestTrainConfigErrors:
    def test_supervised_needs_references(self, shapes_dataset) -> None:
        with pytest.raises(ConfigurationError):
            train(shapes_dataset, _config(TrainMode.N2T, noise=None))

    def test_noise2noise_needs_noise_spec(self, shapes_dataset) -> None:
        with pytest.raises(ConfigurationError):
            train(shapes_dataset, _config(TrainMode.N2N, noise=None))

    def test_clean_count_mismatch(self, shapes_16) -> None:
        with pytest.raises(ConfigurationError):
            train(
                Dataset(items=shapes_16),
                _config(TrainMode.N2T, noise=None),
                clean=Dataset(items=shapes_16[:2]),
            )

    def test_masked_modes_need_density(self) -> None:
        with pytest.raises(ValueError):
            TrainConfig(mode=TrainMode.N2I, mask_density=None)

    def test_negative_learning_rate(self) -> None:
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1e-3)


# ─── Desk-scale run ──────────────────────────────────────────────────────────


@pytest.mark.slow
def test_toy_training_ordering(tiny_unet) -> None:
    clean = synthesize_corpus(20, 32, 32, seed=5)
    unroll = UnrollConfig(iterations=3)
    # the default mu of 0.05 leaves full-image inference at about 95% of y
    mu_init = 4.0

    def trained(mode: TrainMode):
        config = TrainConfig(
            mode=mode,
            epochs=60,
            batch_size=4,
            learning_rate=1e-3,
            mask_density=1 / 25,
            noise=known_gaussian(25.0),
            mu_init=mu_init,
            seed=2,
        )
        return train(Dataset(items=clean), config, unet=tiny_unet, unroll=unroll)[0]

    noisy = [corrupt(img, known_gaussian(25.0, seed=100 + i)) for i, img in enumerate(clean)]

    def score(model) -> float:
        return float(np.mean([psnr(c, denoise(model, n)) for c, n in zip(clean, noisy)]))

    untrained = build_model(TrainMode.N2I, tiny_unet, 1, unroll, seed=2)
    before = float(np.mean([psnr(c, n) for c, n in zip(clean, noisy)]))
    n2i, n2t = score(trained(TrainMode.N2I)), score(trained(TrainMode.N2T))
    assert n2i >= before + 3.0
    assert n2t >= n2i >= score(untrained)
