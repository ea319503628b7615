"""Masked-reconstruction pretraining and adversarial fine-tuning loops."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .data import ImagePair, center_crop, denormalize, normalize, random_crop
from .discriminator import DiscriminatorModel, discriminate
from .exceptions import DataError, ShapeError
from .generator import GeneratorModel, generate, reconstruct
from .losses import LossReport, combined_generator_loss, d_loss, g_adv_loss, masked_mse_loss, mse_loss
from .metrics import MetricReport
from .optim import TrainState, adam_step, llrd_groups, single_group
from .patches import patchify, stack_plans

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "mse", "g_adv", "d_loss", "val_psnr", "val_ssim"]
TRAIN_LOG_COLUMNS = ["step", "mse", "g_adv", "d_loss", "g_total"]
PRETRAIN_LOG_COLUMNS = ["epoch", "loss"]


@dataclass
class TrainConfig:
    lambda_adv: float = 0.1
    base_lr: float = 1e-3
    llrd_decay: float = 0.75
    disc_lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    mask_ratio: float = 0.75
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 1


def generator_state(gen: GeneratorModel, config: TrainConfig) -> TrainState:
    state = TrainState(rng_seed=config.seed, lambda_adv=config.lambda_adv)
    state.groups = llrd_groups(gen, config.base_lr, config.llrd_decay)
    return state


def discriminator_state(disc: DiscriminatorModel, config: TrainConfig) -> TrainState:
    # trained from scratch, so no layer-wise decay
    state = TrainState(rng_seed=config.seed, lambda_adv=config.lambda_adv)
    state.groups = single_group(disc, config.disc_lr, "discriminator")
    return state


def stack_batch(batch, grid) -> tuple[np.ndarray, np.ndarray]:
    """ImagePairs (already grid-sized) or a ``(cloudy, clean)`` float array pair."""
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        cloudy, clean = batch
    else:
        pairs = [p.load() for p in batch]
        if not pairs:
            raise DataError("empty batch")
        cloudy = normalize(np.stack([p.cloudy for p in pairs]))
        clean = normalize(np.stack([p.clean for p in pairs]))
    if cloudy.shape != clean.shape or cloudy.shape[-3:] != grid.image_shape:
        raise ShapeError(f"batch of shape {cloudy.shape} / {clean.shape} does not match grid {grid.describe()}")
    return cloudy, clean


def discriminator_update(disc: DiscriminatorModel, fake: np.ndarray, clean: np.ndarray, state: TrainState) -> float:
    """One Adam step on the discriminator loss; ``fake`` is a plain array, so
    nothing flows back into the generator."""
    disc.zero_grad()
    loss = d_loss(discriminate(disc, clean), discriminate(disc, fake))
    ag.backward(loss)
    adam_step(state, state.groups)
    return loss.item()


def generator_update(
    gen: GeneratorModel,
    disc: DiscriminatorModel,
    cloudy: np.ndarray,
    clean: np.ndarray,
    state: TrainState,
    fake: ag.Tensor | None = None,
) -> tuple[float, float]:
    """One Adam step on ``mse + lambda_adv * g_adv`` with discriminator weights frozen."""
    if fake is None:
        gen.zero_grad()
        fake = generate(gen, cloudy, training=True)
    with ag.frozen(disc.parameters()):
        mse = mse_loss(fake, clean)
        adv = g_adv_loss(discriminate(disc, fake), expected_len=disc.grid.num_patches)
        ag.backward(combined_generator_loss(mse, adv, state.lambda_adv))
    adam_step(state, state.groups)
    return mse.item(), adv.item()


def gan_train_step(
    gen: GeneratorModel,
    disc: DiscriminatorModel,
    batch,
    gen_state: TrainState,
    disc_state: TrainState,
    update_discriminator: bool = True,
) -> LossReport:
    """Discriminator step on (clean, generated), then generator step on fresh scores."""
    cloudy, clean = stack_batch(batch, gen.grid)
    gen.zero_grad()
    fake = generate(gen, cloudy, training=True)
    if update_discriminator:
        dl = discriminator_update(disc, fake.data, clean, disc_state)
    else:
        dl = d_loss(discriminate(disc, clean), discriminate(disc, fake.data)).item()
    mse, adv = generator_update(gen, disc, cloudy, clean, gen_state, fake=fake)
    return LossReport.build(mse, adv, dl, gen_state.lambda_adv)


def _clean_images(items) -> list[np.ndarray]:
    out = []
    for item in items:
        out.append(item.load().clean if hasattr(item, "load") else np.asarray(item))
    return out


def _random_crop_image(img: np.ndarray, size: int, seed) -> np.ndarray:
    pair = ImagePair(img, img, None, "")
    return random_crop(pair, size, seed).clean


def pretrain_epoch(
    gen: GeneratorModel,
    images: Sequence,
    mask_ratio: float,
    state: TrainState,
    epoch: int = 0,
    batch_size: int = 1,
) -> float:
    """Masked reconstruction over every image once; returns the mean loss.

    The loss covers masked patches only (full image when nothing is masked).
    """
    if not 0.0 <= mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in [0, 1), got {mask_ratio}")
    images = _clean_images(images)
    if not images:
        raise DataError("pretraining needs at least one image")
    if not state.groups:
        raise ValueError("pretrain_epoch: TrainState has no parameter groups")
    size = gen.grid.image_size
    rng = np.random.default_rng([state.rng_seed, epoch])
    order = rng.permutation(len(images))
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        crops = [_random_crop_image(images[i], size, rng.integers(2**31)) for i in idx]
        x = normalize(np.stack(crops))
        gen.zero_grad()
        pred, plan = reconstruct(gen, x, mask_ratio, int(rng.integers(2**31)))
        target = patchify(x, gen.grid)
        loss = masked_mse_loss(pred, target, stack_plans(plan)[2])
        ag.backward(loss)
        adam_step(state, state.groups)
        losses.append(loss.item())
    return float(np.mean(losses))


def pretrain(
    gen: GeneratorModel,
    images: Sequence,
    epochs: int,
    config: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> list[float]:
    state = TrainState(rng_seed=config.seed)
    state.groups = single_group(gen, config.pretrain_lr, "generator")
    losses = []
    for epoch in range(epochs):
        loss = pretrain_epoch(gen, images, config.mask_ratio, state, epoch, config.pretrain_batch_size)
        losses.append(loss)
        logger.info("pretrain epoch %d loss %.6f", epoch + 1, loss)
        if on_epoch is not None:
            on_epoch(epoch + 1, loss)
    return losses


def predict_images(gen: GeneratorModel, cloudy_u8: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """uint8 ``[N, S, S, 3]`` cloudy crops -> uint8 predictions."""
    outs = []
    for start in range(0, len(cloudy_u8), batch_size):
        x = normalize(cloudy_u8[start:start + batch_size])
        outs.append(denormalize(generate(gen, x)))
    return np.concatenate(outs) if outs else np.zeros((0,) + cloudy_u8.shape[1:], np.uint8)


def evaluate_pairs(gen: GeneratorModel | None, pairs: Sequence, batch_size: int = 16):
    """Center-crop each pair to the grid and score it.

    Returns ``(model_report, baseline_report, mean_mse)``; the baseline scores
    the untouched cloudy input and ``mean_mse`` is the [0, 1]-domain MSE of the
    model output. With ``gen=None`` only the baseline is filled.
    """
    model_report, baseline = MetricReport(), MetricReport()
    mses = []
    size = gen.grid.image_size if gen is not None else None
    for start in range(0, len(pairs), batch_size):
        chunk = [p.load() for p in pairs[start:start + batch_size]]
        if size is not None:
            chunk = [center_crop(p, size) for p in chunk]
        cloudy = np.stack([p.cloudy for p in chunk])
        clean = np.stack([p.clean for p in chunk])
        for p in chunk:
            baseline.add(p.id, p.cloudy, p.clean)
        if gen is None:
            continue
        out = generate(gen, normalize(cloudy)).data
        target = normalize(clean)
        mses.extend(((out - target) ** 2).reshape(len(chunk), -1).mean(axis=1).tolist())
        for p, pred in zip(chunk, denormalize(out)):
            model_report.add(p.id, pred, p.clean)
    return model_report, baseline, (float(np.mean(mses)) if mses else math.nan)


@dataclass
class FinetuneResult:
    best_generator: GeneratorModel
    discriminator: DiscriminatorModel
    best_epoch: int = 0
    best_val_psnr: float = -math.inf
    history: list[dict] = field(default_factory=list)
    train_log: list[dict] = field(default_factory=list)


def finetune(
    gen: GeneratorModel,
    disc: DiscriminatorModel,
    train: Sequence,
    val: Sequence,
    epochs: int,
    config: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> FinetuneResult:
    """Adversarial fine-tuning with per-epoch validation.

    ``gen`` and ``disc`` are trained in place. The returned result holds a
    copy of the generator from the epoch with the highest validation PSNR.
    """
    if not train or not val:
        raise DataError(f"fine-tuning needs non-empty train and val splits (got {len(train)}/{len(val)})")
    gen_state = generator_state(gen, config)
    disc_state = discriminator_state(disc, config)
    result = FinetuneResult(best_generator=gen.copy(), discriminator=disc)
    size = gen.grid.image_size
    step = 0
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train))
        reports = []
        for start in range(0, len(order), config.batch_size):
            batch = [random_crop(train[i].load(), size, rng.integers(2**31)) for i in order[start:start + config.batch_size]]
            report = gan_train_step(gen, disc, batch, gen_state, disc_state)
            step += 1
            reports.append(report)
            result.train_log.append(report.log_row(step))
        val_report, _, val_mse = evaluate_pairs(gen, val)
        row = {
            "epoch": epoch,
            "mse": float(np.mean([r.mse for r in reports])),
            "g_adv": float(np.mean([r.g_adv for r in reports])),
            "d_loss": float(np.mean([r.d_loss for r in reports])),
            "val_psnr": val_report.mean_psnr,
            "val_ssim": val_report.mean_ssim,
            "val_mse": val_mse,
        }
        result.history.append(row)
        if row["val_psnr"] > result.best_val_psnr or not result.history[:-1]:
            result.best_val_psnr = row["val_psnr"]
            result.best_epoch = epoch
            result.best_generator = gen.copy()
        logger.info(
            "epoch %d mse %.5f g_adv %.4f d_loss %.4f val_psnr %.3f val_ssim %.4f",
            epoch, row["mse"], row["g_adv"], row["d_loss"], row["val_psnr"], row["val_ssim"],
        )
        if on_epoch is not None:
            on_epoch(row)
    return result
