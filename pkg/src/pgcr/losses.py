"""Pixel and adversarial objectives.

All logarithms are natural; discriminator scores are clamped to
``[eps, 1 - eps]`` before taking logs so every loss stays finite.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ShapeError

EPS = 1e-7
DEFAULT_LAMBDA_ADV = 0.1


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over every channel-pixel."""
    pred, target = _tensor(pred), _tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return ag.mean(diff * diff)


def masked_mse_loss(pred_patches, target_patches, mask) -> Tensor:
    """MSE restricted to patches with ``mask == 1``.

    ``mask`` is ``[..., P]``; with no masked patch at all this falls back to
    the plain MSE over everything.
    """
    pred, target = _tensor(pred_patches), _tensor(target_patches)
    if pred.shape != target.shape:
        raise ShapeError(f"masked_mse_loss: prediction {pred.shape} and target {target.shape} differ")
    mask = np.asarray(mask, dtype=pred.dtype)
    mask = np.broadcast_to(mask, pred.shape[:-1])
    total = float(mask.sum())
    if total == 0:
        return mse_loss(pred, target)
    diff = pred - target
    per_patch = ag.mean(diff * diff, axis=-1)
    return ag.tsum(per_patch * Tensor(mask, dtype=pred.dtype)) * (1.0 / total)


def _log_clamped(x: Tensor, eps: float) -> Tensor:
    return ag.log(ag.clip(x, eps, 1.0 - eps))


def d_loss(real_scores, fake_scores, eps: float = EPS) -> Tensor:
    """``-mean(log x + log(1 - x_hat))`` over patches (and batch)."""
    real, fake = _tensor(real_scores), _tensor(fake_scores)
    if real.shape != fake.shape:
        raise ShapeError(f"d_loss: real scores {real.shape} and fake scores {fake.shape} differ")
    return -ag.mean(_log_clamped(real, eps) + _log_clamped(1.0 - fake, eps))


def g_adv_loss(fake_scores, eps: float = EPS, expected_len: int | None = None) -> Tensor:
    """``-mean(log x_hat)``: small when the discriminator calls fakes real."""
    fake = _tensor(fake_scores)
    if expected_len is not None and fake.shape[-1] != expected_len:
        raise ShapeError(f"g_adv_loss: expected {expected_len} patch scores, got {fake.shape[-1]}")
    return -ag.mean(_log_clamped(fake, eps))


def combined_generator_loss(mse, g_adv, lambda_adv: float = DEFAULT_LAMBDA_ADV):
    if lambda_adv < 0:
        raise ValueError(f"lambda_adv must be non-negative, got {lambda_adv}")
    if lambda_adv == 0:
        return mse
    return mse + g_adv * lambda_adv


@dataclass(frozen=True)
class LossReport:
    mse: float
    g_adv: float
    d_loss: float
    gan_total: float
    g_total: float
    lambda_adv: float

    @classmethod
    def build(cls, mse: float, g_adv: float, d_loss_value: float, lambda_adv: float) -> "LossReport":
        report = cls(
            mse=float(mse),
            g_adv=float(g_adv),
            d_loss=float(d_loss_value),
            gan_total=float(d_loss_value) + float(g_adv),
            g_total=float(mse) + lambda_adv * float(g_adv),
            lambda_adv=float(lambda_adv),
        )
        if not all(math.isfinite(v) for v in asdict(report).values()):
            raise FloatingPointError(f"non-finite loss: {report}")
        return report

    def log_row(self, step: int) -> dict:
        return {"step": step, "mse": self.mse, "g_adv": self.g_adv, "d_loss": self.d_loss, "g_total": self.g_total}
