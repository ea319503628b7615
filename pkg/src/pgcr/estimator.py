"""scikit-learn style wrappers around pretraining and adversarial fine-tuning."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import checkpoint
from .config import RunConfig
from .data import ImagePair, center_crop_image, normalize
from .discriminator import init_discriminator
from .exceptions import ConfigError
from .generator import GeneratorModel, encode, init_generator
from .metrics import psnr
from .patches import patchify
from .training import TrainConfig, finetune, predict_images, pretrain
from .validation import check_images, check_pairs


def _run_config(preset: str, **overrides) -> RunConfig:
    return RunConfig.from_mapping(overrides, RunConfig.from_preset(preset))


def _crop_all(images: np.ndarray, size: int) -> np.ndarray:
    if images.shape[1:3] == (size, size):
        return images
    return np.stack([center_crop_image(img, size) for img in images])


class MAEPretrainer(BaseEstimator, TransformerMixin):
    """Masked-reconstruction pretraining of the generator on clean images.

    ``transform`` returns encoder latents ``[N, P, enc_dim]`` with every patch
    visible.
    """

    def __init__(self, preset="toy", epochs=10, mask_ratio=0.75, lr=1e-3, batch_size=1, random_state=0):
        self.preset = preset
        self.epochs = epochs
        self.mask_ratio = mask_ratio
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def _config(self) -> RunConfig:
        return _run_config(
            self.preset,
            pretrain_epochs=self.epochs,
            mask_ratio=self.mask_ratio,
            pretrain_lr=self.lr,
            pretrain_batch_size=self.batch_size,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        cfg = self._config()
        X = check_images(X, min_size=cfg.image_size)
        gen = init_generator(cfg.generator_config(), cfg.seed)
        self.loss_history_ = pretrain(gen, list(X), cfg.pretrain_epochs, cfg.train_config())
        self.generator_ = gen
        return self

    def _check_fitted(self):
        if not hasattr(self, "generator_"):
            raise NotFittedError("MAEPretrainer is not fitted yet; call fit first")

    def transform(self, X):
        self._check_fitted()
        size = self.generator_.grid.image_size
        X = _crop_all(check_images(X, min_size=size), size)
        return encode(self.generator_, patchify(normalize(X), self.generator_.grid)).data

    def save(self, path) -> None:
        self._check_fitted()
        checkpoint.save(self.generator_, path, {"mask_ratio": self.mask_ratio, "stage": "pretrain"})


class CloudRemovalGAN(BaseEstimator):
    """Generator fine-tuned against a per-patch discriminator.

    ``init`` is ``None`` (random weights), a fitted :class:`MAEPretrainer`,
    or a generator checkpoint path. Every ``val_stride``-th training pair is
    held out for validation and model selection.
    """

    def __init__(
        self,
        preset="toy",
        init=None,
        epochs=30,
        lambda_adv=TrainConfig.lambda_adv,
        base_lr=TrainConfig.base_lr,
        llrd_decay=TrainConfig.llrd_decay,
        disc_lr=TrainConfig.disc_lr,
        batch_size=TrainConfig.batch_size,
        val_stride=5,
        random_state=0,
    ):
        self.preset = preset
        self.init = init
        self.epochs = epochs
        self.lambda_adv = lambda_adv
        self.base_lr = base_lr
        self.llrd_decay = llrd_decay
        self.disc_lr = disc_lr
        self.batch_size = batch_size
        self.val_stride = val_stride
        self.random_state = random_state

    def _config(self) -> RunConfig:
        return _run_config(
            self.preset,
            epochs=self.epochs,
            lambda_adv=self.lambda_adv,
            base_lr=self.base_lr,
            llrd_decay=self.llrd_decay,
            disc_lr=self.disc_lr,
            batch_size=self.batch_size,
            seed=self.random_state,
        )

    def _initial_generator(self, cfg: RunConfig) -> GeneratorModel:
        if self.init is None:
            return init_generator(cfg.generator_config(), cfg.seed)
        if isinstance(self.init, MAEPretrainer):
            self.init._check_fitted()
            gen = self.init.generator_.copy()
        else:
            gen = checkpoint.load(self.init, kind="generator")
        if gen.grid != cfg.grid:
            raise ConfigError(f"init generator grid {gen.grid.describe()} does not match {cfg.grid.describe()}")
        return gen

    def fit(self, X, y):
        """``X`` cloudy images, ``y`` clean images, both ``[N, H, W, 3]``."""
        cfg = self._config()
        X, y = check_pairs(X, y, min_size=cfg.image_size)
        if int(self.val_stride) < 2:
            raise ValueError(f"val_stride must be >= 2, got {self.val_stride}")
        pairs = [ImagePair(c, t, None, f"{i:05d}") for i, (c, t) in enumerate(zip(X, y))]
        val = pairs[:: self.val_stride]
        train = [p for i, p in enumerate(pairs) if i % self.val_stride]
        gen = self._initial_generator(cfg)
        disc = init_discriminator(cfg.discriminator_config(), cfg.seed + 1)
        result = finetune(gen, disc, train, val, cfg.epochs, cfg.train_config())
        self.generator_ = result.best_generator
        self.discriminator_ = result.discriminator
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def _check_fitted(self):
        if not hasattr(self, "generator_"):
            raise NotFittedError("CloudRemovalGAN is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        """Cloud-free uint8 images, center-cropped to the model grid."""
        self._check_fitted()
        size = self.generator_.grid.image_size
        X = _crop_all(check_images(X, min_size=size), size)
        return predict_images(self.generator_, X)

    def score(self, X, y) -> float:
        """Mean PSNR in dB over images with finite PSNR (higher is better)."""
        self._check_fitted()
        size = self.generator_.grid.image_size
        X, y = check_pairs(X, y, min_size=size)
        values = [psnr(p, t) for p, t in zip(self.predict(X), _crop_all(y, size))]
        finite = [v for v in values if math.isfinite(v)]
        return float(np.mean(finite)) if finite else math.inf

    def save(self, path) -> None:
        self._check_fitted()
        checkpoint.save(self.generator_, path, {"stage": "finetune", "best_epoch": self.best_epoch_})

