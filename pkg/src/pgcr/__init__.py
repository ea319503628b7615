"""Patch-GAN transfer learning for cloud removal on a small numpy autograd."""
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .config import RunConfig
from .data import DatasetSplit, ImagePair, gen_synthetic_dataset, load_dataset, load_rice
from .discriminator import DiscriminatorConfig, DiscriminatorModel, discriminate, init_discriminator
from .estimator import CloudRemovalGAN, MAEPretrainer
from .exceptions import CheckpointError, ConfigError, DataError, MissingGradientError, PGCRError, ShapeError
from .generator import GeneratorConfig, GeneratorModel, generate, init_generator, reconstruct
from .losses import combined_generator_loss, d_loss, g_adv_loss, mse_loss
from .metrics import MetricReport, psnr, ssim
from .optim import adam_step, layer_wise_lr, llrd_groups
from .patches import PAPER_GRID, TOY_GRID, PatchGrid, patchify, unpatchify
from .training import TrainConfig, evaluate_pairs, finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "CloudRemovalGAN",
    "ConfigError",
    "DataError",
    "DatasetSplit",
    "DiscriminatorConfig",
    "DiscriminatorModel",
    "GeneratorConfig",
    "GeneratorModel",
    "ImagePair",
    "MAEPretrainer",
    "MetricReport",
    "MissingGradientError",
    "PAPER_GRID",
    "PGCRError",
    "PatchGrid",
    "RunConfig",
    "ShapeError",
    "TOY_GRID",
    "TrainConfig",
    "adam_step",
    "combined_generator_loss",
    "d_loss",
    "discriminate",
    "evaluate_pairs",
    "finetune",
    "g_adv_loss",
    "gen_synthetic_dataset",
    "generate",
    "init_discriminator",
    "init_generator",
    "layer_wise_lr",
    "llrd_groups",
    "load_checkpoint",
    "load_dataset",
    "load_rice",
    "mse_loss",
    "pretrain",
    "psnr",
    "reconstruct",
    "save_checkpoint",
    "ssim",
    "patchify",
    "unpatchify",
]
