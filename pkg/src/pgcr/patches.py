"""Patch decomposition, fixed positional tables and random token masking.

Flattening order inside a patch is channel-major: all red values of the
patch in row-major order, then green, then blue. Patches are numbered in
raster order over the grid. Both conventions are part of the checkpoint
contract and must not change.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ShapeError


@dataclass(frozen=True)
class PatchGrid:
    image_size: int
    patch_size: int
    channels: int = 3

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0 or self.channels <= 0:
            raise ShapeError(f"PatchGrid: sizes must be positive, got {self}")
        if self.image_size % self.patch_size:
            raise ShapeError(
                f"PatchGrid: image size {self.image_size} is not divisible by patch size {self.patch_size}"
            )

    @property
    def side(self) -> int:
        """Patches per row (and per column)."""
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.side ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.image_size, self.image_size)

    def describe(self) -> str:
        return f"{self.image_size}x{self.image_size}/{self.patch_size} (C={self.channels})"


PAPER_GRID = PatchGrid(224, 16, 3)
TOY_GRID = PatchGrid(64, 8, 3)


def _check_image(shape: tuple[int, ...], grid: PatchGrid) -> tuple[int, ...]:
    if len(shape) < 3 or tuple(shape[-3:]) != grid.image_shape:
        raise ShapeError(f"image of shape {tuple(shape)} does not match grid {grid.describe()}")
    return tuple(shape[:-3])


def patchify(image, grid: PatchGrid):
    """``[..., C, S, S]`` -> ``[..., P, patch_dim]``. Accepts arrays or tensors."""
    lead = _check_image(image.shape, grid)
    g, p, c = grid.side, grid.patch_size, grid.channels
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n + 3, n, n + 2, n + 4)
    if isinstance(image, Tensor):
        x = ag.reshape(image, lead + (c, g, p, g, p))
        x = ag.permute(x, axes)
        return ag.reshape(x, lead + (g * g, grid.patch_dim))
    x = np.asarray(image).reshape(lead + (c, g, p, g, p)).transpose(axes)
    return x.reshape(lead + (g * g, grid.patch_dim))


def unpatchify(patches, grid: PatchGrid):
    """Exact inverse of :func:`patchify`."""
    shape = tuple(patches.shape)
    if len(shape) < 2 or shape[-2:] != (grid.num_patches, grid.patch_dim):
        raise ShapeError(
            f"patches of shape {shape} do not match grid {grid.describe()} "
            f"(expected [..., {grid.num_patches}, {grid.patch_dim}])"
        )
    lead = shape[:-2]
    g, p, c = grid.side, grid.patch_size, grid.channels
    n = len(lead)
    # [..., gy, gx, c, py, px] -> [..., c, gy, py, gx, px]
    axes = tuple(range(n)) + (n + 2, n, n + 3, n + 1, n + 4)
    if isinstance(patches, Tensor):
        x = ag.reshape(patches, lead + (g, g, c, p, p))
        x = ag.permute(x, axes)
        return ag.reshape(x, lead + grid.image_shape)
    x = np.asarray(patches).reshape(lead + (g, g, c, p, p)).transpose(axes)
    return x.reshape(lead + grid.image_shape)


@dataclass(frozen=True)
class MaskPlan:
    """Which patches the encoder sees.

    ``keep_indices`` are in shuffled order (the order the encoder receives
    them); ``restore_order`` maps ``[visible..., masked...]`` back to raster
    order; ``mask`` is 1 for hidden patches.
    """

    keep_indices: np.ndarray
    mask: np.ndarray
    restore_order: np.ndarray
    mask_ratio: float = field(default=0.0)

    @property
    def num_patches(self) -> int:
        return int(self.mask.shape[-1])

    @property
    def num_visible(self) -> int:
        return int(self.keep_indices.shape[-1])

    @property
    def num_masked(self) -> int:
        return self.num_patches - self.num_visible

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def num_visible(num_patches: int, mask_ratio: float) -> int:
    if not 0.0 <= mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in [0, 1), got {mask_ratio}")
    return max(1, int(round((1.0 - mask_ratio) * num_patches)))


def make_mask_plan(num_patches: int, mask_ratio: float, seed: int) -> MaskPlan:
    """Uniform random permutation prefix, fully determined by ``seed``."""
    keep = num_visible(num_patches, mask_ratio)
    if keep == num_patches:
        shuffle = np.arange(num_patches)
    else:
        shuffle = np.argsort(np.random.default_rng(seed).random(num_patches), kind="stable")
    restore = np.argsort(shuffle, kind="stable")
    mask = np.ones(num_patches, dtype=np.float32)
    mask[shuffle[:keep]] = 0.0
    return MaskPlan(shuffle[:keep].copy(), mask, restore, float(mask_ratio))


def stack_plans(plans) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a plan or a list of plans into ``(keep, restore, mask)`` index arrays."""
    if isinstance(plans, MaskPlan):
        return plans.keep_indices, plans.restore_order, plans.mask
    keeps = {p.num_visible for p in plans}
    if len(keeps) != 1:
        raise ShapeError(f"mask plans in a batch must keep the same number of patches, got {sorted(keeps)}")
    return (
        np.stack([p.keep_indices for p in plans]),
        np.stack([p.restore_order for p in plans]),
        np.stack([p.mask for p in plans]),
    )


def random_masking(tokens, mask_ratio: float, rng_seed: int):
    """Keep a random subset of ``tokens`` rows (``[P, d]`` or ``[B, P, d]``).

    Returns ``(visible, plan)``; for batched input ``plan`` is a list with one
    plan per sample, seeded ``rng_seed + b``.
    """
    shape = tuple(tokens.shape)
    if len(shape) not in (2, 3):
        raise ShapeError(f"random_masking expects [P, d] or [B, P, d] tokens, got {shape}")
    num = shape[-2]
    if len(shape) == 2:
        plan = make_mask_plan(num, mask_ratio, rng_seed)
    else:
        plan = [make_mask_plan(num, mask_ratio, rng_seed + b) for b in range(shape[0])]
    keep = stack_plans(plan)[0]
    if isinstance(tokens, Tensor):
        visible = ag.gather_rows(tokens, keep)
    else:
        visible = np.take_along_axis(np.asarray(tokens), np.broadcast_to(keep, shape[:-2] + keep.shape[-1:])[..., None], axis=-2)
    return visible, plan


def _sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000 ** omega
    angles = np.outer(positions.reshape(-1), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_positional_embedding(grid: PatchGrid, dim: int) -> np.ndarray:
    """Fixed 2-D sine-cosine table of shape ``[P, dim]`` in raster order.

    The first half of each row encodes the column index, the second half the
    row index; each half is ``[sin..., cos...]``.
    """
    if dim <= 0 or dim % 4:
        raise ShapeError(f"positional embedding dim must be a positive multiple of 4, got {dim}")
    g = grid.side
    rows, cols = np.meshgrid(np.arange(g, dtype=np.float64), np.arange(g, dtype=np.float64), indexing="ij")
    emb = np.concatenate([_sincos_1d(dim // 2, cols), _sincos_1d(dim // 2, rows)], axis=1)
    return emb.astype(np.float32)
