"""Paired cloudy/clean datasets: RICE directory trees and synthetic imagery.

On-disk layout (shared by RICE and the synthetic generator)::

    <root>/cloud/<id>.png    cloudy input
    <root>/label/<id>.png    cloud-free reference
    <root>/mask/<id>.png     optional cloud mask (RICE2-style)
    <root>/manifest.json     split membership (synthetic sets only)
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataError, ShapeError
from .fileio import IMAGE_SUFFIXES, image_size, read_mask, read_rgb, write_image, write_json

RICE_TRAIN_COUNT = {"RICE1": 400, "RICE2": 588}
VAL_STRIDE = 5
TOY_PATCH = 8


@dataclass
class ImagePair:
    cloudy: np.ndarray
    clean: np.ndarray
    mask: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        if self.cloudy.shape != self.clean.shape or self.cloudy.ndim != 3 or self.cloudy.shape[-1] != 3:
            raise ShapeError(
                f"pair {self.id!r}: cloudy {self.cloudy.shape} and clean {self.clean.shape} must be equal H x W x 3"
            )
        if self.mask is not None and self.mask.shape != self.clean.shape[:2]:
            raise ShapeError(f"pair {self.id!r}: mask {self.mask.shape} does not match image {self.clean.shape[:2]}")

    @property
    def size(self) -> tuple[int, int]:
        return self.clean.shape[0], self.clean.shape[1]

    def load(self) -> "ImagePair":
        return self


@dataclass(frozen=True)
class PairRef:
    """Lazy reference to a pair stored on disk."""

    id: str
    cloudy_path: Path
    clean_path: Path
    mask_path: Path | None = None

    def load(self) -> ImagePair:
        mask = read_mask(self.mask_path) if self.mask_path is not None else None
        return ImagePair(read_rgb(self.cloudy_path), read_rgb(self.clean_path), mask, self.id)


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def membership(self) -> dict[str, list[str]]:
        return {name: [p.id for p in getattr(self, name)] for name in ("train", "val", "test")}


def split_pool(items: Sequence, pool_size: int) -> tuple[list, list, list]:
    """Head ``pool_size`` items -> train pool, tail -> test.

    Validation takes every 5th pool item starting at 0, capped at
    ``pool_size // 5`` so the carve-out is exactly one fifth (rounded down).
    """
    items = list(items)
    pool, test = items[:pool_size], items[pool_size:]
    n_val = len(pool) // VAL_STRIDE
    val_idx = set(range(0, n_val * VAL_STRIDE, VAL_STRIDE))
    train = [p for i, p in enumerate(pool) if i not in val_idx]
    val = [p for i, p in enumerate(pool) if i in val_idx]
    return train, val, test


# -- RICE loading --------------------------------------------------------------

def _index_images(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        return {}
    out: dict[str, Path] = {}
    for path in sorted(folder.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES:
            if path.stem in out:
                raise DataError(f"duplicate image id {path.stem!r} in {folder}")
            out[path.stem] = path
    return out


def scan_pairs(root, require_mask: bool = False, check_sizes: bool = True) -> list[PairRef]:
    root = Path(root)
    cloud_dir, label_dir, mask_dir = root / "cloud", root / "label", root / "mask"
    if not cloud_dir.is_dir() or not label_dir.is_dir():
        raise DataError(f"{root} must contain cloud/ and label/ directories")
    clouds, labels = _index_images(cloud_dir), _index_images(label_dir)
    masks = _index_images(mask_dir)
    if require_mask and not mask_dir.is_dir():
        raise DataError(f"{root} has no mask/ directory")
    for orphan in sorted(set(clouds) ^ set(labels)):
        where = "cloud/" if orphan in clouds else "label/"
        raise DataError(f"orphan image {orphan!r} in {where} has no counterpart")
    if mask_dir.is_dir():
        missing = sorted(set(clouds) - set(masks))
        if missing:
            raise DataError(f"orphan image {missing[0]!r} has no mask in mask/")
    refs = []
    for stem in sorted(clouds):
        ref = PairRef(stem, clouds[stem], labels[stem], masks.get(stem) if mask_dir.is_dir() else None)
        if check_sizes:
            sizes = {image_size(ref.cloudy_path), image_size(ref.clean_path)}
            if ref.mask_path is not None:
                sizes.add(image_size(ref.mask_path))
            if len(sizes) != 1:
                raise DataError(f"pair {stem!r} has mismatched dimensions {sorted(sizes)}")
        refs.append(ref)
    return refs


def load_rice(root, variant: str = "RICE1") -> DatasetSplit:
    variant = variant.upper()
    if variant not in RICE_TRAIN_COUNT:
        raise DataError(f"unknown RICE variant {variant!r}; expected RICE1 or RICE2")
    refs = scan_pairs(root, require_mask=variant == "RICE2")
    pool = RICE_TRAIN_COUNT[variant]
    if len(refs) <= pool:
        raise DataError(f"{variant} needs more than {pool} pairs, found {len(refs)} in {root}")
    return DatasetSplit(*split_pool(refs, pool))


def load_dataset(root, variant: str = "auto") -> DatasetSplit:
    """Synthetic sets via their manifest; otherwise a RICE tree."""
    root = Path(root)
    manifest = root / "manifest.json"
    if manifest.exists():
        listing = json.loads(manifest.read_text())
        refs = {r.id: r for r in scan_pairs(root)}
        try:
            parts = [[refs[i] for i in listing[name]] for name in ("train", "val", "test")]
        except KeyError as exc:
            raise DataError(f"manifest lists {exc} which is not on disk") from exc
        return DatasetSplit(*parts, seed=int(listing.get("seed", 0)))
    if variant == "auto":
        variant = "RICE2" if (root / "mask").is_dir() else "RICE1"
    return load_rice(root, variant)


# -- synthetic imagery ----------------------------------------------------------

@dataclass(frozen=True)
class CloudParams:
    coverage: float = 0.4
    octaves: int = 4
    softness: float = 0.08
    brightness: float = 1.0
    seed: int = 0


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def value_noise(size: int, cell: float, rng: np.random.Generator) -> np.ndarray:
    """Random lattice values, smoothstep-interpolated, on a ``size x size`` grid."""
    cell = max(float(cell), 1.0)
    n = int(np.ceil(size / cell)) + 2
    lattice = rng.random((n, n))
    coords = np.arange(size) / cell + rng.random(2)[:, None]
    i0 = np.floor(coords).astype(int)
    f = _smoothstep(coords - i0)
    yi, xi = i0[0][:, None], i0[1][None, :]
    fy, fx = f[0][:, None], f[1][None, :]
    top = lattice[yi, xi] * (1 - fx) + lattice[yi, xi + 1] * fx
    bottom = lattice[yi + 1, xi] * (1 - fx) + lattice[yi + 1, xi + 1] * fx
    return top * (1 - fy) + bottom * fy


def fractal_noise(size: int, base_cell: float, octaves: int, rng: np.random.Generator, persistence: float = 0.5) -> np.ndarray:
    """Sum of value-noise octaves (halving cell size each time), scaled to [0, 1]."""
    total = np.zeros((size, size))
    amp, norm, cell = 1.0, 0.0, base_cell
    for _ in range(max(1, octaves)):
        total += amp * value_noise(size, cell, rng)
        norm += amp
        amp *= persistence
        cell /= 2.0
    total /= norm
    lo, hi = total.min(), total.max()
    return (total - lo) / (hi - lo) if hi > lo else np.zeros_like(total)


# water, vegetation, soil, bare/urban
PALETTE = np.array([[38, 72, 118], [52, 112, 56], [146, 118, 78], [176, 172, 160]], dtype=np.float64)
BAND_EDGES = (0.38, 0.52, 0.68)
BAND_BLEND = 0.04
DETAIL_GAIN = 0.3


def land_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural land-cover image, uint8 ``size x size x 3``."""
    elevation = fractal_noise(size, size / 2.5, 4, rng)
    detail = fractal_noise(size, size / 10, 3, rng)
    color = np.broadcast_to(PALETTE[0], (size, size, 3)).copy()
    for k, edge in enumerate(BAND_EDGES, start=1):
        w = _smoothstep((elevation - edge) / BAND_BLEND + 0.5)[..., None]
        color = color * (1 - w) + PALETTE[k] * w
    color *= (1.0 - DETAIL_GAIN / 2 + DETAIL_GAIN * detail)[..., None]
    return np.clip(np.rint(color), 0, 255).astype(np.uint8)


def cloud_alpha(size: int, params: CloudParams, rng: np.random.Generator) -> np.ndarray:
    """Cloud opacity in [0, 1] whose area above 0.5 is ``coverage``."""
    if params.coverage <= 0:
        return np.zeros((size, size))
    if params.coverage >= 1:
        return np.ones((size, size))
    noise = fractal_noise(size, size / 2, params.octaves, rng)
    threshold = np.quantile(noise, 1.0 - params.coverage)
    if params.softness <= 0:
        return (noise > threshold).astype(np.float64)
    return _smoothstep((noise - threshold) / params.softness + 0.5)


def add_clouds(clean: np.ndarray, params: CloudParams, rng: np.random.Generator | None = None):
    """Composite clouds over ``clean``; returns ``(cloudy, mask)``."""
    if rng is None:
        rng = np.random.default_rng(params.seed)
    size = clean.shape[0]
    alpha = cloud_alpha(size, params, rng)[..., None]
    if not alpha.any():
        return clean.copy(), np.zeros(clean.shape[:2], dtype=bool)
    mixed = alpha * (params.brightness * 255.0) + (1 - alpha) * clean.astype(np.float64)
    cloudy = np.clip(np.rint(mixed), 0, 255).astype(np.uint8)
    return cloudy, alpha[..., 0] > 0.5


def gen_synthetic_dataset(
    n: int,
    size: int = 64,
    coverage: float | tuple[float, float] = (0.3, 0.5),
    seed: int = 0,
    *,
    octaves: int = 4,
    softness: float = 0.08,
    brightness: float | tuple[float, float] = (0.9, 1.0),
) -> DatasetSplit:
    """``n`` synthetic pairs split 64/16/20 % train/val/test.

    Each image draws its own coverage and brightness uniformly from the given
    ranges (a scalar means a fixed value). Fully deterministic per ``seed``.
    """
    if n < 5:
        raise DataError(f"need at least 5 synthetic pairs, got {n}")
    if size <= 0 or size % TOY_PATCH:
        raise DataError(f"synthetic image size must be a positive multiple of {TOY_PATCH}, got {size}")
    cov_lo, cov_hi = (coverage, coverage) if np.isscalar(coverage) else coverage
    br_lo, br_hi = (brightness, brightness) if np.isscalar(brightness) else brightness
    children = np.random.SeedSequence(seed).spawn(n)
    pairs = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        clean = land_texture(size, rng)
        params = CloudParams(
            coverage=float(rng.uniform(cov_lo, cov_hi)),
            octaves=octaves,
            softness=softness,
            brightness=float(rng.uniform(br_lo, br_hi)),
        )
        cloudy, mask = add_clouds(clean, params, rng)
        pairs.append(ImagePair(cloudy, clean, mask, f"{i:05d}"))
    pool = n - n // 5
    return DatasetSplit(*split_pool(pairs, pool), seed=seed)


def save_dataset(split: DatasetSplit, root, suffix: str = ".png") -> None:
    """Write a split in the RICE layout plus ``manifest.json``."""
    root = Path(root)
    for pair in (*split.train, *split.val, *split.test):
        pair = pair.load()
        write_image(root / "cloud" / f"{pair.id}{suffix}", pair.cloudy)
        write_image(root / "label" / f"{pair.id}{suffix}", pair.clean)
        if pair.mask is not None:
            write_image(root / "mask" / f"{pair.id}{suffix}", pair.mask)
    write_json(root / "manifest.json", {**split.membership(), "seed": split.seed})


# -- cropping and normalisation ---------------------------------------------------

def _crop(pair: ImagePair, top: int, left: int, size: int) -> ImagePair:
    sl = (slice(top, top + size), slice(left, left + size))
    mask = pair.mask[sl] if pair.mask is not None else None
    return ImagePair(pair.cloudy[sl], pair.clean[sl], mask, pair.id)


def _check_crop(pair: ImagePair, size: int) -> tuple[int, int]:
    h, w = pair.size
    if h < size or w < size:
        raise ShapeError(f"pair {pair.id!r} of size {h}x{w} is smaller than crop {size}")
    return h, w


def random_crop(pair: ImagePair, size: int, seed) -> ImagePair:
    """Same uniformly placed ``size x size`` window on cloudy, clean and mask."""
    h, w = _check_crop(pair, size)
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return _crop(pair, top, left, size)


def center_crop(pair: ImagePair, size: int) -> ImagePair:
    h, w = _check_crop(pair, size)
    return _crop(pair, (h - size) // 2, (w - size) // 2, size)


def center_crop_image(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ShapeError(f"image of size {h}x{w} is smaller than crop {size}")
    top, left = (h - size) // 2, (w - size) // 2
    return img[top:top + size, left:left + size]


def normalize(img: np.ndarray) -> np.ndarray:
    """uint8 ``[..., H, W, 3]`` -> float32 ``[..., 3, H, W]`` in [0, 1]."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise DataError(f"normalize expects uint8 pixels, got {arr.dtype}")
    return np.moveaxis(arr.astype(np.float32) / np.float32(255.0), -1, -3)


def denormalize(t) -> np.ndarray:
    """Float ``[..., 3, H, W]`` -> uint8 ``[..., H, W, 3]`` (clamp, x255, round half to even)."""
    arr = np.asarray(getattr(t, "data", t), dtype=np.float64)
    arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0)
    return np.moveaxis(arr.astype(np.uint8), -3, -1)
