"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np

from .exceptions import DataError, ShapeError


def check_images(X, name: str = "X", min_size: int | None = None) -> np.ndarray:
    """Coerce a stack of RGB images to uint8 ``[N, H, W, 3]``.

    Accepts a uint8 array, a float array in [0, 1], or a list of equally
    sized images. A single ``[H, W, 3]`` image is rejected rather than guessed.
    """
    if isinstance(X, (list, tuple)):
        if not X:
            raise DataError(f"{name} is empty")
        shapes = {np.shape(x) for x in X}
        if len(shapes) != 1:
            raise ShapeError(f"{name} mixes image shapes {sorted(shapes)}")
        X = np.stack([np.asarray(x) for x in X])
    X = np.asarray(X)
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ShapeError(f"{name} must have shape [N, H, W, 3], got {X.shape}")
    if X.shape[0] == 0:
        raise DataError(f"{name} is empty")
    if X.dtype == np.uint8:
        out = X
    elif np.issubdtype(X.dtype, np.floating):
        if not np.all(np.isfinite(X)):
            raise DataError(f"{name} contains NaN or inf")
        if X.min() < 0 or X.max() > 1:
            raise DataError(f"float {name} must lie in [0, 1], got range [{X.min():.3g}, {X.max():.3g}]")
        out = np.rint(X * 255.0).astype(np.uint8)
    else:
        raise DataError(f"{name} must be uint8 or float, got {X.dtype}")
    if min_size is not None and min(out.shape[1:3]) < min_size:
        raise ShapeError(f"{name} images are {out.shape[1]}x{out.shape[2]}; need at least {min_size}x{min_size}")
    return out


def check_pairs(X, y, min_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    X = check_images(X, "X", min_size)
    y = check_images(y, "y", min_size)
    if X.shape != y.shape:
        raise ShapeError(f"X and y shapes differ: {X.shape} vs {y.shape}")
    return X, y

