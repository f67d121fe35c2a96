"""Input validation helpers shared across the package.

Images are plain 2-D numpy arrays with float intensities in [0, 1]; these
helpers coerce and check that contract at API boundaries so the numerical
code can assume it.
"""

from __future__ import annotations

import numbers

import numpy as np


def check_image(img, name: str = "image") -> np.ndarray:
    """Coerce ``img`` to a validated 2-D float64 intensity grid.

    Raises ValueError if the array is not 2-D with both extents >= 1, or
    contains non-finite values or values outside [0, 1].
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have height >= 1 and width >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"{name} intensities must lie in [0, 1], got range "
            f"[{arr.min():.6g}, {arr.max():.6g}]"
        )
    return np.ascontiguousarray(arr)


def check_images(X, name: str = "X") -> list[np.ndarray]:
    """Validate a batch of images given as a 3-D array or a sequence of 2-D arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [check_image(X[i], f"{name}[{i}]") for i in range(X.shape[0])]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError(f"{name} must be a batch of images; wrap a single image in a list")
    try:
        seq = list(X)
    except TypeError:
        raise ValueError(f"{name} must be a 3-D array or a sequence of 2-D arrays")
    if not seq:
        raise ValueError(f"{name} must contain at least one image")
    return [check_image(im, f"{name}[{i}]") for i, im in enumerate(seq)]


def as_rng(seed) -> np.random.Generator:
    """Coerce ``seed`` (None, int, SeedSequence, or Generator) to a Generator.

    A Generator passes through unchanged so callers can thread one stream
    through a pipeline.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"cannot interpret {seed!r} as a random generator")


def check_fraction_range(pair, name: str) -> tuple[float, float]:
    """Validate a (lo, hi) pair with 0 < lo <= hi <= 1."""
    lo, hi = float(pair[0]), float(pair[1])
    if not (0.0 < lo <= hi <= 1.0):
        raise ValueError(f"{name} must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})")
    return lo, hi
