"""Recursive coarse-to-fine tiling of an image and random tile sampling.

Granularity level n splits an image into 2^n disjoint rectangles: the first
split halves the width, the second halves the height of each part, and so on
alternating. Odd extents split as floor(E/2) and E - floor(E/2), so any image
with 2^ceil(n/2) <= width and 2^floor(n/2) <= height tiles exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import crop
from .validation import as_rng, check_image


@dataclass(frozen=True, order=True)
class PatchRegion:
    """Axis-aligned rectangle inside a source image.

    Carries its granularity level so downstream probes can map sampled
    patches back to source coordinates.
    """

    top: int
    left: int
    height: int
    width: int
    granularity: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"degenerate region {self}")
        if self.top < 0 or self.left < 0:
            raise ValueError(f"negative origin in {self}")


def max_granularity(height: int, width: int) -> int:
    """Largest n for which an height x width image still tiles into 2^n parts."""
    n = 0
    while (1 << -(-(n + 1) // 2)) <= width and (1 << ((n + 1) // 2)) <= height:
        n += 1
    return n


def decompose(img, n: int) -> list[PatchRegion]:
    """Split ``img`` into 2^n disjoint tiles by alternating vertical and
    horizontal cuts (first cut vertical), returned row-major by (top, left).
    """
    arr = check_image(img)
    h, w = arr.shape
    if n < 0:
        raise ValueError(f"granularity must be >= 0, got {n}")
    cols_needed = 1 << -(-n // 2)  # 2^ceil(n/2) vertical cuts hit the width
    rows_needed = 1 << (n // 2)
    if cols_needed > w or rows_needed > h:
        raise ValueError(
            f"granularity {n} needs at least {rows_needed}x{cols_needed} pixels, "
            f"image is {h}x{w}"
        )
    regions = [(0, 0, h, w)]
    for depth in range(1, n + 1):
        vertical = depth % 2 == 1
        split: list[tuple[int, int, int, int]] = []
        for top, left, rh, rw in regions:
            if vertical:
                half = rw // 2
                split.append((top, left, rh, half))
                split.append((top, left + half, rh, rw - half))
            else:
                half = rh // 2
                split.append((top, left, half, rw))
                split.append((top + half, left, rh - half, rw))
        regions = split
    regions.sort(key=lambda r: (r[0], r[1]))
    return [PatchRegion(t, l, rh, rw, granularity=n) for t, l, rh, rw in regions]


def sample_instance(img, n: int, rng=None) -> np.ndarray:
    """Crop one tile chosen uniformly from decompose(img, n)."""
    arr = check_image(img)
    regions = decompose(arr, n)
    rng = as_rng(rng)
    idx = int(rng.integers(0, len(regions)))
    return crop(arr, regions[idx])


def sample_region(img, n: int, rng=None) -> PatchRegion:
    """Uniformly choose one tile region (without cropping)."""
    regions = decompose(img, n)
    rng = as_rng(rng)
    return regions[int(rng.integers(0, len(regions)))]
