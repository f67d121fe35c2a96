"""Grayscale image I/O, deterministic geometry, and the stochastic two-view
augmentation pipeline.

Images are 2-D float64 numpy arrays with intensities in [0, 1]. The on-disk
format is binary PGM (P5) with maxval <= 255: an ASCII header
``P5\\n<width> <height>\\n<maxval>\\n`` followed by one byte per sample in
row-major order. The writer emits exactly that header; the reader is
slightly more lenient (arbitrary whitespace and ``#`` comments between
header tokens, as the format allows).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .validation import as_rng, check_fraction_range, check_image


class PgmHeaderError(ValueError):
    """The PGM header is malformed (bad magic, missing tokens, bad maxval)."""


class PgmPayloadError(ValueError):
    """The PGM pixel payload does not match the size declared in the header."""


# ---------------------------------------------------------------------------
# P5 PGM I/O
# ---------------------------------------------------------------------------

def _parse_pgm_tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    """Read ``count`` ASCII integer tokens starting at ``pos``, skipping
    whitespace and '#' comment lines."""
    tokens: list[int] = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmHeaderError("unexpected end of header")
        tok = data[start:pos]
        if not tok.isdigit():
            raise PgmHeaderError(f"non-numeric header token {tok!r}")
        tokens.append(int(tok))
    return tokens, pos


def load_image(path) -> np.ndarray:
    """Load a binary PGM (P5) file as a float64 image scaled to [0, 1].

    Intensities are divided by the declared maxval.

    Raises:
        FileNotFoundError: the file does not exist.
        PgmHeaderError: the header is not a valid P5 header with maxval <= 255.
        PgmPayloadError: fewer (or more) pixel bytes than width*height.
    """
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise PgmHeaderError(f"bad magic {data[:2]!r}, expected b'P5'")
    try:
        (width, height, maxval), pos = _parse_pgm_tokens(data, 3, 2)
    except PgmHeaderError:
        raise
    if width < 1 or height < 1:
        raise PgmHeaderError(f"non-positive dimensions {width}x{height}")
    if not (1 <= maxval <= 255):
        raise PgmHeaderError(f"maxval {maxval} outside supported range [1, 255]")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PgmHeaderError("missing whitespace byte after maxval")
    payload = data[pos + 1 :]
    expected = width * height
    if len(payload) != expected:
        raise PgmPayloadError(
            f"payload holds {len(payload)} bytes, header declares {expected}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return raw.astype(np.float64) / float(maxval)


def save_image(img, path, maxval: int = 255) -> None:
    """Write ``img`` as a binary PGM (P5) file, quantizing to ``maxval`` levels."""
    arr = check_image(img)
    if not (1 <= maxval <= 255):
        raise ValueError(f"maxval {maxval} outside supported range [1, 255]")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    quantized = np.rint(arr * maxval).astype(np.uint8)
    Path(path).write_bytes(header + quantized.tobytes())


# ---------------------------------------------------------------------------
# Deterministic geometry
# ---------------------------------------------------------------------------

def crop(img: np.ndarray, region) -> np.ndarray:
    """Extract the exact sub-grid covered by ``region`` (no interpolation).

    ``region`` is anything with top/left/height/width attributes, e.g. a
    :class:`hierlearn.decomposer.PatchRegion`.
    """
    h, w = img.shape
    top, left = region.top, region.left
    rh, rw = region.height, region.width
    if rh < 1 or rw < 1 or top < 0 or left < 0 or top + rh > h or left + rw > w:
        raise ValueError(
            f"region (top={top}, left={left}, h={rh}, w={rw}) "
            f"out of bounds for {h}x{w} image"
        )
    return img[top : top + rh, left : left + rw].copy()


def _source_coords(out_n: int, in_n: int) -> np.ndarray:
    # Corner-aligned sampling: output corners map onto input corners. With a
    # single output sample the scale is undefined; sample coordinate 0.
    if out_n == 1:
        return np.zeros(1)
    return np.arange(out_n) * ((in_n - 1) / (out_n - 1))


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling, clamped to [0, 1].

    Output pixel (i, j) samples source coordinate
    ``(i*(H-1)/(out_h-1), j*(W-1)/(out_w-1))``; same-size resize is an exact
    copy.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    in_h, in_w = img.shape
    if (out_h, out_w) == (in_h, in_w):
        return img.copy()
    rows = _source_coords(out_h, in_h)
    cols = _source_coords(out_w, in_w)
    r0 = np.minimum(np.floor(rows).astype(np.intp), in_h - 1)
    c0 = np.minimum(np.floor(cols).astype(np.intp), in_w - 1)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = img[np.ix_(r0, c0)] * (1 - fc) + img[np.ix_(r0, c1)] * fc
    bot = img[np.ix_(r1, c0)] * (1 - fc) + img[np.ix_(r1, c1)] * fc
    out = top * (1 - fr) + bot * fr
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Stochastic augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationConfig:
    """Parameters of the two-view augmentation pipeline.

    crop_scale_range: (lo, hi) area fraction of the random resized crop.
    jitter_strength: bound s for brightness/contrast jitter, out = in*(1+u1*s) + u2*s
        with u1, u2 ~ U(-1, 1).
    blur_sigma_range: (lo, hi) for the Gaussian blur sigma draw, in pixels.
    rotation_degrees: half-range of the uniform rotation angle draw.
    seed: default stream seed when no generator is supplied.
    """

    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    jitter_strength: float = 0.4
    blur_sigma_range: tuple[float, float] = (0.0, 1.5)
    rotation_degrees: float = 10.0
    seed: int = 0

    def __post_init__(self):
        check_fraction_range(self.crop_scale_range, "crop_scale_range")
        if self.jitter_strength < 0:
            raise ValueError("jitter_strength must be >= 0")
        lo, hi = self.blur_sigma_range
        if not (0 <= lo <= hi):
            raise ValueError("blur_sigma_range must satisfy 0 <= lo <= hi")
        if self.rotation_degrees < 0:
            raise ValueError("rotation_degrees must be >= 0")


def _random_resized_crop(img, lo, hi, rng) -> np.ndarray:
    # Area fraction drawn uniformly; the crop keeps the source aspect ratio
    # and is resized back to the source size.
    h, w = img.shape
    area = rng.uniform(lo, hi)
    side = math.sqrt(area)
    ch = max(1, round(h * side))
    cw = max(1, round(w * side))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    if (ch, cw) == (h, w):
        return img.copy()
    return resize(img[top : top + ch, left : left + cw], h, w)


def _rotate(img, degrees: float) -> np.ndarray:
    # Bilinear resample about the image center with edge replication, so no
    # artificial dark frame enters the view.
    return ndimage.rotate(img, degrees, reshape=False, order=1, mode="nearest")


def augment(img, cfg: AugmentationConfig, rng=None) -> np.ndarray:
    """Produce one stochastic view of ``img``.

    Applies, in order: random resized crop, brightness/contrast jitter,
    Gaussian blur, rotation (bilinear, edge replication); the result is
    clamped to [0, 1] and has the same shape as the input. The output is a
    pure function of (img, cfg, rng state).
    """
    arr = check_image(img)
    rng = as_rng(cfg.seed if rng is None else rng)

    lo, hi = cfg.crop_scale_range
    out = _random_resized_crop(arr, lo, hi, rng)

    s = cfg.jitter_strength
    u1, u2 = rng.uniform(-1.0, 1.0, size=2)
    out = out * (1.0 + u1 * s) + u2 * s

    sigma = rng.uniform(cfg.blur_sigma_range[0], cfg.blur_sigma_range[1])
    if sigma > 1e-9:
        out = ndimage.gaussian_filter(out, sigma=sigma, mode="nearest")

    angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
    if angle != 0.0:
        out = _rotate(out, angle)

    return np.clip(out, 0.0, 1.0)
