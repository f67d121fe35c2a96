"""Procedural corpus of images with hierarchically arranged glyph structures
and ground-truth landmark annotations, plus manifest-based corpus loading.

Every image carries one instance of each structure class at a canonical grid
position, displaced by a small per-image jitter and overlaid on a fixed
smooth background texture with additive noise. The classes are visually
distinct (ring, cross, striped disk, gradient blob, ...) so embedding-space
probes have verifiable ground truth: same-class crops are closer to each
other in pixel space than cross-class crops by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import load_image, save_image


class ManifestError(ValueError):
    """The corpus manifest is structurally invalid."""


class AnnotationBoundsError(ManifestError):
    """A landmark annotation lies outside its image."""


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    num_images: int = 500
    num_structure_classes: int = 8
    jitter_px: int = 3
    intensity_noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if self.num_images < 1:
            raise ValueError("num_images must be >= 1")
        if self.num_structure_classes < 2:
            raise ValueError("need at least 2 structure classes")
        if not (0 <= self.jitter_px < self.image_size / 8):
            raise ValueError("jitter_px must satisfy 0 <= jitter < image_size/8")
        if self.intensity_noise < 0:
            raise ValueError("intensity_noise must be >= 0")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "num_images": self.num_images,
            "num_structure_classes": self.num_structure_classes,
            "jitter_px": self.jitter_px,
            "intensity_noise": self.intensity_noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(
            image_size=int(d["image_size"]),
            num_images=int(d["num_images"]),
            num_structure_classes=int(d["num_structure_classes"]),
            jitter_px=int(d["jitter_px"]),
            intensity_noise=float(d["intensity_noise"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class LandmarkAnnotation:
    image_id: str
    landmark_class: int
    center: tuple[int, int]  # (row, col)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def canonical_layout(cfg: SynthConfig) -> list[tuple[int, int]]:
    """Grid of canonical (row, col) centers, one per structure class.

    Centers are inset so a glyph plus its maximum jitter never crosses the
    image border; landmark-centered crops then never get clamp-shifted.
    """
    c = cfg.num_structure_classes
    ncols = math.ceil(math.sqrt(c))
    nrows = math.ceil(c / ncols)
    cell_h = cfg.image_size / nrows
    cell_w = cfg.image_size / ncols
    margin = math.ceil(1.35 * glyph_radius(cfg)) + cfg.jitter_px
    lo, hi = margin, cfg.image_size - 1 - margin
    centers = []
    for i in range(c):
        r, col = divmod(i, ncols)
        row_c = min(max(round((r + 0.5) * cell_h), lo), hi)
        col_c = min(max(round((col + 0.5) * cell_w), lo), hi)
        centers.append((row_c, col_c))
    return centers


def glyph_radius(cfg: SynthConfig) -> int:
    c = cfg.num_structure_classes
    ncols = math.ceil(math.sqrt(c))
    nrows = math.ceil(c / ncols)
    cell = min(cfg.image_size / nrows, cfg.image_size / ncols)
    return max(3, round(0.4 * cell))


def _shape_mask(base: int, dr: np.ndarray, dc: np.ndarray, r: float, hw: float) -> np.ndarray:
    # Classes come in "statistics twins" (0,1), (2,3), (4,5), (6,7): each
    # pair shares stroke orientation content and differs only in spatial
    # arrangement, so pooled local statistics cannot separate the pair.
    rho = np.hypot(dr, dc)
    if base == 0:  # circle outline
        return np.abs(rho - 0.78 * r) <= hw
    if base == 1:  # concentric double circle
        return (np.abs(rho - 0.42 * r) <= hw) | (np.abs(rho - 0.85 * r) <= hw)
    if base == 2:  # plus: full-length vertical + horizontal through center
        arm = 0.8 * r
        return ((np.abs(dr) <= hw) & (np.abs(dc) <= arm)) | (
            (np.abs(dc) <= hw) & (np.abs(dr) <= arm)
        )
    if base == 3:  # L: same two strokes meeting at a corner
        vert = (np.abs(dc + 0.55 * r) <= hw) & (dr >= -0.8 * r) & (dr <= 0.8 * r)
        horiz = (np.abs(dr - 0.8 * r) <= hw) & (dc >= -0.55 * r) & (dc <= 1.05 * r)
        return vert | horiz
    if base == 4:  # H: two vertical posts + middle rung
        posts = (np.abs(np.abs(dc) - 0.6 * r) <= hw) & (np.abs(dr) <= 0.8 * r)
        rung = (np.abs(dr) <= hw) & (np.abs(dc) <= 0.6 * r)
        return posts | rung
    if base == 5:  # U: the same posts + bottom rung
        posts = (np.abs(np.abs(dc) - 0.6 * r) <= hw) & (np.abs(dr) <= 0.8 * r)
        rung = (np.abs(dr - 0.8 * r) <= hw) & (np.abs(dc) <= 0.6 * r)
        return posts | rung
    bars = (np.abs(np.abs(dr) - 0.7 * r) <= hw) & (np.abs(dc) <= 0.7 * r)
    if base == 6:  # Z: top/bottom bars + anti-diagonal
        diag = (np.abs(dr + dc) <= hw * 1.4) & (np.abs(dr) <= 0.7 * r) & (np.abs(dc) <= 0.7 * r)
    else:  # S: mirrored Z (main diagonal)
        diag = (np.abs(dr - dc) <= hw * 1.4) & (np.abs(dr) <= 0.7 * r) & (np.abs(dc) <= 0.7 * r)
    return bars | diag


def glyph_stamp(
    kind: int,
    radius: int,
    angle_deg: float = 0.0,
    scale: float = 1.0,
    stroke_scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Render one glyph as (intensity, mask) arrays, optionally rotated,
    scaled, and with thickened strokes, about its center.

    All classes are strokes of identical width and intensity, so they share
    local/texture statistics and differ only in spatial arrangement: easy
    for pixel-space template matching, uninformative for pooled statistics.
    """
    rf = math.ceil(1.35 * radius)  # footprint covers scale <= 1.3
    grid_r, grid_c = np.mgrid[-rf : rf + 1, -rf : rf + 1].astype(np.float64)
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    dr = (cos_t * grid_r - sin_t * grid_c) / scale
    dc = (sin_t * grid_r + cos_t * grid_c) / scale
    hw = max(1.0, 0.11 * radius) * stroke_scale
    mask = _shape_mask(kind % 8, dr, dc, float(radius), hw)
    out = np.zeros_like(grid_r)
    out[mask] = 0.9 if kind < 8 else 0.6  # extra classes reuse shapes dimmer
    return out, mask


def background_field(size: int) -> np.ndarray:
    """Uniform dark background.

    Deliberately structure-free: any positional texture would let pooled
    statistics identify a landmark by where it sits instead of what it looks
    like, trivializing the locality and few-shot probes.
    """
    return np.full((size, size), 0.12)


def render_image(cfg: SynthConfig, index: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Render image ``index`` of the corpus; returns (image, per-class centers).

    Beyond landmark jitter and noise, every glyph instance draws a brightness
    factor and every image draws a global exposure transform (contrast a,
    offset b); these play the role of inter-subject appearance variation, so
    intensity statistics alone cannot identify a structure class.
    """
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.image_size
    img = background_field(size).copy()
    centers = []
    radius = glyph_radius(cfg)
    for cls, (crow, ccol) in enumerate(canonical_layout(cfg)):
        jr = int(rng.integers(-cfg.jitter_px, cfg.jitter_px + 1)) if cfg.jitter_px else 0
        jc = int(rng.integers(-cfg.jitter_px, cfg.jitter_px + 1)) if cfg.jitter_px else 0
        row = int(np.clip(crow + jr, 0, size - 1))
        col = int(np.clip(ccol + jc, 0, size - 1))
        centers.append((row, col))
        angle = rng.uniform(-20.0, 20.0)
        scale = rng.uniform(0.85, 1.2)
        brightness = rng.uniform(0.65, 1.0)
        stroke = rng.uniform(0.9, 1.3)
        stamp, mask = glyph_stamp(
            cls, radius, angle_deg=angle, scale=scale, stroke_scale=stroke
        )
        # dash the strokes with a random-phase stripe pattern: local texture
        # statistics decohere per instance while the spatial envelope stays
        n = stamp.shape[0]
        grid_r, grid_c = np.mgrid[0:n, 0:n].astype(np.float64)
        theta = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        period = rng.uniform(3.5, 5.5)
        wave = np.sin(
            2.0 * math.pi * (grid_r * math.cos(theta) + grid_c * math.sin(theta)) / period
            + phase
        )
        mask = mask & (wave > -0.75)
        rf = n // 2
        top, left = row - rf, col - rf
        r0, c0 = max(0, top), max(0, left)
        r1, c1 = min(size, top + stamp.shape[0]), min(size, left + stamp.shape[1])
        sub = img[r0:r1, c0:c1]
        st = stamp[r0 - top : r1 - top, c0 - left : c1 - left]
        ms = mask[r0 - top : r1 - top, c0 - left : c1 - left]
        sub[ms] = st[ms] * brightness
    contrast = rng.uniform(0.8, 1.1)
    offset = rng.uniform(-0.05, 0.05)
    img = img * contrast + offset
    if cfg.intensity_noise > 0:
        img = img + rng.normal(0.0, cfg.intensity_noise, size=img.shape)
    return np.clip(img, 0.0, 1.0), centers


def generate_corpus(cfg: SynthConfig, out_dir) -> Path:
    """Write the corpus images and manifest into ``out_dir``; returns the
    manifest path. Generation is a pure function of cfg."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = []
    landmarks = []
    for idx in range(cfg.num_images):
        img, centers = render_image(cfg, idx)
        image_id = f"img_{idx:05d}"
        rel_path = f"{image_id}.pgm"
        save_image(img, out / rel_path)
        images.append({"id": image_id, "path": rel_path})
        for cls, (row, col) in enumerate(centers):
            landmarks.append(
                {"image_id": image_id, "class": cls, "row": row, "col": col}
            )
    manifest = {"images": images, "landmarks": landmarks, "config": cfg.to_dict()}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

class Corpus:
    """Loaded manifest: lazily loadable image handles plus annotations."""

    def __init__(self, ids, paths, landmarks, config=None):
        self.ids = list(ids)
        self.paths = [Path(p) for p in paths]
        self.landmarks = list(landmarks)
        self.config = config
        self._index = {image_id: i for i, image_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.paths)

    def image(self, i: int) -> np.ndarray:
        return load_image(self.paths[i])

    def image_by_id(self, image_id: str) -> np.ndarray:
        return self.image(self._index[image_id])

    def load_all(self) -> list[np.ndarray]:
        return [self.image(i) for i in range(len(self))]

    @property
    def num_classes(self) -> int:
        if not self.landmarks:
            return 0
        return 1 + max(a.landmark_class for a in self.landmarks)


def load_corpus(manifest_path) -> Corpus:
    """Parse a manifest and validate it eagerly.

    Raises FileNotFoundError naming any missing image file, ManifestError on
    structural problems, AnnotationBoundsError on out-of-range centers.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "images" not in manifest or "landmarks" not in manifest:
        raise ManifestError("manifest must contain 'images' and 'landmarks'")

    base = manifest_path.parent
    ids, paths = [], []
    for entry in manifest["images"]:
        try:
            image_id, rel = entry["id"], entry["path"]
        except (TypeError, KeyError):
            raise ManifestError(f"bad image entry {entry!r}")
        path = base / rel
        if not path.exists():
            raise FileNotFoundError(f"manifest references missing file: {path}")
        ids.append(image_id)
        paths.append(path)

    config = None
    size = None
    if "config" in manifest:
        try:
            config = SynthConfig.from_dict(manifest["config"])
            size = config.image_size
        except (KeyError, TypeError, ValueError):
            raise ManifestError("manifest 'config' block is malformed")
    known = set(ids)
    landmarks = []
    for entry in manifest["landmarks"]:
        try:
            ann = LandmarkAnnotation(
                image_id=entry["image_id"],
                landmark_class=int(entry["class"]),
                center=(int(entry["row"]), int(entry["col"])),
            )
        except (TypeError, KeyError):
            raise ManifestError(f"bad landmark entry {entry!r}")
        if ann.image_id not in known:
            raise ManifestError(f"landmark references unknown image {ann.image_id!r}")
        if size is not None:
            row, col = ann.center
            if not (0 <= row < size and 0 <= col < size):
                raise AnnotationBoundsError(
                    f"landmark center {ann.center} outside {size}x{size} image"
                )
        landmarks.append(ann)
    return Corpus(ids, paths, landmarks, config)


def corpus_from_directory(directory) -> Corpus:
    """Ingest every .pgm file under ``directory`` (sorted) as an unannotated
    corpus."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm files under {directory}")
    return Corpus([p.stem for p in paths], paths, landmarks=[], config=None)
