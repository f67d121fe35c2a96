"""Quantitative checks of a trained encoder's embedding space: cluster
separation of structure-centered patches, whole-vs-parts embedding
alignment, dense grid correspondence across images, cross-resolution
identity, and a frozen-feature few-shot linear probe.

Every probe takes an ``embed_fn`` mapping a list of 2-D arrays to an (N, D)
feature matrix (backbone output after global average pooling; projection
heads are a training artifact and stay out of evaluation). Probes are
deterministic given (embed_fn, corpus, seed).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import silhouette_score

from .contrastive import cosine_sim
from .validation import as_rng


# ---------------------------------------------------------------------------
# Shared patch helpers
# ---------------------------------------------------------------------------

def clamped_patch(img: np.ndarray, center: tuple[int, int], patch_px: int) -> np.ndarray:
    """patch_px x patch_px crop centered at ``center``, shifted inward at
    image borders so the window always fits."""
    h, w = img.shape
    if patch_px > h or patch_px > w:
        raise ValueError(f"patch {patch_px}px exceeds image {h}x{w}")
    top = min(max(center[0] - patch_px // 2, 0), h - patch_px)
    left = min(max(center[1] - patch_px // 2, 0), w - patch_px)
    return img[top : top + patch_px, left : left + patch_px]


def landmark_patches(corpus, patch_px: int):
    """Crops around every annotated landmark: (patches, labels, image_ids)."""
    if not corpus.landmarks:
        raise ValueError("corpus carries no landmark annotations")
    patches, labels, image_ids = [], [], []
    by_image: dict[str, list] = {}
    for ann in corpus.landmarks:
        by_image.setdefault(ann.image_id, []).append(ann)
    for image_id in sorted(by_image):
        img = corpus.image_by_id(image_id)
        for ann in by_image[image_id]:
            patches.append(clamped_patch(img, ann.center, patch_px))
            labels.append(ann.landmark_class)
            image_ids.append(image_id)
    return patches, np.asarray(labels, dtype=np.intp), image_ids


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("zero-norm embedding row")
    return x / norms


# ---------------------------------------------------------------------------
# Locality
# ---------------------------------------------------------------------------

@dataclass
class LocalityReport:
    silhouette: float
    nearest_centroid_accuracy: float
    per_class_counts: dict[int, int]
    patch_px: int
    embeddings: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    image_ids: list[str] = field(repr=False, default_factory=list)

    @property
    def metrics(self) -> dict[str, float]:
        return {
            "silhouette": self.silhouette,
            "nearest_centroid_accuracy": self.nearest_centroid_accuracy,
        }

    def to_dict(self) -> dict:
        return {
            "probe": "locality",
            "metrics": self.metrics,
            "per_class_counts": {str(k): v for k, v in sorted(self.per_class_counts.items())},
            "patch_px": self.patch_px,
            "num_embeddings": int(self.labels.shape[0]),
        }

    def embeddings_tsv(self) -> str:
        """class, image_id, then one column per embedding dimension."""
        buf = io.StringIO()
        dim = self.embeddings.shape[1]
        header = ["class", "image_id"] + [f"e{i}" for i in range(dim)]
        buf.write("\t".join(header) + "\n")
        ids = self.image_ids or [""] * len(self.labels)
        for label, image_id, row in zip(self.labels, ids, self.embeddings):
            buf.write(f"{int(label)}\t{image_id}\t" + "\t".join(repr(v) for v in row) + "\n")
        return buf.getvalue()


def nearest_centroid_loo_accuracy(embeddings: np.ndarray, labels: np.ndarray) -> float:
    """Leave-one-out nearest-centroid accuracy: each point's own class
    centroid is recomputed without it."""
    classes = np.unique(labels)
    counts = {c: int((labels == c).sum()) for c in classes}
    if min(counts.values()) < 2:
        raise ValueError("every class needs at least 2 examples for leave-one-out")
    sums = {c: embeddings[labels == c].sum(axis=0) for c in classes}
    n = embeddings.shape[0]
    dists = np.empty((n, len(classes)))
    for j, c in enumerate(classes):
        centroid = sums[c] / counts[c]
        dists[:, j] = np.linalg.norm(embeddings - centroid, axis=1)
        own = labels == c
        adjusted = (sums[c] - embeddings[own]) / (counts[c] - 1)
        dists[own, j] = np.linalg.norm(embeddings[own] - adjusted, axis=1)
    predicted = classes[np.argmin(dists, axis=1)]
    return float(np.mean(predicted == labels))


def probe_locality(embed_fn, corpus, patch_px: int = 20) -> LocalityReport:
    """Embed a patch around every landmark and score class separation
    (silhouette plus leave-one-out nearest-centroid accuracy)."""
    patches, labels, image_ids = landmark_patches(corpus, patch_px)
    emb = np.asarray(embed_fn(patches), dtype=np.float64)
    sil = float(silhouette_score(emb, labels, metric="euclidean"))
    acc = nearest_centroid_loo_accuracy(emb, labels)
    counts = {int(c): int((labels == c).sum()) for c in np.unique(labels)}
    return LocalityReport(
        silhouette=sil,
        nearest_centroid_accuracy=acc,
        per_class_counts=counts,
        patch_px=patch_px,
        embeddings=emb,
        labels=labels,
        image_ids=image_ids,
    )


# ---------------------------------------------------------------------------
# Compositionality
# ---------------------------------------------------------------------------

def split_patch(patch: np.ndarray, arity: int) -> list[np.ndarray]:
    """Non-overlapping sub-patches: 2 = vertical halves, 3 = vertical
    thirds, 4 = quadrants."""
    h, w = patch.shape
    if arity == 2:
        m = w // 2
        return [patch[:, :m], patch[:, m:]]
    if arity == 3:
        a, b = w // 3, 2 * w // 3
        return [patch[:, :a], patch[:, a:b], patch[:, b:]]
    if arity == 4:
        mh, mw = h // 2, w // 2
        return [patch[:mh, :mw], patch[:mh, mw:], patch[mh:, :mw], patch[mh:, mw:]]
    raise ValueError(f"split arity must be one of 2, 3, 4; got {arity}")


def whole_vs_parts_similarity(whole_feat: np.ndarray, part_feats: np.ndarray) -> float:
    """cosine(E(whole), aggregate of part embeddings).

    The aggregate is the component-wise sum; a mean aggregate differs only
    by a positive scale, which cosine discards, so both share this code path
    and are identical by construction.
    """
    return cosine_sim(whole_feat, np.sum(part_feats, axis=0))


@dataclass
class CompositionalityReport:
    similarities: list[float]
    mean: float
    std: float
    kde_x: list[float]
    kde_density: list[float]
    arities: tuple[int, ...]
    arity_tags: list[int]
    num_patches: int
    side_fraction_range: tuple[float, float]

    @property
    def metrics(self) -> dict[str, float]:
        return {"mean_similarity": self.mean, "std_similarity": self.std}

    def to_dict(self) -> dict:
        return {
            "probe": "compositionality",
            "metrics": self.metrics,
            "arities": list(self.arities),
            "num_patches": self.num_patches,
            "side_fraction_range": list(self.side_fraction_range),
            "num_samples": len(self.similarities),
        }

    def samples_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("arity\tsimilarity\n")
        for arity, sim in zip(self.arity_tags, self.similarities):
            buf.write(f"{arity}\t{repr(sim)}\n")
        return buf.getvalue()

    def kde_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("x\tdensity\n")
        for x, d in zip(self.kde_x, self.kde_density):
            buf.write(f"{repr(x)}\t{repr(d)}\n")
        return buf.getvalue()


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    std = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    h = 0.9 * spread * n ** (-0.2)
    return h if h > 0 else 1e-6


def gaussian_kde_curve(samples, num_points: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE with Silverman's bandwidth, evaluated on a grid wide
    enough that the curve integrates to ~1."""
    s = np.asarray(samples, dtype=np.float64)
    h = silverman_bandwidth(s)
    lo, hi = s.min() - 5 * h, s.max() + 5 * h
    xs = np.linspace(lo, hi, num_points)
    z = (xs[:, None] - s[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (s.size * h * math.sqrt(2 * math.pi))
    return xs, dens


def probe_compositionality(
    embed_fn,
    corpus,
    num_patches: int = 200,
    split_arities: tuple[int, ...] = (2, 3, 4),
    side_fraction_range: tuple[float, float] = (0.25, 0.5),
    seed=0,
) -> CompositionalityReport:
    """Sample random square patches, split each into sub-patches per arity,
    and score cosine(whole embedding, summed part embeddings)."""
    arities = tuple(split_arities)
    if not arities or any(a not in (2, 3, 4) for a in arities):
        raise ValueError(f"split arities must be within {{2,3,4}}, got {arities}")
    if num_patches < 1:
        raise ValueError("num_patches must be >= 1")
    rng = as_rng(seed)
    lo, hi = side_fraction_range

    wholes, parts_flat, plan = [], [], []
    for t in range(num_patches):
        img = corpus.image(int(rng.integers(0, len(corpus))))
        h, w = img.shape
        side = max(6, round(rng.uniform(lo, hi) * min(h, w)))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        patch = img[top : top + side, left : left + side]
        arity = arities[t % len(arities)]
        pieces = split_patch(patch, arity)
        plan.append((arity, len(pieces)))
        wholes.append(patch)
        parts_flat.extend(pieces)

    whole_feats = np.asarray(embed_fn(wholes), dtype=np.float64)
    part_feats = np.asarray(embed_fn(parts_flat), dtype=np.float64)

    sims, tags = [], []
    cursor = 0
    for (arity, count), wf in zip(plan, whole_feats):
        pf = part_feats[cursor : cursor + count]
        cursor += count
        sims.append(whole_vs_parts_similarity(wf, pf))
        tags.append(arity)

    samples = np.asarray(sims)
    xs, dens = gaussian_kde_curve(samples)
    return CompositionalityReport(
        similarities=[float(v) for v in samples],
        mean=float(samples.mean()),
        std=float(samples.std(ddof=0)),
        kde_x=[float(v) for v in xs],
        kde_density=[float(v) for v in dens],
        arities=arities,
        arity_tags=tags,
        num_patches=num_patches,
        side_fraction_range=(float(lo), float(hi)),
    )


# ---------------------------------------------------------------------------
# Dense correspondence
# ---------------------------------------------------------------------------

@dataclass
class CorrespondenceResult:
    matches: list[tuple[int, int, float]]
    grid_size: int
    threshold: float

    @property
    def metrics(self) -> dict[str, float]:
        mean_sim = (
            float(np.mean([m[2] for m in self.matches])) if self.matches else 0.0
        )
        return {"num_matches": float(len(self.matches)), "mean_similarity": mean_sim}

    def to_dict(self) -> dict:
        return {
            "probe": "correspondence",
            "metrics": self.metrics,
            "grid_size": self.grid_size,
            "threshold": self.threshold,
            "matches": [[a, b, s] for a, b, s in self.matches],
        }


def grid_cells(img: np.ndarray, g: int) -> list[np.ndarray]:
    """Row-major g x g partition of the image."""
    h, w = img.shape
    if g < 2:
        raise ValueError("grid must be at least 2x2")
    if h < g or w < g:
        raise ValueError(f"image {h}x{w} too small for a {g}x{g} grid")
    rows = [i * h // g for i in range(g + 1)]
    cols = [j * w // g for j in range(g + 1)]
    return [
        img[rows[i] : rows[i + 1], cols[j] : cols[j + 1]]
        for i in range(g)
        for j in range(g)
    ]


def probe_correspondence(embed_fn, img_a, img_b, grid: int = 8, threshold: float = 0.8) -> CorrespondenceResult:
    """Match every grid cell of img_a to its most cosine-similar cell of
    img_b; keep matches at or above the threshold."""
    cells_a = grid_cells(np.asarray(img_a, dtype=np.float64), grid)
    cells_b = grid_cells(np.asarray(img_b, dtype=np.float64), grid)
    ea = _unit_rows(np.asarray(embed_fn(cells_a), dtype=np.float64))
    eb = _unit_rows(np.asarray(embed_fn(cells_b), dtype=np.float64))
    sims = ea @ eb.T
    best = np.argmax(sims, axis=1)
    matches = [
        (int(i), int(j), float(sims[i, j]))
        for i, j in enumerate(best)
        if sims[i, j] >= threshold
    ]
    return CorrespondenceResult(matches=matches, grid_size=grid, threshold=threshold)


# ---------------------------------------------------------------------------
# Multi-resolution identity
# ---------------------------------------------------------------------------

@dataclass
class MultiresReport:
    levels: tuple[int, ...]
    cross_level_same_structure: float
    same_level_cross_structure: float

    @property
    def success(self) -> bool:
        return self.cross_level_same_structure > self.same_level_cross_structure

    @property
    def metrics(self) -> dict[str, float]:
        return {
            "cross_level_same_structure": self.cross_level_same_structure,
            "same_level_cross_structure": self.same_level_cross_structure,
            "separation": self.cross_level_same_structure - self.same_level_cross_structure,
        }

    def to_dict(self) -> dict:
        return {
            "probe": "multires",
            "metrics": self.metrics,
            "levels": list(self.levels),
            "success": bool(self.success),
        }


def probe_multires(embed_fn, corpus, levels: tuple[int, ...] = (12, 20, 32)) -> MultiresReport:
    """Embed landmark patches at several sizes; mean cosine between same
    structures across levels should exceed mean cosine between different
    structures within a level."""
    levels = tuple(int(v) for v in levels)
    if len(levels) < 1:
        raise ValueError("need at least one level")
    # mean pairwise cosine between two sets of unit vectors is the dot of
    # their per-set mean vectors
    mean_vecs: dict[tuple[int, int], np.ndarray] = {}
    classes = None
    for level in levels:
        patches, labels, _ = landmark_patches(corpus, level)
        feats = _unit_rows(np.asarray(embed_fn(patches), dtype=np.float64))
        classes = np.unique(labels) if classes is None else classes
        for c in classes:
            mean_vecs[(level, int(c))] = feats[labels == c].mean(axis=0)

    same_cross_level = []
    if len(levels) == 1:
        same_cross_level.append(1.0)  # identical patches, degenerate case
    else:
        for c in classes:
            for i in range(len(levels)):
                for j in range(i + 1, len(levels)):
                    same_cross_level.append(
                        float(mean_vecs[(levels[i], int(c))] @ mean_vecs[(levels[j], int(c))])
                    )
    cross_same_level = []
    for level in levels:
        for i in range(len(classes)):
            for j in range(i + 1, len(classes)):
                cross_same_level.append(
                    float(mean_vecs[(level, int(classes[i]))] @ mean_vecs[(level, int(classes[j]))])
                )
    return MultiresReport(
        levels=levels,
        cross_level_same_structure=float(np.mean(same_cross_level)),
        same_level_cross_structure=float(np.mean(cross_same_level)),
    )


# ---------------------------------------------------------------------------
# Few-shot linear probe
# ---------------------------------------------------------------------------

@dataclass
class LinearProbeReport:
    shots_per_class: int
    accuracy: float
    per_resample: list[float]
    patch_px: int

    @property
    def metrics(self) -> dict[str, float]:
        return {"accuracy": self.accuracy}

    def to_dict(self) -> dict:
        return {
            "probe": "linear",
            "metrics": self.metrics,
            "shots_per_class": self.shots_per_class,
            "per_resample": self.per_resample,
            "patch_px": self.patch_px,
        }


def linear_probe(
    embed_fn,
    corpus,
    shots_per_class: int,
    patch_px: int = 20,
    num_resamplings: int = 3,
    seed=0,
) -> LinearProbeReport:
    """Frozen-feature few-shot evaluation: fit a linear classifier on
    shots_per_class landmark embeddings per class, score on the rest,
    average over resamplings."""
    if shots_per_class < 1:
        raise ValueError("shots_per_class must be >= 1")
    patches, labels, _ = landmark_patches(corpus, patch_px)
    feats = np.asarray(embed_fn(patches), dtype=np.float64)
    classes = np.unique(labels)
    for c in classes:
        if (labels == c).sum() < shots_per_class + 1:
            raise ValueError(
                f"class {c} has {(labels == c).sum()} examples, "
                f"need > {shots_per_class} for train plus held-out"
            )
    rng = as_rng(seed)
    accs = []
    for _ in range(num_resamplings):
        train_idx = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            train_idx.extend(rng.permutation(members)[:shots_per_class])
        train_mask = np.zeros(len(labels), dtype=bool)
        train_mask[train_idx] = True
        # plain logistic regression on the raw frozen features; per-dimension
        # standardization would re-weight feature directions and stop the
        # probe from measuring the representation as-is
        clf = LogisticRegression(max_iter=1000).fit(feats[train_mask], labels[train_mask])
        pred = clf.predict(feats[~train_mask])
        accs.append(float(np.mean(pred == labels[~train_mask])))
    return LinearProbeReport(
        shots_per_class=shots_per_class,
        accuracy=float(np.mean(accs)),
        per_resample=accs,
        patch_px=patch_px,
    )
