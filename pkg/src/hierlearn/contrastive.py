"""Contrastive training core: FIFO memory bank of negative embeddings,
per-anchor similarity pruning of that bank, the InfoNCE loss over the pruned
negatives, the single training step, and the coarse-to-fine stage scheduler.

Pruning semantics: at granularity 0 the whole bank is used; at finer
granularities every bank entry whose cosine similarity to the anchor exceeds
the threshold is dropped for that anchor (boundary entries equal to the
threshold are kept). The bank itself is never mutated by pruning.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .decomposer import sample_instance
from .image import AugmentationConfig, augment, resize
from .networks import EncoderConfig, ModelPair, ema_update
from .validation import as_rng


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageSchedule:
    """Ordered training stages as (granularity n, step count) pairs."""

    stages: tuple[tuple[int, int], ...] = ((0, 1000), (2, 1000), (4, 1000))

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule must contain at least one stage")
        prev = -1
        for n, steps in self.stages:
            if n < 0 or steps < 0:
                raise ValueError(f"invalid stage (n={n}, steps={steps})")
            if n < prev:
                raise ValueError("granularity levels must be non-decreasing")
            prev = n
        object.__setattr__(self, "stages", tuple((int(n), int(s)) for n, s in self.stages))

    @property
    def total_steps(self) -> int:
        return sum(s for _, s in self.stages)

    @classmethod
    def parse(cls, text: str) -> "StageSchedule":
        """Parse '0:1000,2:1000,4:1000' into a schedule."""
        stages = []
        for part in text.split(","):
            n, _, steps = part.partition(":")
            try:
                stages.append((int(n), int(steps)))
            except ValueError:
                raise ValueError(f"bad schedule entry {part!r}, expected 'n:steps'")
        return cls(tuple(stages))

    def to_list(self) -> list[list[int]]:
        return [[n, s] for n, s in self.stages]


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of a pretraining run."""

    temperature: float = 0.2
    prune_threshold: float = 0.8
    bank_capacity: int = 4096
    momentum: float = 0.999
    learning_rate: float = 0.03
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.9
    batch_size: int = 32
    schedule: StageSchedule = field(default_factory=StageSchedule)
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    use_pruning: bool = True
    reset_bank_between_stages: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not (-1.0 < self.prune_threshold <= 1.0):
            raise ValueError("prune_threshold must lie in (-1, 1]")
        if self.bank_capacity < 1:
            raise ValueError("bank_capacity must be >= 1")
        if not (0.0 <= self.momentum <= 1.0):
            raise ValueError("momentum must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "prune_threshold": self.prune_threshold,
            "bank_capacity": self.bank_capacity,
            "momentum": self.momentum,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "sgd_momentum": self.sgd_momentum,
            "batch_size": self.batch_size,
            "schedule": self.schedule.to_list(),
            "seed": self.seed,
            "encoder": self.encoder.to_dict(),
            "augmentation": {
                "crop_scale_range": list(self.augmentation.crop_scale_range),
                "jitter_strength": self.augmentation.jitter_strength,
                "blur_sigma_range": list(self.augmentation.blur_sigma_range),
                "rotation_degrees": self.augmentation.rotation_degrees,
                "seed": self.augmentation.seed,
            },
            "use_pruning": self.use_pruning,
            "reset_bank_between_stages": self.reset_bank_between_stages,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        aug = d.get("augmentation", {})
        return cls(
            temperature=float(d.get("temperature", 0.2)),
            prune_threshold=float(d.get("prune_threshold", 0.8)),
            bank_capacity=int(d.get("bank_capacity", 4096)),
            momentum=float(d.get("momentum", 0.999)),
            learning_rate=float(d.get("learning_rate", 0.03)),
            weight_decay=float(d.get("weight_decay", 1e-4)),
            sgd_momentum=float(d.get("sgd_momentum", 0.9)),
            batch_size=int(d.get("batch_size", 32)),
            schedule=StageSchedule(tuple((int(n), int(s)) for n, s in d["schedule"]))
            if "schedule" in d
            else StageSchedule(),
            seed=int(d.get("seed", 0)),
            encoder=EncoderConfig.from_dict(d["encoder"]) if "encoder" in d else EncoderConfig(),
            augmentation=AugmentationConfig(
                crop_scale_range=tuple(aug.get("crop_scale_range", (0.6, 1.0))),
                jitter_strength=float(aug.get("jitter_strength", 0.4)),
                blur_sigma_range=tuple(aug.get("blur_sigma_range", (0.0, 1.5))),
                rotation_degrees=float(aug.get("rotation_degrees", 10.0)),
                seed=int(aug.get("seed", 0)),
            ),
            use_pruning=bool(d.get("use_pruning", True)),
            reset_bank_between_stages=bool(d.get("reset_bank_between_stages", False)),
            workers=int(d.get("workers", 1)),
        )

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


# ---------------------------------------------------------------------------
# Memory bank
# ---------------------------------------------------------------------------

class MemoryBank:
    """Fixed-capacity FIFO queue of unit-norm embedding vectors.

    Vectors arriving with a norm off unity by more than 1e-5 are
    re-normalized and counted in ``renormalized_count`` rather than rejected.
    """

    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._storage = torch.zeros((capacity, dim), dtype=dtype)
        self._size = 0
        self._cursor = 0
        self.renormalized_count = 0

    def __len__(self) -> int:
        return self._size

    @property
    def full(self) -> bool:
        return self._size == self.capacity

    def enqueue(self, vectors) -> "MemoryBank":
        """Append one (D,) or a batch (B, D) of vectors, evicting oldest
        entries beyond capacity."""
        t = torch.as_tensor(vectors, dtype=self._storage.dtype).detach()
        if t.ndim == 1:
            t = t.unsqueeze(0)
        if t.ndim != 2 or t.shape[1] != self.dim:
            raise ValueError(f"expected (*, {self.dim}) vectors, got {tuple(t.shape)}")
        if not torch.isfinite(t).all():
            raise ValueError("non-finite embedding enqueued")
        norms = t.norm(dim=1)
        if (norms == 0).any():
            raise ValueError("zero-norm embedding enqueued")
        off = (norms - 1.0).abs() > 1e-5
        if off.any():
            t = t.clone()
            t[off] = t[off] / norms[off].unsqueeze(1)
            self.renormalized_count += int(off.sum())
        if t.shape[0] > self.capacity:
            t = t[-self.capacity :]
        for row in t:
            self._storage[self._cursor] = row
            self._cursor = (self._cursor + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)
        return self

    def snapshot(self) -> torch.Tensor:
        """Copy of the current contents, oldest first, shape (size, D)."""
        if self._size < self.capacity:
            return self._storage[: self._size].clone()
        return torch.cat([self._storage[self._cursor :], self._storage[: self._cursor]]).clone()

    def reset(self) -> None:
        self._size = 0
        self._cursor = 0
        self._storage.zero_()


@dataclass
class PrunedBank:
    """Per-anchor filtered view of a bank snapshot."""

    kept: torch.Tensor
    removed_count: int

    def __len__(self) -> int:
        return self.kept.shape[0]


# ---------------------------------------------------------------------------
# Similarity, pruning, loss
# ---------------------------------------------------------------------------

def cosine_sim(a, b) -> float:
    """Normalized dot product of two vectors; raises on zero-norm input."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(av @ bv / (na * nb))


def keep_mask(q: torch.Tensor, snapshot: torch.Tensor, threshold: float, n: int) -> torch.Tensor:
    """Boolean (B, M) mask of bank entries each anchor keeps as negatives.

    n = 0 keeps everything; otherwise an entry is removed exactly when its
    similarity is strictly greater than ``threshold``.
    """
    if q.ndim == 1:
        q = q.unsqueeze(0)
    if n == 0 or snapshot.shape[0] == 0:
        return torch.ones((q.shape[0], snapshot.shape[0]), dtype=torch.bool)
    sims = q @ snapshot.T
    return sims <= threshold


def prune(q, bank: MemoryBank, threshold: float, n: int) -> PrunedBank:
    """Filter a bank snapshot for anchor ``q`` without mutating the bank."""
    snapshot = bank.snapshot()
    qt = torch.as_tensor(q, dtype=snapshot.dtype).ravel()
    norm = qt.norm()
    if norm == 0:
        raise ValueError("anchor must be non-zero")
    mask = keep_mask((qt / norm).unsqueeze(0), snapshot, threshold, n)[0]
    kept = snapshot[mask]
    return PrunedBank(kept=kept, removed_count=int(snapshot.shape[0] - kept.shape[0]))


def info_nce(q, k, negatives, temperature: float):
    """InfoNCE loss for one anchor: -log of the positive-pair softmax over
    the positive logit q.k/t and the negative logits q.k_i/t.

    ``negatives`` may be a PrunedBank, a (K', D) tensor/array, or None/empty
    (the loss is then exactly zero). Computed with log-sum-exp, so it is
    stable for small temperatures; the returned scalar tensor carries the
    autograd graph of its inputs.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    qt = q if isinstance(q, torch.Tensor) else torch.as_tensor(q, dtype=torch.float64)
    kt = k if isinstance(k, torch.Tensor) else torch.as_tensor(k, dtype=qt.dtype)
    if isinstance(negatives, PrunedBank):
        negatives = negatives.kept
    pos = (qt * kt).sum() / temperature
    if negatives is None or (hasattr(negatives, "shape") and len(negatives) == 0):
        return pos - pos  # zero of the right dtype, still on the graph
    neg = negatives if isinstance(negatives, torch.Tensor) else torch.as_tensor(
        negatives, dtype=qt.dtype
    )
    logits = torch.cat([pos.reshape(1), (neg @ qt) / temperature])
    return torch.logsumexp(logits, dim=0) - pos


def _masked_batch_loss(
    q: torch.Tensor,
    k: torch.Tensor,
    snapshot: torch.Tensor,
    mask: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """Mean InfoNCE over a batch, each anchor against its kept negatives."""
    pos = (q * k).sum(dim=1) / temperature
    if snapshot.shape[0] == 0:
        return (pos - pos).mean()
    neg = (q @ snapshot.T) / temperature
    neg = torch.where(mask, neg, torch.tensor(float("-inf"), dtype=neg.dtype))
    logits = torch.cat([pos.unsqueeze(1), neg], dim=1)
    return (torch.logsumexp(logits, dim=1) - pos).mean()


# ---------------------------------------------------------------------------
# Training step and schedule
# ---------------------------------------------------------------------------

@dataclass
class StepStats:
    """Bookkeeping from one optimization step (means over the batch)."""

    loss: float
    bank_size: int
    k_prime: float
    removed_count: float
    all_pruned_count: int
    lr: float


def make_optimizer(pair: ModelPair, cfg: TrainConfig) -> torch.optim.SGD:
    return torch.optim.SGD(
        pair.query.parameters(),
        lr=cfg.learning_rate,
        momentum=cfg.sgd_momentum,
        weight_decay=cfg.weight_decay,
    )


def _two_views(img: np.ndarray, n: int, cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    size = cfg.encoder.input_size
    x = sample_instance(img, n, rng)
    vq = resize(augment(x, cfg.augmentation, rng), size, size)
    vk = resize(augment(x, cfg.augmentation, rng), size, size)
    return vq, vk


def _batch_views(images, n, cfg, rng, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    # One spawned stream per sample: the result is independent of worker
    # count, and workers=1 stays the reference execution.
    streams = rng.spawn(len(images))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            pairs = list(pool.map(lambda a: _two_views(a[0], n, cfg, a[1]), zip(images, streams)))
    else:
        pairs = [_two_views(im, n, cfg, st) for im, st in zip(images, streams)]
    xq = np.stack([p[0] for p in pairs])[:, None]
    xk = np.stack([p[1] for p in pairs])[:, None]
    return torch.as_tensor(xq, dtype=dtype), torch.as_tensor(xk, dtype=dtype)


def train_step(
    pair: ModelPair,
    images,
    cfg: TrainConfig,
    n: int,
    bank: MemoryBank,
    rng,
    optimizer: torch.optim.Optimizer,
) -> StepStats:
    """One optimization step over a batch of source images.

    Per image: sample a granularity-n tile, augment it into two views, embed
    them with the query and key encoders, prune the shared bank snapshot per
    anchor, and average the InfoNCE losses. Then: SGD step on the query
    parameters, EMA update of the key parameters, and enqueue of the key
    embeddings. The bank snapshot used for the loss predates this step's
    enqueue, so a sample never sees itself as a negative.
    """
    rng = as_rng(rng)
    dtype = next(pair.query.parameters()).dtype
    xq, xk = _batch_views(images, n, cfg, rng, dtype)
    pair.query.train()
    q = pair.query(xq)
    with torch.no_grad():
        k = pair.key(xk)

    snapshot = bank.snapshot()
    use_n = n if cfg.use_pruning else 0
    mask = keep_mask(q.detach(), snapshot, cfg.prune_threshold, use_n)
    loss = _masked_batch_loss(q, k, snapshot, mask, cfg.temperature)

    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    ema_update(pair)

    bank_size = snapshot.shape[0]
    batch = mask.shape[0]
    removed_total = int(bank_size * batch - int(mask.sum()))
    removed_mean = removed_total / batch
    all_pruned = int((mask.sum(dim=1) == 0).sum()) if bank_size > 0 else 0

    bank.enqueue(k)

    return StepStats(
        loss=float(loss.detach()),
        bank_size=bank_size,
        k_prime=bank_size - removed_mean,
        removed_count=removed_mean,
        all_pruned_count=all_pruned,
        lr=float(optimizer.param_groups[0]["lr"]),
    )


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    """Per-stage cosine decay from base_lr toward zero."""
    if total <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def run_schedule(
    pair: ModelPair,
    dataset,
    cfg: TrainConfig,
    checkpoint_dir=None,
    progress=None,
) -> tuple[ModelPair, list[dict]]:
    """Run every stage of cfg.schedule over ``dataset`` (a sequence of 2-D
    arrays), returning the trained pair and the per-step training log.

    Model, optimizer state, and (by default) the memory bank persist across
    stage boundaries. When ``checkpoint_dir`` is given, a checkpoint is
    written after each stage as ``stage<idx>_n<granularity>.edn1``.

    Log records have keys
    {stage_n, step, loss, bank_size, K_prime, removed_count, lr}.
    """
    from .checkpoint import save_checkpoint

    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    rng = as_rng(cfg.seed)
    dtype = next(pair.query.parameters()).dtype
    bank = MemoryBank(cfg.bank_capacity, cfg.encoder.projection_out_dim, dtype=dtype)
    optimizer = make_optimizer(pair, cfg)
    records: list[dict] = []

    for stage_idx, (n, steps) in enumerate(cfg.schedule.stages):
        if cfg.reset_bank_between_stages and stage_idx > 0:
            bank.reset()
        for step in range(steps):
            lr = cosine_lr(cfg.learning_rate, step, steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            idx = rng.integers(0, len(dataset), size=cfg.batch_size)
            images = [dataset[int(i)] for i in idx]
            stats = train_step(pair, images, cfg, n, bank, rng, optimizer)
            records.append(
                {
                    "stage_n": n,
                    "step": step,
                    "loss": stats.loss,
                    "bank_size": stats.bank_size,
                    "K_prime": stats.k_prime,
                    "removed_count": stats.removed_count,
                    "lr": stats.lr,
                }
            )
            if progress is not None:
                progress(stage_idx, n, step, stats)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"stage{stage_idx:02d}_n{n}.edn1"
            save_checkpoint(pair, cfg, path)
    return pair, records


def write_log(records: list[dict], path) -> None:
    """Write training-log records as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
