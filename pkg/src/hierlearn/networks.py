"""Twin encoder networks: a gradient-trained query side and an EMA-tracked
key side, each a small strided conv backbone plus a two-layer MLP projection
head emitting L2-normalized embeddings.

The backbone is deliberately desk-scale (a few stride-2 conv blocks with
global average pooling) so the full training schedule runs on CPU in
minutes; anything exposing the same forward contract can substitute for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .image import resize
from .validation import check_images


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of one backbone + projection head.

    embedding_dim must equal the last channel width (the backbone output is
    the channel-wise global average of the final feature map); None resolves
    to channel_widths[-1].
    """

    input_size: int = 64
    channel_widths: tuple[int, ...] = (16, 32, 64, 128)
    embedding_dim: int | None = None
    projection_hidden_dim: int = 128
    projection_out_dim: int = 128

    def __post_init__(self):
        if self.input_size < 1:
            raise ValueError("input_size must be >= 1")
        if not self.channel_widths or any(c < 1 for c in self.channel_widths):
            raise ValueError("channel_widths must be non-empty positive integers")
        if self.projection_hidden_dim < 1 or self.projection_out_dim < 1:
            raise ValueError("projection dims must be >= 1")
        if self.embedding_dim is None:
            object.__setattr__(self, "embedding_dim", self.channel_widths[-1])
        elif self.embedding_dim != self.channel_widths[-1]:
            raise ValueError(
                "embedding_dim must equal channel_widths[-1] "
                f"({self.embedding_dim} != {self.channel_widths[-1]})"
            )

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "channel_widths": list(self.channel_widths),
            "embedding_dim": self.embedding_dim,
            "projection_hidden_dim": self.projection_hidden_dim,
            "projection_out_dim": self.projection_out_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            input_size=int(d["input_size"]),
            channel_widths=tuple(int(c) for c in d["channel_widths"]),
            embedding_dim=d.get("embedding_dim"),
            projection_hidden_dim=int(d["projection_hidden_dim"]),
            projection_out_dim=int(d["projection_out_dim"]),
        )


def _he_init(module: nn.Module, generator: torch.Generator | None) -> None:
    # Fan-in scaled normal weights, zero biases.
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
        elif isinstance(m, nn.Linear):
            fan_in = m.in_features
        else:
            continue
        std = math.sqrt(2.0 / fan_in)
        with torch.no_grad():
            m.weight.normal_(0.0, std, generator=generator)
            if m.bias is not None:
                m.bias.zero_()


class ConvBackbone(nn.Module):
    """Stacked stride-2 conv blocks with tanh, a linear 1x1 channel-mixing
    layer, then global average pooling to a feature vector of dim
    channel_widths[-1].

    The nonlinearity is zero-centered and the final layer linear on purpose:
    pooling rectified activations leaves every feature vector sharing a
    large positive common component, which saturates cosine similarities
    between arbitrary inputs before any training happens and blinds
    similarity-space probes.
    """

    def __init__(self, config: EncoderConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        in_ch = 1
        for width in config.channel_widths:
            layers.append(nn.Conv2d(in_ch, width, kernel_size=3, stride=2, padding=1))
            layers.append(nn.Tanh())
            in_ch = width
        layers.append(nn.Conv2d(in_ch, in_ch, kernel_size=1))
        self.blocks = nn.Sequential(*layers)
        _he_init(self, generator)

    def feature_map(self, x: torch.Tensor) -> torch.Tensor:
        """Final pre-pooling feature map, shape (N, C, h, w).

        Inputs are mean-centered per image first; otherwise the channels'
        DC gains times global brightness dominate every feature vector with
        one shared direction.
        """
        if x.ndim != 4 or x.shape[2] != self.config.input_size or x.shape[3] != self.config.input_size:
            raise ValueError(
                f"expected (N, 1, {self.config.input_size}, {self.config.input_size}) "
                f"input, got {tuple(x.shape)}"
            )
        x = x - x.mean(dim=(2, 3), keepdim=True)
        return self.blocks(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.feature_map(x).mean(dim=(2, 3))


class ProjectionHead(nn.Module):
    """Two-layer MLP (linear, tanh, linear) followed by L2 normalization.

    Zero-centered hidden activations keep the initial embedding cloud spread
    over the sphere instead of collapsed around a shared positive direction,
    so similarity thresholds behave sanely from step one.
    """

    def __init__(self, config: EncoderConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.fc1 = nn.Linear(config.embedding_dim, config.projection_hidden_dim)
        self.fc2 = nn.Linear(config.projection_hidden_dim, config.projection_out_dim)
        _he_init(self, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.fc2(torch.tanh(self.fc1(x)))
        return nn.functional.normalize(out, dim=-1, eps=1e-12)


class Encoder(nn.Module):
    """Backbone + projection head; forward yields unit-norm embeddings."""

    def __init__(self, config: EncoderConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.backbone = ConvBackbone(config, generator)
        self.head = ProjectionHead(config, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))


@dataclass
class ModelPair:
    """Query encoder (trained by gradient) and key encoder (EMA of query)."""

    query: Encoder
    key: Encoder
    momentum: float = 0.999
    config: EncoderConfig = field(default_factory=EncoderConfig)

    def named_pairs(self):
        q = dict(self.query.named_parameters())
        k = dict(self.key.named_parameters())
        if q.keys() != k.keys():
            raise ValueError("query/key parameter names differ")
        for name, qp in q.items():
            kp = k[name]
            if qp.shape != kp.shape:
                raise ValueError(f"shape mismatch for {name}: {qp.shape} vs {kp.shape}")
            yield name, qp, kp


def build_model_pair(
    config: EncoderConfig | None = None,
    momentum: float = 0.999,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> ModelPair:
    """Create query/key encoders; the key starts as an exact copy of the
    query and never receives gradients."""
    config = config or EncoderConfig()
    if not (0.0 <= momentum <= 1.0):
        raise ValueError("momentum must lie in [0, 1]")
    gen = torch.Generator().manual_seed(seed)
    query = Encoder(config, gen).to(dtype)
    key = Encoder(config, gen).to(dtype)
    key.load_state_dict(query.state_dict())
    for p in key.parameters():
        p.requires_grad_(False)
    key.eval()
    return ModelPair(query=query, key=key, momentum=momentum, config=config)


@torch.no_grad()
def ema_update(pair: ModelPair) -> ModelPair:
    """In-place key update: key <- m*key + (1-m)*query. Returns the pair."""
    m = pair.momentum
    for _, qp, kp in pair.named_pairs():
        kp.mul_(m).add_(qp, alpha=1.0 - m)
    return pair


# ---------------------------------------------------------------------------
# Feature extraction helpers (probe-side: backbone output, pre-projection)
# ---------------------------------------------------------------------------

def prepare_batch(images, input_size: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Resize a list of 2-D arrays to input_size and stack into (N, 1, S, S)."""
    resized = [
        im if im.shape == (input_size, input_size) else resize(im, input_size, input_size)
        for im in images
    ]
    batch = np.stack(resized)[:, None, :, :]
    return torch.as_tensor(batch, dtype=dtype)


@torch.no_grad()
def embed_images(
    backbone: ConvBackbone,
    images,
    batch_size: int = 256,
    l2_normalize: bool = False,
) -> np.ndarray:
    """Backbone features (global-average-pooled, pre-projection) for a batch
    of images, as a float64 (N, D) array."""
    imgs = check_images(images)
    size = backbone.config.input_size
    was_training = backbone.training
    backbone.eval()
    chunks = []
    try:
        for start in range(0, len(imgs), batch_size):
            x = prepare_batch(imgs[start : start + batch_size], size)
            feats = backbone(x)
            if l2_normalize:
                feats = nn.functional.normalize(feats, dim=-1, eps=1e-12)
            chunks.append(feats.double().numpy())
    finally:
        backbone.train(was_training)
    return np.concatenate(chunks, axis=0)
