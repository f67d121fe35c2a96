"""Scikit-learn style front door: fit pretrains the twin encoders on a
corpus of images via the coarse-to-fine contrastive schedule, transform maps
images to backbone feature vectors.

The estimator composes with the wider ecosystem (get_params/set_params,
clone) and round-trips through the binary checkpoint format.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .contrastive import StageSchedule, TrainConfig, run_schedule
from .image import AugmentationConfig
from .networks import EncoderConfig, build_model_pair, embed_images
from .validation import check_images


class HierarchicalContrastiveEncoder(BaseEstimator, TransformerMixin):
    """Self-supervised image encoder trained with hierarchical tile
    contrastive learning and similarity-pruned negatives.

    Parameters mirror TrainConfig; see that class for semantics. ``X`` for
    both fit and transform is a sequence of 2-D float arrays in [0, 1] (or
    one 3-D array); ``y`` is ignored.
    """

    def __init__(
        self,
        input_size: int = 64,
        channel_widths: tuple[int, ...] = (16, 32, 64, 128),
        projection_hidden_dim: int = 128,
        projection_out_dim: int = 128,
        temperature: float = 0.2,
        prune_threshold: float = 0.8,
        bank_capacity: int = 4096,
        ema_momentum: float = 0.999,
        learning_rate: float = 0.03,
        weight_decay: float = 1e-4,
        sgd_momentum: float = 0.9,
        batch_size: int = 32,
        schedule: tuple[tuple[int, int], ...] = ((0, 1000), (2, 1000), (4, 1000)),
        crop_scale_range: tuple[float, float] = (0.6, 1.0),
        jitter_strength: float = 0.4,
        blur_sigma_range: tuple[float, float] = (0.0, 1.5),
        rotation_degrees: float = 10.0,
        use_pruning: bool = True,
        reset_bank_between_stages: bool = False,
        workers: int = 1,
        seed: int = 0,
    ):
        self.input_size = input_size
        self.channel_widths = channel_widths
        self.projection_hidden_dim = projection_hidden_dim
        self.projection_out_dim = projection_out_dim
        self.temperature = temperature
        self.prune_threshold = prune_threshold
        self.bank_capacity = bank_capacity
        self.ema_momentum = ema_momentum
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.sgd_momentum = sgd_momentum
        self.batch_size = batch_size
        self.schedule = schedule
        self.crop_scale_range = crop_scale_range
        self.jitter_strength = jitter_strength
        self.blur_sigma_range = blur_sigma_range
        self.rotation_degrees = rotation_degrees
        self.use_pruning = use_pruning
        self.reset_bank_between_stages = reset_bank_between_stages
        self.workers = workers
        self.seed = seed

    def build_train_config(self) -> TrainConfig:
        """Resolve the estimator parameters into a TrainConfig."""
        encoder = EncoderConfig(
            input_size=self.input_size,
            channel_widths=tuple(self.channel_widths),
            projection_hidden_dim=self.projection_hidden_dim,
            projection_out_dim=self.projection_out_dim,
        )
        augmentation = AugmentationConfig(
            crop_scale_range=tuple(self.crop_scale_range),
            jitter_strength=self.jitter_strength,
            blur_sigma_range=tuple(self.blur_sigma_range),
            rotation_degrees=self.rotation_degrees,
            seed=self.seed,
        )
        return TrainConfig(
            temperature=self.temperature,
            prune_threshold=self.prune_threshold,
            bank_capacity=self.bank_capacity,
            momentum=self.ema_momentum,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            sgd_momentum=self.sgd_momentum,
            batch_size=self.batch_size,
            schedule=StageSchedule(tuple((int(n), int(s)) for n, s in self.schedule)),
            seed=self.seed,
            encoder=encoder,
            augmentation=augmentation,
            use_pruning=self.use_pruning,
            reset_bank_between_stages=self.reset_bank_between_stages,
            workers=self.workers,
        )

    def fit(self, X, y=None):
        images = check_images(X)
        config = self.build_train_config()
        pair = build_model_pair(config.encoder, momentum=config.momentum, seed=config.seed)
        pair, records = run_schedule(pair, images, config)
        self.model_pair_ = pair
        self.config_ = config
        self.training_log_ = records
        self.n_features_out_ = config.encoder.embedding_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_pair_"):
            raise NotFittedError("call fit or from_checkpoint before transform")

    def transform(self, X) -> np.ndarray:
        """Backbone features (pre-projection, global-average-pooled) for a
        batch of images, shape (N, embedding_dim)."""
        self._check_fitted()
        return embed_images(self.model_pair_.query.backbone, X)

    def save(self, path) -> None:
        from .checkpoint import save_checkpoint

        self._check_fitted()
        save_checkpoint(self.model_pair_, self.config_, path)

    @classmethod
    def from_checkpoint(cls, path) -> "HierarchicalContrastiveEncoder":
        from .checkpoint import load_checkpoint

        pair, config = load_checkpoint(path)
        est = cls(
            input_size=config.encoder.input_size,
            channel_widths=tuple(config.encoder.channel_widths),
            projection_hidden_dim=config.encoder.projection_hidden_dim,
            projection_out_dim=config.encoder.projection_out_dim,
            temperature=config.temperature,
            prune_threshold=config.prune_threshold,
            bank_capacity=config.bank_capacity,
            ema_momentum=config.momentum,
            learning_rate=config.learning_rate,
            weight_decay=config.weight_decay,
            sgd_momentum=config.sgd_momentum,
            batch_size=config.batch_size,
            schedule=config.schedule.stages,
            crop_scale_range=config.augmentation.crop_scale_range,
            jitter_strength=config.augmentation.jitter_strength,
            blur_sigma_range=config.augmentation.blur_sigma_range,
            rotation_degrees=config.augmentation.rotation_degrees,
            use_pruning=config.use_pruning,
            reset_bank_between_stages=config.reset_bank_between_stages,
            workers=config.workers,
            seed=config.seed,
        )
        est.model_pair_ = pair
        est.config_ = config
        est.training_log_ = []
        est.n_features_out_ = config.encoder.embedding_dim
        return est
