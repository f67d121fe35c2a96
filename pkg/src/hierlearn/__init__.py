"""Hierarchical contrastive pretraining at desk scale.

Images are recursively tiled into 2^n patches at increasing granularity,
twin encoders (gradient-trained query, EMA key) learn with an InfoNCE loss
over a FIFO memory bank whose near-duplicate negatives are pruned per
anchor, and a probe suite quantifies locality, compositionality, dense
correspondence, cross-resolution identity, and few-shot usefulness of the
learned embedding space.
"""

from .contrastive import (
    MemoryBank,
    PrunedBank,
    StageSchedule,
    StepStats,
    TrainConfig,
    cosine_sim,
    info_nce,
    keep_mask,
    make_optimizer,
    prune,
    run_schedule,
    train_step,
    write_log,
)
from .checkpoint import (
    BadMagicError,
    CheckpointError,
    PayloadMismatchError,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .decomposer import PatchRegion, decompose, max_granularity, sample_instance, sample_region
from .estimator import HierarchicalContrastiveEncoder
from .image import (
    AugmentationConfig,
    PgmHeaderError,
    PgmPayloadError,
    augment,
    crop,
    load_image,
    resize,
    save_image,
)
from .networks import (
    ConvBackbone,
    Encoder,
    EncoderConfig,
    ModelPair,
    ProjectionHead,
    build_model_pair,
    ema_update,
    embed_images,
)
from .probes import (
    CompositionalityReport,
    CorrespondenceResult,
    LinearProbeReport,
    LocalityReport,
    MultiresReport,
    linear_probe,
    probe_compositionality,
    probe_correspondence,
    probe_locality,
    probe_multires,
)
from .synthdata import (
    AnnotationBoundsError,
    Corpus,
    LandmarkAnnotation,
    ManifestError,
    SynthConfig,
    corpus_from_directory,
    generate_corpus,
    load_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentationConfig",
    "AnnotationBoundsError",
    "BadMagicError",
    "CheckpointError",
    "CompositionalityReport",
    "ConvBackbone",
    "Corpus",
    "CorrespondenceResult",
    "Encoder",
    "EncoderConfig",
    "HierarchicalContrastiveEncoder",
    "LandmarkAnnotation",
    "LinearProbeReport",
    "LocalityReport",
    "ManifestError",
    "MemoryBank",
    "ModelPair",
    "MultiresReport",
    "PatchRegion",
    "PgmHeaderError",
    "PgmPayloadError",
    "ProjectionHead",
    "PrunedBank",
    "PayloadMismatchError",
    "StageSchedule",
    "StepStats",
    "SynthConfig",
    "TrainConfig",
    "VersionMismatchError",
    "augment",
    "build_model_pair",
    "corpus_from_directory",
    "cosine_sim",
    "crop",
    "decompose",
    "ema_update",
    "embed_images",
    "generate_corpus",
    "info_nce",
    "keep_mask",
    "linear_probe",
    "load_checkpoint",
    "load_corpus",
    "load_image",
    "make_optimizer",
    "max_granularity",
    "probe_compositionality",
    "probe_correspondence",
    "probe_locality",
    "probe_multires",
    "prune",
    "resize",
    "run_schedule",
    "sample_instance",
    "sample_region",
    "save_checkpoint",
    "save_image",
    "train_step",
    "write_log",
]
