"""Late-fusion survey response modeling.

Synthetic adaptive-survey cohorts, a gated cross-attention model over survey
and external feature streams, and the evaluation suite (masked metrics,
threshold sweeps, rare/frequent segmenting, gate statistics).
"""

from lantern._core import (
    DEFAULT_THRESHOLDS,
    Averaging,
    BucketCountMode,
    Dataset,
    DatasetManifest,
    EpochLog,
    FrequencyBuckets,
    GateHistogram,
    GeneratorConfig,
    IoError,
    LabelSpaceDiff,
    MetricsReport,
    Model,
    ModelConfig,
    ResponseKey,
    SegmentReport,
    TrainConfig,
    ValidationError,
    Variant,
    file_sha256_hex,
    frequency_buckets,
    gate_histogram,
    generate_dataset,
    label_space_diff,
    load_checkpoint,
    load_dataset,
    load_manifest,
    masked_bce,
    metrics_at,
    save_dataset,
    segment_eval,
    sha256_hex,
    threshold_sweep,
    train,
    train_val_split,
)

__all__ = [
    "DEFAULT_THRESHOLDS",
    "Averaging",
    "BucketCountMode",
    "Dataset",
    "DatasetManifest",
    "EpochLog",
    "FrequencyBuckets",
    "GateHistogram",
    "GeneratorConfig",
    "IoError",
    "LabelSpaceDiff",
    "MetricsReport",
    "Model",
    "ModelConfig",
    "ResponseKey",
    "SegmentReport",
    "TrainConfig",
    "ValidationError",
    "Variant",
    "file_sha256_hex",
    "frequency_buckets",
    "gate_histogram",
    "generate_dataset",
    "label_space_diff",
    "load_checkpoint",
    "load_dataset",
    "load_manifest",
    "masked_bce",
    "metrics_at",
    "save_dataset",
    "segment_eval",
    "sha256_hex",
    "threshold_sweep",
    "train",
    "train_val_split",
]
