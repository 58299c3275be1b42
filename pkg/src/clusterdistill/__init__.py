"""Self-supervised audio pipeline: cluster-pretrain, self-distill, linear probe."""

from .audio import (AudioClip, AugmentationPolicy, FeatureConfig, LogMelSpec,
                    compute_logmel, load_audio, sample_and_augment)
from .checkpoint import (Checkpoint, Provenance, checkpoint_hash,
                         encoder_from_checkpoint, load_checkpoint,
                         restore_into, save_checkpoint)
from .clustering import (CentroidMatrix, ClusterResult, EmbeddingBank,
                         KMeansOptions, assign, cluster_sizes, normalize_rows,
                         purity, spherical_kmeans, update_centroids)
from .config import (DatasetSpec, ExperimentConfig, config_hash, load_config,
                     write_resolved)
from .datasets import (DatasetItem, LabeledDataset, generate_synthetic_dataset,
                       load_dataset_cache, load_wav_directory,
                       read_feature_matrix, save_dataset_cache,
                       write_feature_matrix)
from .distill import (DistillConfig, DistillResult, LossBreakdown,
                      PseudoLabels, distill_forward_losses,
                      generate_pseudo_labels, run_distillation)
from .encoder import (ConvEncoder, EncoderConfig, count_parameters,
                      desk_encoder_config, init_encoder, paper_encoder_config)
from .errors import (ConfigError, ContractError, DegenerateInputError,
                     FormatError, IntegrityError, StateError)
from .metrics import MetricsRecord, append_metrics, read_metrics, render_report
from .pretrain import (EmbeddingMemoryBank, PretrainConfig, PretrainResult,
                       assignment_phase, multinomial_log_loss, pretrain_step,
                       run_pretraining)
from .probe import (EvalReport, LinearProbe, ProbeConfig, evaluate,
                    extract_frozen_features, train_linear_probe)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "AugmentationPolicy", "FeatureConfig", "LogMelSpec",
    "compute_logmel", "load_audio", "sample_and_augment",
    "Checkpoint", "Provenance", "checkpoint_hash", "encoder_from_checkpoint",
    "load_checkpoint", "restore_into", "save_checkpoint",
    "CentroidMatrix", "ClusterResult", "EmbeddingBank", "KMeansOptions",
    "assign", "cluster_sizes", "normalize_rows", "purity", "spherical_kmeans",
    "update_centroids",
    "DatasetSpec", "ExperimentConfig", "config_hash", "load_config",
    "write_resolved",
    "DatasetItem", "LabeledDataset", "generate_synthetic_dataset",
    "load_dataset_cache", "load_wav_directory", "read_feature_matrix",
    "save_dataset_cache", "write_feature_matrix",
    "DistillConfig", "DistillResult", "LossBreakdown", "PseudoLabels",
    "distill_forward_losses", "generate_pseudo_labels", "run_distillation",
    "ConvEncoder", "EncoderConfig", "count_parameters", "desk_encoder_config",
    "init_encoder", "paper_encoder_config",
    "ConfigError", "ContractError", "DegenerateInputError", "FormatError",
    "IntegrityError", "StateError",
    "MetricsRecord", "append_metrics", "read_metrics", "render_report",
    "EmbeddingMemoryBank", "PretrainConfig", "PretrainResult",
    "assignment_phase", "multinomial_log_loss", "pretrain_step",
    "run_pretraining",
    "EvalReport", "LinearProbe", "ProbeConfig", "evaluate",
    "extract_frozen_features", "train_linear_probe",
    "derive_seed",
]
