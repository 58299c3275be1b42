"""Pseudo-label-guided self-distillation on a freshly initialized encoder.

The pretrained encoder only supplies pseudo-labels: its final-block features
over the target set are clustered with k = class count. A new encoder is then
trained where blocks 1-3 act as the student and the block-4 path (through the
classifier head) as the teacher. Each student block i contributes three terms:

    cross-entropy of its logits against the pseudo-labels,
    KL(teacher distribution || block distribution) with the teacher detached,
    mean squared error between its adapted features and the detached final
    pooled features (the "hint" toward the deepest representation).

The total is

    total = ce + alpha * sum_i ce_i + (1 - alpha) * sum_i kl_i + beta * sum_i mse_i
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import AugmentationPolicy, LogMelSpec, sample_and_augment
from .clustering import KMeansOptions, normalize_rows, purity, spherical_kmeans
from .datasets import LabeledDataset
from .encoder import ConvEncoder, EncoderConfig, init_encoder
from .errors import ConfigError, ContractError
from .pretrain import multinomial_log_loss, one_hot
from .seeding import derive_seed


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 0.7
    beta: float = 0.003
    lr: float = 0.007
    batch_size: int = 512
    epochs: int = 50
    class_count: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("lr and batch_size must be positive, epochs >= 0")
        if self.class_count < 2:
            raise ConfigError("class_count must be at least 2")


@dataclass
class PseudoLabels:
    labels: np.ndarray
    purity: float | None = None

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)


@dataclass
class LossBreakdown:
    """All components of one distillation forward pass (torch scalars)."""

    ce: torch.Tensor
    ce_blocks: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    kl_blocks: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    mse_blocks: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    total: torch.Tensor

    def to_floats(self) -> dict[str, float]:
        out = {"loss_ce": float(self.ce.detach())}
        for i in range(3):
            out[f"loss_ce_block{i + 1}"] = float(self.ce_blocks[i].detach())
            out[f"loss_kl_block{i + 1}"] = float(self.kl_blocks[i].detach())
            out[f"loss_mse_block{i + 1}"] = float(self.mse_blocks[i].detach())
        out["loss_all"] = float(self.total.detach())
        return out


def center_crop_batch(specs: list[LogMelSpec], crop_frames: int) -> torch.Tensor:
    """Deterministic evaluation view: centered crop, no noise."""
    views = []
    policy = AugmentationPolicy(crop_frames=crop_frames, noise_std=0.0,
                                allow_time_shift=False)
    for spec in specs:
        views.append(sample_and_augment(spec, policy).values)
    return torch.from_numpy(np.stack(views))


def encode_final_features(model: ConvEncoder, specs: list[LogMelSpec],
                          batch_size: int = 64) -> np.ndarray:
    """Final-block pooled features (no projector), deterministic center crops."""
    chunks = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(specs), batch_size):
            batch = center_crop_batch(specs[start:start + batch_size],
                                      model.cfg.input_frames)
            chunks.append(model(batch).final.cpu().numpy())
    model.train()
    return np.concatenate(chunks, axis=0)


def generate_pseudo_labels(model_pre: ConvEncoder, dataset: LabeledDataset,
                           class_count: int, seed: int,
                           *, kmeans_opts: KMeansOptions | None = None) -> PseudoLabels:
    """Cluster the pretrained encoder's features into one cluster per class.

    Labels are computed once and cached by the caller for all epochs; the
    purity against true labels (when available) is diagnostic only.
    """
    items = dataset.subset("train").items or dataset.items
    if len(items) < class_count:
        raise ContractError(
            f"need at least {class_count} items to form {class_count} clusters")
    feats = encode_final_features(model_pre, [i.spec for i in items])
    rows = normalize_rows(feats.astype(np.float64))
    result = spherical_kmeans(rows, class_count, opts=kmeans_opts,
                              rng=np.random.default_rng(seed))
    true = [i.label for i in items]
    score = None
    if all(label is not None for label in true):
        score = purity(result.labels, np.asarray(true))
    return PseudoLabels(labels=result.labels, purity=score)


def kl_from_teacher(teacher_logits: torch.Tensor,
                        student_logits: torch.Tensor) -> torch.Tensor:
    """Batch-mean KL(softmax(teacher) || softmax(student)), teacher detached."""
    log_t = torch.log_softmax(teacher_logits.detach(), dim=-1)
    log_s = torch.log_softmax(student_logits, dim=-1)
    return (log_t.exp() * (log_t - log_s)).sum(dim=-1).mean()


def distill_forward_losses(model: ConvEncoder, batch: torch.Tensor,
                           labels: torch.Tensor, cfg: DistillConfig) -> LossBreakdown:
    """One forward pass producing every loss component and the weighted total."""
    if labels.shape[0] != batch.shape[0]:
        raise ContractError("batch and labels must be aligned")
    feats = model(batch)
    final = feats.final
    teacher_logits = model.apply_head("cl", final)
    targets = one_hot(labels, cfg.class_count)

    ce = multinomial_log_loss(torch.softmax(teacher_logits, dim=-1), targets)
    ce_blocks, kl_blocks, mse_blocks = [], [], []
    final_detached = final.detach()
    for i in range(3):
        adapted, logits = model.apply_head(f"block{i + 1}", feats.pooled[i])
        ce_blocks.append(multinomial_log_loss(torch.softmax(logits, dim=-1), targets))
        kl_blocks.append(kl_from_teacher(teacher_logits, logits))
        mse_blocks.append(((adapted - final_detached) ** 2).mean())

    total = (ce
             + cfg.alpha * sum(ce_blocks)
             + (1.0 - cfg.alpha) * sum(kl_blocks)
             + cfg.beta * sum(mse_blocks))
    return LossBreakdown(ce=ce, ce_blocks=tuple(ce_blocks),
                         kl_blocks=tuple(kl_blocks), mse_blocks=tuple(mse_blocks),
                         total=total)


@dataclass
class DistillEpochRecord:
    epoch: int
    means: dict[str, float]


@dataclass
class DistillResult:
    model: ConvEncoder
    history: list[DistillEpochRecord] = field(default_factory=list)


def run_distillation(cfg: DistillConfig, dataset: LabeledDataset,
                     pseudo: PseudoLabels, encoder_cfg: EncoderConfig,
                     seed: int) -> DistillResult:
    """SGD over the full objective; every head except the prototypes trains."""
    items = dataset.subset("train").items or dataset.items
    specs = [i.spec for i in items]
    n = len(specs)
    if pseudo.labels.shape[0] != n:
        raise ContractError("pseudo-label count does not match the training split")
    if encoder_cfg.class_count != cfg.class_count:
        raise ConfigError("encoder class_count must match the distillation class count")

    model = init_encoder(encoder_cfg, derive_seed(seed, "model"))
    optimizer = torch.optim.SGD(model.trainable_parameters(), lr=cfg.lr)
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    labels_all = torch.from_numpy(pseudo.labels)

    history: list[DistillEpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        sums: dict[str, float] = {}
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = center_crop_batch([specs[int(i)] for i in idx],
                                      encoder_cfg.input_frames)
            breakdown = distill_forward_losses(model, batch, labels_all[idx], cfg)
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            for key, value in breakdown.to_floats().items():
                sums[key] = sums.get(key, 0.0) + value
            batches += 1
        history.append(DistillEpochRecord(
            epoch=epoch, means={k: v / batches for k, v in sums.items()}))

    return DistillResult(model=model, history=history)
