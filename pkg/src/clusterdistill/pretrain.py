"""Clustering-guided self-supervised pretraining.

One epoch alternates two phases:

  assignment phase: spherical k-means over the (normalized) embedding memory
    bank yields pseudo-labels for every sample, and the frozen prototype head's
    rows are overwritten with the centroids;

  training phase: minibatch SGD on the multinomial logistic loss between
    softmax(prototype logits) and the fixed pseudo-labels, updating only the
    trunk and projection head. Right after each gradient step the batch's
    projector embeddings (l2-normalized) are written back into the bank.

The two phases run in isolation only at the first epoch, where a dedicated
no-grad pass over the whole dataset fills the bank; afterwards the assignment
phase reuses the bank exactly as the previous epoch's training left it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import AugmentationPolicy, LogMelSpec, sample_and_augment
from .clustering import (
    ClusterResult,
    KMeansOptions,
    cluster_sizes,
    normalize_rows,
    spherical_kmeans,
)
from .datasets import LabeledDataset
from .encoder import ConvEncoder, EncoderConfig, init_encoder
from .errors import ConfigError, ContractError, StateError
from .seeding import derive_seed


@dataclass(frozen=True)
class PretrainConfig:
    clusters: int = 512
    lr: float = 0.005
    batch_size: int = 512
    epochs: int = 100
    noise_std: float = 0.1

    def __post_init__(self) -> None:
        if self.clusters <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigError("clusters, batch_size and epochs must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")


@dataclass
class PseudoLabelSet:
    labels: np.ndarray
    source_epoch: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)


class EmbeddingMemoryBank:
    """Per-sample cache of projector embeddings, refreshed every iteration."""

    def __init__(self, size: int, dim: int):
        if size <= 0 or dim <= 0:
            raise ContractError("bank size and dim must be positive")
        self.vectors = np.zeros((size, dim), dtype=np.float32)
        self.epoch_tag = np.full(size, -1, dtype=np.int64)

    def write(self, indices: np.ndarray, embeddings: np.ndarray, epoch: int) -> None:
        indices = np.asarray(indices)
        embeddings = np.asarray(embeddings, dtype=np.float32)
        if embeddings.shape != (indices.size, self.vectors.shape[1]):
            raise ContractError("embedding block does not match bank slots")
        self.vectors[indices] = embeddings
        self.epoch_tag[indices] = epoch

    @property
    def complete(self) -> bool:
        return bool(np.all(self.epoch_tag >= 0))


def multinomial_log_loss(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of -sum_k q_k log p_k for one-hot q.

    ``p`` rows must already be probability vectors; entries are clamped at
    1e-12 before the log so perfect predictions stay finite.
    """
    if p.shape != q.shape:
        raise ContractError("p and q must have identical shapes")
    row_sums = p.detach().sum(dim=-1)
    if not torch.all((row_sums - 1.0).abs() <= 1e-6):
        raise ContractError("p rows must sum to 1")
    q_detached = q.detach()
    if not torch.all((q_detached.sum(dim=-1) - 1.0).abs() <= 1e-9):
        raise ContractError("q rows must be one-hot")
    is_binary = torch.all((q_detached == 0.0) | (q_detached == 1.0))
    if not is_binary:
        raise ContractError("q rows must be one-hot")
    logp = torch.log(torch.clamp(p, min=1e-12))
    return -(q * logp).sum(dim=-1).mean()


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(labels, num_classes=num_classes).to(torch.get_default_dtype())


def prototype_probabilities(model: ConvEncoder, batch: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward to (softmax prototype probabilities, raw projector embeddings)."""
    feats = model(batch)
    g = model.apply_head("proj", feats.final)
    logits = model.apply_head("prot", g)
    return torch.softmax(logits, dim=-1), g


def assignment_phase(bank: EmbeddingMemoryBank, k: int, rng: np.random.Generator,
                     model: ConvEncoder, *, epoch: int,
                     opts: KMeansOptions | None = None) -> tuple[PseudoLabelSet, ClusterResult]:
    """Cluster the bank, emit pseudo-labels, and load centroids into the prototype head."""
    if not bank.complete:
        raise StateError("memory bank has unwritten slots; fill it before clustering")
    rows = normalize_rows(bank.vectors.astype(np.float64))
    result = spherical_kmeans(rows, k, opts=opts, rng=rng)
    model.set_prototypes(result.centroids)
    return PseudoLabelSet(labels=result.labels, source_epoch=epoch), result


def pretrain_step(model: ConvEncoder, optimizer: torch.optim.Optimizer,
                  batch: torch.Tensor, labels: torch.Tensor,
                  bank: EmbeddingMemoryBank, indices: np.ndarray,
                  epoch: int) -> float:
    """One gradient step against fixed pseudo-labels, then refresh bank slots.

    The stored embeddings are the ones computed by this step's forward pass
    (pre-update parameters), matching what the next assignment phase expects.
    """
    probs, g = prototype_probabilities(model, batch)
    loss = multinomial_log_loss(probs, one_hot(labels, model.cfg.prototype_count))
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()

    with torch.no_grad():
        g_rows = g.detach().cpu().numpy().astype(np.float64)
    bank.write(indices, normalize_rows(g_rows).astype(np.float32), epoch)
    return float(loss.detach())


@dataclass
class PretrainEpochRecord:
    epoch: int
    loss_mean: float
    kmeans_objective: float
    cluster_size_hist: list[int]


@dataclass
class PretrainResult:
    model: ConvEncoder
    history: list[PretrainEpochRecord] = field(default_factory=list)


def _augment_batch(specs: list[LogMelSpec], indices: np.ndarray, epoch: int,
                   aug_seed: int, crop_frames: int, noise_std: float) -> torch.Tensor:
    views = []
    for idx in indices:
        policy = AugmentationPolicy(
            crop_frames=crop_frames, noise_std=noise_std, allow_time_shift=True,
            rng=np.random.default_rng((aug_seed, epoch, int(idx))))
        views.append(sample_and_augment(specs[int(idx)], policy).values)
    return torch.from_numpy(np.stack(views))


def run_pretraining(cfg: PretrainConfig, dataset: LabeledDataset,
                    encoder_cfg: EncoderConfig, seed: int,
                    *, kmeans_opts: KMeansOptions | None = None) -> PretrainResult:
    """Full pretraining loop over the train split (labels are ignored)."""
    items = dataset.subset("train").items or dataset.items
    specs = [item.spec for item in items]
    n = len(specs)
    if n == 0:
        raise ConfigError("dataset is empty")
    if n < cfg.clusters:
        raise ConfigError(
            f"dataset size {n} is below the cluster count {cfg.clusters}; lower clusters")
    if encoder_cfg.prototype_count != cfg.clusters:
        raise ConfigError("encoder prototype_count must equal the configured cluster count")

    model = init_encoder(encoder_cfg, derive_seed(seed, "model"))
    optimizer = torch.optim.SGD(model.trainable_parameters(), lr=cfg.lr)
    bank = EmbeddingMemoryBank(n, encoder_cfg.proj_out)
    cluster_rng = np.random.default_rng(derive_seed(seed, "cluster"))
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    aug_seed = derive_seed(seed, "augment")

    history: list[PretrainEpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        if epoch == 1:
            # isolated first epoch: fill the bank before any assignment
            model.eval()
            with torch.no_grad():
                for start in range(0, n, cfg.batch_size):
                    idx = np.arange(start, min(start + cfg.batch_size, n))
                    batch = _augment_batch(specs, idx, 0, aug_seed,
                                           encoder_cfg.input_frames, cfg.noise_std)
                    _, g = prototype_probabilities(model, batch)
                    bank.write(idx, normalize_rows(
                        g.cpu().numpy().astype(np.float64)).astype(np.float32), 0)
            model.train()

        pseudo, cluster_result = assignment_phase(
            bank, cfg.clusters, cluster_rng, model, epoch=epoch, opts=kmeans_opts)

        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = _augment_batch(specs, idx, epoch, aug_seed,
                                   encoder_cfg.input_frames, cfg.noise_std)
            labels = torch.from_numpy(pseudo.labels[idx])
            losses.append(pretrain_step(model, optimizer, batch, labels, bank, idx, epoch))

        history.append(PretrainEpochRecord(
            epoch=epoch,
            loss_mean=float(np.mean(losses)),
            kmeans_objective=cluster_result.objective,
            cluster_size_hist=cluster_sizes(pseudo.labels, cfg.clusters)))

    return PretrainResult(model=model, history=history)
