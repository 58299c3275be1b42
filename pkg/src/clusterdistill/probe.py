"""Frozen-feature linear evaluation.

The probe never sees the encoder: callers extract a fixed feature table once
and the probe trains on that table alone, so the encoder is frozen by
construction rather than by flag-setting. The probe itself is a plain softmax
regression implemented in numpy with an explicit gradient, which keeps this
stage independent of the training framework and easy to verify by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .datasets import LabeledDataset
from .distill import center_crop_batch
from .encoder import ConvEncoder
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 50

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("lr and batch_size must be positive, epochs >= 0")


@dataclass
class LinearProbe:
    """Affine map to class logits: scores = x @ weight + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ContractError("probe weight must be (d, t) with bias (t,)")

    @property
    def class_count(self) -> int:
        return self.weight.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.weight.shape[0]:
            raise ContractError(
                f"features must be (N, {self.weight.shape[0]}), got {feats.shape}")
        return feats @ self.weight + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


@dataclass
class EvalReport:
    accuracy: float
    per_class: dict[int, float]
    n_test: int
    encoder_id: str
    lr: float
    batch_size: int
    epochs: int

    def lines(self) -> list[str]:
        rows = [
            f"encoder: {self.encoder_id}",
            f"probe: lr={self.lr} batch_size={self.batch_size} epochs={self.epochs}",
            f"n_test: {self.n_test}",
            f"accuracy: {self.accuracy:.6f}",
        ]
        for cls in sorted(self.per_class):
            rows.append(f"class_{cls}_accuracy: {self.per_class[cls]:.6f}")
        return rows


def extract_frozen_features(model: ConvEncoder, dataset: LabeledDataset | list,
                            *, split: str | None = None,
                            batch_size: int = 64) -> np.ndarray:
    """Pooled block-3 features over deterministic center crops, as (N, d3)."""
    if isinstance(dataset, LabeledDataset):
        items = dataset.subset(split).items if split else dataset.items
        specs = [item.spec for item in items]
    else:
        specs = list(dataset)
    chunks = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(specs), batch_size):
            batch = center_crop_batch(specs[start:start + batch_size],
                                      model.cfg.input_frames)
            chunks.append(model(batch).pooled[2].cpu().numpy())
    model.train()
    return np.concatenate(chunks, axis=0) if chunks else np.zeros(
        (0, model.cfg.block_feature_dims[2]), dtype=np.float32)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def init_probe(feature_dim: int, class_count: int, seed: int) -> LinearProbe:
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, 0.01, size=(feature_dim, class_count))
    return LinearProbe(weight=weight, bias=np.zeros(class_count))


def train_linear_probe(features: np.ndarray, labels: np.ndarray,
                       cfg: ProbeConfig, seed: int,
                       *, class_count: int | None = None) -> LinearProbe:
    """Minibatch SGD on softmax cross-entropy over a fixed feature table."""
    feats = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if feats.ndim != 2 or y.shape != (feats.shape[0],):
        raise ContractError("features must be (N, d) with labels (N,)")
    distinct = np.unique(y)
    if distinct.size < 2:
        raise ContractError("probe training needs at least two distinct labels")
    t = class_count if class_count is not None else int(distinct.max()) + 1
    if int(distinct.max()) >= t or int(distinct.min()) < 0:
        raise ContractError(f"labels must lie in [0, {t})")

    rng = np.random.default_rng(seed)
    probe = init_probe(feats.shape[1], t, seed)
    n = feats.shape[0]
    eye = np.eye(t)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = feats[idx]
            probs = _softmax(x @ probe.weight + probe.bias)
            delta = (probs - eye[y[idx]]) / idx.size
            probe.weight -= cfg.lr * (x.T @ delta)
            probe.bias -= cfg.lr * delta.sum(axis=0)
    return probe


def evaluate(probe: LinearProbe, features: np.ndarray, labels: np.ndarray,
             *, encoder_id: str = "unknown",
             cfg: ProbeConfig | None = None) -> EvalReport:
    """Exact accuracy accounting; argmax ties resolve to the lowest class."""
    y = np.asarray(labels, dtype=np.int64)
    preds = probe.predict(features)
    if preds.shape != y.shape:
        raise ContractError("features and labels must be aligned")
    n = y.shape[0]
    correct = int((preds == y).sum())
    per_class: dict[int, float] = {}
    for cls in np.unique(y):
        mask = y == cls
        per_class[int(cls)] = float((preds[mask] == cls).sum() / mask.sum())
    cfg = cfg or ProbeConfig()
    return EvalReport(accuracy=correct / n if n else 0.0, per_class=per_class,
                      n_test=n, encoder_id=encoder_id, lr=cfg.lr,
                      batch_size=cfg.batch_size, epochs=cfg.epochs)
