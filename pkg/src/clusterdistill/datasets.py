"""Datasets of log-mel features: synthetic generation, WAV ingestion, disk cache.

The disk container is deliberately simple: a ``manifest.txt`` of key=value
lines plus one flat binary file per feature matrix (16-byte header: 8-byte
magic, uint32 rows, uint32 cols, little-endian; float32 payload, row-major).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, FeatureConfig, LogMelSpec, compute_logmel, load_audio
from .errors import ContractError, FormatError, IntegrityError

MATRIX_MAGIC = b"FEATMAT1"
_HEADER = struct.Struct("<8sII")

TRAIN = "train"
TEST = "test"


@dataclass
class DatasetItem:
    spec: LogMelSpec
    label: int | None
    split: str = TRAIN


@dataclass
class LabeledDataset:
    """Ordered feature matrices with optional labels and train/test split tags."""

    items: list[DatasetItem]
    class_count: int

    def __post_init__(self) -> None:
        for item in self.items:
            if item.split not in (TRAIN, TEST):
                raise ContractError(f"unknown split tag {item.split!r}")
            if item.label is not None and not 0 <= item.label < self.class_count:
                raise ContractError(
                    f"label {item.label} outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def subset(self, split: str) -> "LabeledDataset":
        return LabeledDataset(items=[i for i in self.items if i.split == split],
                              class_count=self.class_count)

    def specs(self) -> list[LogMelSpec]:
        return [i.spec for i in self.items]

    def labels(self) -> list[int | None]:
        return [i.label for i in self.items]


def _tone_frequencies(class_count: int) -> list[tuple[float, float]]:
    """One frequency pair per class, log-spaced so classes occupy disjoint bands."""
    lo, hi = 300.0, 5000.0
    span = max(class_count - 1, 1)
    base = [lo * (hi / lo) ** (c / span) for c in range(class_count)]
    if class_count == 1:
        base = [lo]
    return [(f, min(1.5 * f, 7600.0)) for f in base]


def _synthesize_clip(class_idx: int, freqs: tuple[float, float],
                     rng: np.random.Generator, duration: float,
                     sample_rate: int) -> AudioClip:
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f_a, f_b = freqs
    jitter_a = f_a * (1.0 + 0.01 * rng.uniform(-1.0, 1.0))
    jitter_b = f_b * (1.0 + 0.01 * rng.uniform(-1.0, 1.0))
    phase_a, phase_b = rng.uniform(0.0, 2.0 * np.pi, size=2)
    x = (0.30 * np.sin(2.0 * np.pi * jitter_a * t + phase_a)
         + 0.25 * np.sin(2.0 * np.pi * jitter_b * t + phase_b)
         + rng.normal(0.0, 0.005, size=n))
    x = np.clip(x, -1.0, 1.0)
    return AudioClip(id=f"synthetic-c{class_idx}", samples=x, sample_rate=sample_rate)


def generate_synthetic_dataset(class_count: int, n_per_class: int, seed: int,
                               *, test_per_class: int = 0,
                               feature_cfg: FeatureConfig | None = None,
                               duration: float = 1.1) -> LabeledDataset:
    """Labeled sinusoid-mixture dataset with known, linearly separable classes.

    Every item is deterministic in (seed, split, class, index), so regenerating
    with the same arguments is byte-identical regardless of iteration order.
    """
    if class_count < 2:
        raise ContractError("need at least 2 classes")
    if n_per_class < 8:
        raise ContractError("need at least 8 items per class")
    cfg = feature_cfg or FeatureConfig()
    freqs = _tone_frequencies(class_count)

    items: list[DatasetItem] = []
    for split_idx, (split, count) in enumerate([(TRAIN, n_per_class), (TEST, test_per_class)]):
        for c in range(class_count):
            for i in range(count):
                rng = np.random.default_rng((seed, split_idx, c, i))
                clip = _synthesize_clip(c, freqs[c], rng, duration, cfg.sample_rate)
                items.append(DatasetItem(spec=compute_logmel(clip, cfg), label=c, split=split))
    return LabeledDataset(items=items, class_count=class_count)


def write_feature_matrix(path: str | Path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ContractError("feature matrix must be 2-D")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, rows, cols))
        fh.write(values.tobytes(order="C"))


def read_feature_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, rows, cols = _HEADER.unpack(header)
        if magic != MATRIX_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        payload = fh.read()
    expected = rows * cols * 4
    if len(payload) != expected:
        raise IntegrityError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


def save_dataset_cache(dataset: LabeledDataset, directory: str | Path) -> None:
    """Write a dataset as manifest.txt plus one .f32 matrix file per item."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"count={len(dataset)}",
        f"class_count={dataset.class_count}",
    ]
    for n, item in enumerate(dataset.items):
        name = f"item_{n:05d}.f32"
        write_feature_matrix(directory / name, item.spec.values)
        lines.append(f"item.{n}.file={name}")
        lines.append(f"item.{n}.label={'none' if item.label is None else item.label}")
        lines.append(f"item.{n}.split={item.split}")
        lines.append(f"item.{n}.frame_hop={item.spec.frame_hop!r}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset_cache(directory: str | Path) -> LabeledDataset:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise FormatError(f"{directory}: no manifest.txt")
    entries: dict[str, str] = {}
    for line_no, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{manifest}:{line_no}: expected key=value")
        key, value = line.split("=", 1)
        entries[key] = value

    try:
        count = int(entries.pop("count"))
        class_count = int(entries.pop("class_count"))
    except KeyError as exc:
        raise FormatError(f"{manifest}: missing required key {exc}") from exc

    items: list[DatasetItem] = []
    for n in range(count):
        try:
            name = entries.pop(f"item.{n}.file")
            label_s = entries.pop(f"item.{n}.label")
            split = entries.pop(f"item.{n}.split")
            frame_hop = float(entries.pop(f"item.{n}.frame_hop"))
        except KeyError as exc:
            raise FormatError(f"{manifest}: missing key {exc} for item {n}") from exc
        values = read_feature_matrix(directory / name)
        label = None if label_s == "none" else int(label_s)
        spec = LogMelSpec(values=values, frame_hop=frame_hop, mel_bins=values.shape[1])
        items.append(DatasetItem(spec=spec, label=label, split=split))
    if entries:
        raise FormatError(f"{manifest}: unknown keys {sorted(entries)[:3]}")
    return LabeledDataset(items=items, class_count=class_count)


def load_wav_directory(directory: str | Path,
                       feature_cfg: FeatureConfig | None = None) -> LabeledDataset:
    """Load WAVs from a directory tree.

    Subdirectories are class names (sorted order defines label indices); WAV
    files directly in the root are unlabeled. Everything lands in the train
    split; build a test split by passing a cached dataset instead.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"{directory}: not a directory")
    cfg = feature_cfg or FeatureConfig()

    class_dirs = sorted(p for p in directory.iterdir() if p.is_dir())
    items: list[DatasetItem] = []
    for label, class_dir in enumerate(class_dirs):
        for wav in sorted(class_dir.glob("*.wav")):
            clip = load_audio(wav, target_rate=cfg.sample_rate)
            items.append(DatasetItem(spec=compute_logmel(clip, cfg), label=label))
    for wav in sorted(directory.glob("*.wav")):
        clip = load_audio(wav, target_rate=cfg.sample_rate)
        items.append(DatasetItem(spec=compute_logmel(clip, cfg), label=None))
    if not items:
        raise FormatError(f"{directory}: no WAV files found")
    return LabeledDataset(items=items, class_count=max(len(class_dirs), 1))
