"""Four-block convolutional encoder and its attached heads.

Blocks are Conv3x3 -> GroupNorm -> GELU -> AvgPool(2); block features are
global average pools, so pooled widths equal the block channel counts.
Normalization is per-item (GroupNorm), which keeps every forward batch-size
invariant, and all pieces are smooth, so gradients check cleanly against
finite differences.

Heads:
  * proj:    final embedding -> projection space (two linear layers, GELU)
  * prot:    projection -> prototype logits; linear, bias-free, frozen; its
             weight rows are overwritten with cluster centroids
  * cl:      final embedding -> class logits
  * block i: adapter (d_i -> d4), then GELU + linear to class logits; the
             adapter output is exposed for feature-matching losses
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ContractError

PAPER_BLOCK_CHANNELS = (256, 512, 1024, 2048)
PAPER_PROJ_OUT = 512
DESK_DIVISOR = 8


@dataclass(frozen=True)
class EncoderConfig:
    block_channels: tuple[int, int, int, int] = PAPER_BLOCK_CHANNELS
    proj_out: int = PAPER_PROJ_OUT
    prototype_count: int = 512
    class_count: int = 10
    input_frames: int = 96
    mel_bins: int = 64
    scale_profile: str = "paper"

    def __post_init__(self) -> None:
        if len(self.block_channels) != 4 or any(c <= 0 for c in self.block_channels):
            raise ConfigError("block_channels must be 4 positive ints")
        for name in ("proj_out", "prototype_count", "class_count", "input_frames", "mel_bins"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.scale_profile not in ("paper", "desk"):
            raise ConfigError(f"unknown scale_profile {self.scale_profile!r}")
        if self.scale_profile == "desk":
            pairs = zip(PAPER_BLOCK_CHANNELS, self.block_channels)
            if any(paper % desk != 0 for paper, desk in pairs):
                raise ConfigError("desk block widths must divide the paper widths")

    @property
    def block_feature_dims(self) -> tuple[int, int, int, int]:
        # global average pooling: pooled width == channel count
        return self.block_channels

    @property
    def embed_dim(self) -> int:
        return self.block_channels[-1]


def paper_encoder_config(class_count: int = 10, prototype_count: int = 512) -> EncoderConfig:
    return EncoderConfig(class_count=class_count, prototype_count=prototype_count)


def desk_encoder_config(class_count: int = 4, prototype_count: int = 8) -> EncoderConfig:
    return EncoderConfig(
        block_channels=tuple(c // DESK_DIVISOR for c in PAPER_BLOCK_CHANNELS),
        proj_out=PAPER_PROJ_OUT // DESK_DIVISOR,
        prototype_count=prototype_count,
        class_count=class_count,
        scale_profile="desk",
    )


@dataclass
class BlockFeatures:
    """Per-block pooled features from one forward pass; ``final`` is block 4's."""

    pooled: tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]

    @property
    def final(self) -> torch.Tensor:
        return self.pooled[3]


def _norm_groups(channels: int) -> int:
    return 8 if channels % 8 == 0 else 1


class _ConvBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel_size=3, padding=1)
        self.norm = nn.GroupNorm(_norm_groups(c_out), c_out)
        self.act = nn.GELU()
        self.pool = nn.AvgPool2d(2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.act(self.norm(self.conv(x))))


class _BlockHead(nn.Module):
    """Adapter to embedding width plus a classifier on the adapted features."""

    def __init__(self, d_in: int, d_embed: int, class_count: int):
        super().__init__()
        self.adapter = nn.Linear(d_in, d_embed)
        self.act = nn.GELU()
        self.out = nn.Linear(d_embed, class_count)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        adapted = self.adapter(x)
        return adapted, self.out(self.act(adapted))


class ConvEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        chans = (1,) + tuple(cfg.block_channels)
        self.blocks = nn.ModuleList(
            _ConvBlock(chans[i], chans[i + 1]) for i in range(4))
        d4 = cfg.embed_dim
        self.proj_head = nn.Sequential(
            nn.Linear(d4, d4), nn.GELU(), nn.Linear(d4, cfg.proj_out))
        self.prot_head = nn.Linear(cfg.proj_out, cfg.prototype_count, bias=False)
        self.cls_head = nn.Linear(d4, cfg.class_count)
        self.block_heads = nn.ModuleList(
            _BlockHead(cfg.block_channels[i], d4, cfg.class_count) for i in range(3))
        with torch.no_grad():
            w = self.prot_head.weight
            w.div_(w.norm(dim=1, keepdim=True))
        self.prot_head.weight.requires_grad_(False)

    def forward(self, batch: torch.Tensor) -> BlockFeatures:
        if batch.dim() == 3:
            batch = batch.unsqueeze(1)
        if batch.dim() != 4 or batch.shape[1] != 1:
            raise ContractError("batch must be [B, frames, mel] or [B, 1, frames, mel]")
        if batch.shape[2] != self.cfg.input_frames or batch.shape[3] != self.cfg.mel_bins:
            raise ContractError(
                f"batch geometry {tuple(batch.shape[2:])} does not match "
                f"({self.cfg.input_frames}, {self.cfg.mel_bins})")
        pooled = []
        x = batch
        for block in self.blocks:
            x = block(x)
            pooled.append(x.mean(dim=(2, 3)))
        return BlockFeatures(pooled=tuple(pooled))

    def apply_head(self, head: str, feats: torch.Tensor):
        """Apply a named head; block heads return (adapted, logits)."""
        table = {"proj": self.proj_head, "prot": self.prot_head, "cl": self.cls_head}
        if head in table:
            layer = table[head]
            expected = layer[0].in_features if head == "proj" else layer.in_features
            if feats.shape[-1] != expected:
                raise ContractError(f"head {head!r} expects dim {expected}, "
                                    f"got {feats.shape[-1]}")
            return layer(feats)
        if head in ("block1", "block2", "block3"):
            i = int(head[-1]) - 1
            expected = self.cfg.block_channels[i]
            if feats.shape[-1] != expected:
                raise ContractError(f"head {head!r} expects dim {expected}, "
                                    f"got {feats.shape[-1]}")
            return self.block_heads[i](feats)
        raise ContractError(f"unknown head {head!r}")

    def set_prototypes(self, centroids) -> None:
        """Overwrite the frozen prototype head with a d x K centroid matrix."""
        C = torch.as_tensor(getattr(centroids, "C", centroids),
                            dtype=self.prot_head.weight.dtype)
        if tuple(C.shape) != (self.cfg.proj_out, self.cfg.prototype_count):
            raise ContractError(
                f"centroid matrix must be {self.cfg.proj_out} x {self.cfg.prototype_count}, "
                f"got {tuple(C.shape)}")
        with torch.no_grad():
            self.prot_head.weight.copy_(C.T)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def init_encoder(cfg: EncoderConfig, seed: int) -> ConvEncoder:
    """Deterministically initialized encoder (same cfg and seed, same weights)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed & (2**63 - 1))
        return ConvEncoder(cfg)


def count_parameters(model: ConvEncoder, subset: str) -> int:
    """Exact parameter count of the trunk: blocks 1-3 (student) or all 4 (full)."""
    if subset == "student":
        blocks = list(model.blocks)[:3]
    elif subset == "full":
        blocks = list(model.blocks)
    else:
        raise ContractError(f"unknown subset {subset!r}")
    return sum(p.numel() for b in blocks for p in b.parameters())
