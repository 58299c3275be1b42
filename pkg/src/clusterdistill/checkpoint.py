"""Binary checkpoint container for encoder parameters.

Layout (all integers little-endian):

    bytes 0..3    magic b"CKPT"
    bytes 4..7    format version (u32)
    bytes 8..15   header length in bytes (u64)
    header        canonical JSON (sorted keys, no whitespace)
    payload       float32 little-endian parameter blobs, concatenated in
                  sorted blob-name order

The header records each blob's shape and byte offset plus a SHA-256 of the
payload, the encoder configuration, and provenance (stage, epoch, config
hash, seed). Canonical JSON and sorted blob order make save/load/save
byte-identical, so artifact hashes are stable across re-runs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .encoder import ConvEncoder, EncoderConfig, init_encoder
from .errors import ContractError, FormatError, IntegrityError

MAGIC = b"CKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")

PRETRAIN_PREFIXES = ("blocks.", "proj_head.")
DISTILL_PREFIXES = ("blocks.", "block_heads.", "cls_head.")
STAGE_PREFIXES = {"pretrain": PRETRAIN_PREFIXES, "distill": DISTILL_PREFIXES}


@dataclass(frozen=True)
class Provenance:
    stage: str
    epoch: int
    config_hash: str
    seed: int

    def to_dict(self) -> dict:
        return {"stage": self.stage, "epoch": self.epoch,
                "config_hash": self.config_hash, "seed": self.seed}


@dataclass
class Checkpoint:
    version: int
    encoder_config: dict
    provenance: dict
    blobs: dict[str, np.ndarray] = field(default_factory=dict)


def _encoder_config_dict(cfg: EncoderConfig) -> dict:
    return {
        "block_channels": list(cfg.block_channels),
        "proj_out": cfg.proj_out,
        "prototype_count": cfg.prototype_count,
        "class_count": cfg.class_count,
        "input_frames": cfg.input_frames,
        "mel_bins": cfg.mel_bins,
        "scale_profile": cfg.scale_profile,
    }


def encoder_config_from_dict(data: dict) -> EncoderConfig:
    try:
        return EncoderConfig(
            block_channels=tuple(data["block_channels"]),
            proj_out=data["proj_out"],
            prototype_count=data["prototype_count"],
            class_count=data["class_count"],
            input_frames=data["input_frames"],
            mel_bins=data["mel_bins"],
            scale_profile=data["scale_profile"],
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint encoder config missing field {exc}") from exc


def collect_blobs(model: ConvEncoder, stage: str) -> dict[str, np.ndarray]:
    """Select the named parameters a stage is responsible for persisting."""
    if stage not in STAGE_PREFIXES:
        raise ContractError(f"unknown checkpoint stage {stage!r}")
    prefixes = STAGE_PREFIXES[stage]
    blobs = {}
    for name, param in model.named_parameters():
        if name.startswith(prefixes):
            blobs[name] = param.detach().cpu().numpy().astype(np.float32)
    return blobs


def save_checkpoint(model: ConvEncoder, provenance: Provenance, path,
                    *, blobs: dict[str, np.ndarray] | None = None) -> str:
    """Write the container and return the SHA-256 of the whole file."""
    if blobs is None:
        blobs = collect_blobs(model, provenance.stage)
    if not blobs:
        raise ContractError("refusing to save a checkpoint with no blobs")

    names = sorted(blobs)
    payload_parts = []
    index = {}
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(np.asarray(blobs[name], dtype=np.float32))
        raw = arr.tobytes()
        index[name] = {"shape": list(arr.shape), "offset": offset,
                       "size": len(raw)}
        payload_parts.append(raw)
        offset += len(raw)
    payload = b"".join(payload_parts)

    header = {
        "blobs": index,
        "encoder_config": _encoder_config_dict(model.cfg),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "provenance": provenance.to_dict(),
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    return checkpoint_hash(path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREAMBLE.size:
        raise FormatError("checkpoint file too short for its preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    header_end = _PREAMBLE.size + header_len
    if len(data) < header_end:
        raise FormatError("checkpoint header truncated")
    try:
        header = json.loads(data[_PREAMBLE.size:header_end])
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}") from exc

    payload = data[header_end:]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise IntegrityError("checkpoint payload hash mismatch")

    blobs = {}
    for name, entry in header["blobs"].items():
        start, size = entry["offset"], entry["size"]
        if start + size > len(payload):
            raise FormatError(f"blob {name!r} extends past the payload")
        flat = np.frombuffer(payload[start:start + size], dtype="<f4")
        blobs[name] = flat.reshape(entry["shape"]).copy()
    return Checkpoint(version=version, encoder_config=header["encoder_config"],
                      provenance=header["provenance"], blobs=blobs)


def restore_into(model: ConvEncoder, ckpt: Checkpoint) -> None:
    """Copy checkpoint blobs into identically named model parameters.

    Parameters absent from the checkpoint keep their current values; a blob
    with no matching parameter or a shape mismatch is a contract error that
    names the offending blob.
    """
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, arr in ckpt.blobs.items():
            if name not in params:
                raise ContractError(f"blob {name!r} has no matching parameter")
            target = params[name]
            if tuple(target.shape) != tuple(arr.shape):
                raise ContractError(
                    f"blob {name!r} has shape {tuple(arr.shape)} but the model "
                    f"expects {tuple(target.shape)}")
            target.copy_(torch.from_numpy(arr))


def encoder_from_checkpoint(ckpt: Checkpoint, *, seed: int = 0) -> ConvEncoder:
    """Rebuild an encoder from stored config and load the stored blobs."""
    cfg = encoder_config_from_dict(ckpt.encoder_config)
    model = init_encoder(cfg, seed)
    restore_into(model, ckpt)
    return model


def checkpoint_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
