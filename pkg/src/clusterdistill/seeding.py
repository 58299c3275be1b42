"""Deterministic seed derivation.

Every stage (and every named stream inside a stage) hashes the master seed
with its path, so stages can re-run independently and still reproduce the
exact artifacts of a full pipeline run:

    derive_seed(master, "pretrain", "model")
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a master seed and a path of names."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
