"""Deterministic seed derivation.

Every stochastic site in the system draws from a generator seeded by hashing
(root seed, site label, indices...), so independent sites never share streams
and whole runs replay bit-for-bit from one integer.
"""

from __future__ import annotations

import hashlib

import torch


def mix_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labelled parts."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def torch_generator(*parts) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(mix_seed(*parts))
    return gen
