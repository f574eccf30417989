"""Seed derivation for every random stream in the toolkit.

A derived seed is the first 8 bytes (little-endian) of
SHA-256("{seed}:{tag}:{i0}:{i1}..."). Numpy streams use the counter-based
Philox4x64 bit generator keyed by that value.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(seed: int, tag: str, *indices: int) -> int:
    """Derive a 64-bit seed for the stream identified by *tag* and *indices*."""
    parts = [str(int(seed)), tag, *(str(int(i)) for i in indices)]
    digest = hashlib.sha256(":".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, tag: str, *indices: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, tag, *indices)))


def make_torch_generator(seed: int, tag: str, *indices: int) -> torch.Generator:
    # torch seeds are signed 64-bit
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, tag, *indices) & 0x7FFF_FFFF_FFFF_FFFF)
    return generator
