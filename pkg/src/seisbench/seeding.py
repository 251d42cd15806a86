"""Seed derivation shared by every module that needs reproducible randomness."""
from __future__ import annotations

import os

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer (Steele, Lea & Flood): a bijective 64-bit avalanche."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(seed: int, index: int) -> int:
    return splitmix64((seed & MASK64) ^ splitmix64(index & MASK64))


def derive_seed(seed: int, *path: int) -> int:
    """Fold a path of integers into ``seed``, e.g. ``derive_seed(s, STREAM, i)``."""
    out = seed & MASK64
    for p in path:
        out = mix64(out, p)
    return out


def env_seed(default: int) -> int:
    """Return SEISBENCH_SEED when set, else ``default``."""
    raw = os.environ.get("SEISBENCH_SEED")
    if raw is None or raw.strip() == "":
        return default
    return int(raw, 0) & MASK64
