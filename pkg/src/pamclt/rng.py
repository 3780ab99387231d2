"""Deterministic seed derivation (SplitMix64 over a label chain)."""

import hashlib

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_derive(master: int, *labels) -> int:
    """Child seed of ``master`` for the given labels; order matters."""
    s = splitmix64(int(master) & _MASK)
    for lab in labels:
        s = splitmix64(s ^ _label_int(lab))
    return s


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK))
