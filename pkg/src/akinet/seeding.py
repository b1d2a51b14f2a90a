"""Derive independent RNG streams from one integer seed by labeled hashing."""
import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    key = "|".join([str(int(seed))] + [str(l) for l in labels]).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
