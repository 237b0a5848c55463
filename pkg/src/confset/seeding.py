"""Deterministic seed derivation.

Every random stream in the library is a ``numpy.random.Generator`` over
PCG64, built from a ``SeedSequence`` whose spawn key is derived from
``(master_seed, *keys)``. String keys are mapped through CRC-32 so that the
derivation does not depend on Python's salted ``hash``. Normal draws use
numpy's ziggurat sampler (``Generator.standard_normal``).
"""

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError("seed keys must be nonnegative")
    return k


def derive_seed_sequence(master_seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=_key(master_seed), spawn_key=tuple(_key(k) for k in keys))


def derive_rng(master_seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(master_seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(master_seed, *keys)))


def derive_int_seed(master_seed: int, *keys) -> int:
    return int(derive_seed_sequence(master_seed, *keys).generate_state(1, np.uint32)[0])
