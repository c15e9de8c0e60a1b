"""Named random streams derived from one root seed."""

import zlib

import numpy as np


def _key(name) -> int:
    return zlib.crc32(str(name).encode())


def seed_sequence(root: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=tuple(_key(n) for n in names))


def stream(root: int, *names) -> np.random.Generator:
    """Generator for the sub-stream ``names`` of ``root``.

    Streams with different names are independent; the same (root, names)
    always gives the same generator, across processes and platforms.
    """
    return np.random.default_rng(seed_sequence(root, *names))


def derived_seed(root: int, *names) -> int:
    return int(seed_sequence(root, *names).generate_state(1, np.uint32)[0])
