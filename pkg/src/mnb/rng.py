"""Named, splittable random streams derived from one integer seed."""

import zlib

import numpy as np

STREAMS = ("init", "shuffle", "data", "exemplar")


def stream(seed, name, *keys):
    """Independent generator for ``(seed, name, *keys)``.

    Streams with different names or keys never share state, so adding a draw
    in one place does not shift the numbers seen anywhere else.
    """
    if name not in STREAMS:
        raise ValueError(f"unknown stream {name!r}; expected one of {STREAMS}")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())]
    entropy.extend(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
