"""Named, reproducible random substreams.

Every stochastic operation in the pipeline draws from a substream derived
from (root seed, dotted name).  The derivation hashes the name with sha256,
so streams are stable across platforms and Python processes (unlike the
built-in salted ``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(root_seed: int, *names: object) -> np.random.Generator:
    """Return a Generator for the substream identified by ``names``.

    Same (root_seed, names) always yields the same stream; distinct names
    yield statistically independent streams.
    """
    label = ".".join(str(n) for n in names)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    seq = np.random.SeedSequence(entropy=int(root_seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=words)
    return np.random.default_rng(seq)
