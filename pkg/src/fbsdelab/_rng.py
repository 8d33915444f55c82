"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from a user seed plus a tuple of integer labels (task, block, ...).
Work split into fixed-size blocks therefore produces the same numbers no
matter how many workers process the blocks or in which order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# Domain tags keep streams of different consumers disjoint.
FORWARD = 1
AUDIT = 2
CHILD = 3
REGULARITY = 4
HYPOTHESIS = 5


def substream(seed: int, *labels: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(v) for v in labels))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *labels) -> int:
    """Stable 63-bit seed from ``seed`` and arbitrary labels (hash based)."""
    h = hashlib.sha256(repr((int(seed),) + tuple(labels)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def map_blocks(fn, blocks, workers: int = 1):
    """Apply ``fn`` to every block, returning results in block order."""
    blocks = list(blocks)
    if workers <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))
