"""Thread-count resolution and order-stable block helpers.

Every parallel loop in the package partitions work into blocks whose
boundaries depend only on the problem size, never on the thread count, and
reduces the block results in a fixed tree order. Results are therefore
bit-identical whatever ``LRSSB_NUM_THREADS`` is set to.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "LRSSB_NUM_THREADS"
DEFAULT_BLOCK = 1 << 16


def resolve_threads(n_threads=None):
    if n_threads is None:
        n_threads = int(os.environ.get(THREADS_ENV, "1"))
    return max(1, int(n_threads))


def block_slices(m, block_size=DEFAULT_BLOCK):
    return [slice(s, min(s + block_size, m)) for s in range(0, m, block_size)]


def map_ordered(fn, items, n_threads=None):
    """``list(map(fn, items))``, optionally on a thread pool; output order is input order."""
    items = list(items)
    n_threads = resolve_threads(n_threads)
    if n_threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fn, items))


def tree_sum(parts):
    """Pairwise reduction in a fixed order."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to sum")
    while len(parts) > 1:
        merged = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]


def block_rngs(seed, n_blocks):
    """One independent PCG64 stream per block, spawned from a single 64-bit seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n_blocks)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]
