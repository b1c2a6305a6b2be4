"""Shared helpers: stable seeding, digests, optional thread parallelism."""

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "LESIONFORGE_THREADS"


def stable_seed(*parts) -> int:
    """Derive a 63-bit seed from arbitrary parts, stable across runs and platforms.

    Python's hash() is salted per process, so seeds are derived from a sha256
    of the repr of the parts instead.
    """
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(*parts) -> np.random.Generator:
    """Deterministic generator keyed by (seed, counters...), independent of call order."""
    return np.random.default_rng(stable_seed(*parts))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def thread_count() -> int:
    """Parallelism cap from the environment; 0 or unset means sequential."""
    raw = os.environ.get(THREADS_ENV, "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(n, 0)


def parallel_map(fn, items):
    """Order-preserving map, threaded when LESIONFORGE_THREADS > 1.

    fn must be pure; results are identical to the sequential path.
    """
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
