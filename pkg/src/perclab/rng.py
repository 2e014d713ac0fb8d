"""Deterministic random streams.

Every stream is derived from ``(master seed, experiment id, chunk index)``
through :class:`numpy.random.SeedSequence` and drives a counter-based
:class:`numpy.random.Philox` generator.  Trials are processed in fixed-size
chunks, each chunk owning its stream, so results do not depend on how chunks
are scheduled across workers.

numba kernels cannot consume a numpy ``Generator``; they take an integer seed
drawn from one (see :func:`kernel_seed`) and reseed numba's own generator.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_CHUNK = 4096
_threads = 1


def _key(part) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    return zlib.crc32(str(part).encode())


def stream(seed: int, *keys) -> np.random.Generator:
    """Generator for ``seed`` and a path of keys (ints or strings)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else int(rng))


def kernel_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def chunk_sizes(trials: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(int(trials), chunk)
    return [chunk] * full + ([rest] if rest else [])


def run_chunks(fn: Callable[[int, int, np.random.Generator], object], trials: int,
               rng: np.random.Generator, chunk: int = DEFAULT_CHUNK) -> list:
    """Call ``fn(chunk_index, size, generator)`` for each chunk of ``trials``.

    Chunk generators are spawned from ``rng`` up front, and results come back
    in chunk order, so the outcome is independent of the worker count.
    """
    sizes = chunk_sizes(trials, chunk)
    gens = rng.spawn(len(sizes)) if sizes else []
    jobs = list(zip(range(len(sizes)), sizes, gens))
    if _threads <= 1 or len(jobs) <= 1:
        return [fn(i, s, g) for i, s, g in jobs]
    with ThreadPoolExecutor(_threads) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))
