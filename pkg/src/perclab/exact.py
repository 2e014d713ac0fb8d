"""Exact laws on small hexagonal balls by enumerating every state.

Cell ``i`` of the kernel index is bit ``i`` of a state code, so the cells of
``B_r`` are the low ``|B_r|`` bits and a window marginal is a ``bincount``
of ``code & (2^w - 1)``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ._kernels import enumerate_ball
from .lattice import ball_index

MAX_CELLS = 19


@lru_cache(maxsize=4)
def ball_table(R: int) -> tuple[np.ndarray, np.ndarray]:
    """``(conn, npiv)`` over all ``2^|B_R|`` states: whether 0 <-> R and the
    number of cells pivotal for that event."""
    ix = ball_index(R)
    if ix.n > MAX_CELLS:
        raise ValueError(f"B_{R} has {ix.n} cells; enumeration is capped at {MAX_CELLS}")
    conn, npiv = enumerate_ball(ix.nbr, ix.n, int(ix.shell_start[R]))
    conn.setflags(write=False)
    npiv.setflags(write=False)
    return conn, npiv


def exact_theta(R: int) -> float:
    """``P(0 <-> R)`` at p = 1/2."""
    conn, _ = ball_table(R)
    return float(conn.mean())


def window_law(weights: np.ndarray, window: int) -> np.ndarray:
    """Normalised marginal of a weighted state law on the low ``window`` bits."""
    codes = np.arange(len(weights), dtype=np.int64) & ((1 << window) - 1)
    law = np.bincount(codes, weights=np.asarray(weights, dtype=np.float64), minlength=1 << window)
    return law / law.sum()


def iic_window_law(R: int, window: int) -> np.ndarray:
    """Marginal of IIC_R (Bernoulli(1/2) given 0 <-> R) on the first ``window`` cells."""
    conn, _ = ball_table(R)
    return window_law(conn, window)


def iic_prime_window_law(R: int, window: int) -> np.ndarray:
    """Marginal of IIC'_R (IIC_R reweighted by the pivotal count)."""
    conn, npiv = ball_table(R)
    return window_law(conn * npiv.astype(np.float64), window)


def iic_law(R: int) -> np.ndarray:
    return iic_window_law(R, ball_index(R).n)


def iic_prime_law(R: int) -> np.ndarray:
    return iic_prime_window_law(R, ball_index(R).n)


def exact_M(r: int, R: int) -> np.ndarray:
    """``M_r = P(0 <-> R | omega on B_r) / P(0 <-> R)`` for every state code of ``B_r``."""
    conn, _ = ball_table(R)
    w = ball_index(R).ball_size(r)
    counts = np.bincount(np.arange(len(conn)) & ((1 << w) - 1), weights=conn, minlength=1 << w)
    return counts * (1 << w) / conn.sum()


def exact_M_bar(r: int) -> np.ndarray:
    """``1{0 <-> r} / P(0 <-> r)`` for every state code of ``B_r``."""
    conn, _ = ball_table(r)
    return conn / conn.mean()


def conditional_mean(values: np.ndarray, inner_bits: int) -> np.ndarray:
    """``E[values | low inner_bits bits]`` under the uniform law on codes."""
    codes = np.arange(len(values)) & ((1 << inner_bits) - 1)
    s = np.bincount(codes, weights=np.asarray(values, dtype=np.float64), minlength=1 << inner_bits)
    return s / (len(values) >> inner_bits)


def qm_constant(r: int, R: int) -> float:
    """Smallest ``C`` with ``M_r <= C * Mbar_r`` on every state of ``B_r``."""
    m = exact_M(r, R)
    mbar = exact_M_bar(r)
    pos = mbar > 0
    if np.any(m[~pos] > 0):
        return float("inf")
    return float(np.max(m[pos] / mbar[pos]))


def tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
