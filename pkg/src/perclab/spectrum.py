"""Fourier-Walsh analysis of events on a few bits: exact transforms,
spectral sample moments and decorrelation under the dynamics.

A state of ``n`` bits is an integer code, bit ``i`` set when cell ``i`` is
open.  ``chi_S(omega) = prod_{i in S} (2 omega_i - 1)`` and an event enters
as its ``+-1`` indicator ``f = 2 * 1_A - 1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .rng import as_generator, kernel_seed

MAX_BITS = 24


class TooManyBits(ValueError):
    pass


class MismatchedBitSets(ValueError):
    pass


def _popcount(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    c = np.zeros(a.shape, dtype=np.int64)
    for k in range(64):
        c += ((a >> np.uint64(k)) & np.uint64(1)).astype(np.int64)
        if not np.any(a >> np.uint64(k + 1)):
            break
    return c


def fwht(values: np.ndarray) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform ``sum_x v(x) (-1)^{|x & S|}``."""
    a = np.array(values, dtype=np.float64)
    n = len(a)
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        x, y = a[:, 0, :].copy(), a[:, 1, :]
        a[:, 0, :] += y
        a[:, 1, :] = x - y
        a = a.reshape(n)
        h *= 2
    return a


@dataclass(frozen=True)
class SpectralDistribution:
    """Coefficients ``fhat(S)`` indexed by the bitmask of ``S``."""

    n: int
    coefficients: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return self.coefficients ** 2

    @property
    def sizes(self) -> np.ndarray:
        return _popcount(np.arange(1 << self.n))

    def size_law(self) -> np.ndarray:
        """``P(|Spec| = k)`` for ``k = 0..n`` (normalised by total weight)."""
        w = self.weights
        return np.bincount(self.sizes, weights=w, minlength=self.n + 1) / w.sum()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bitmask", "coefficient"])
            for s, c in enumerate(self.coefficients):
                w.writerow([s, repr(float(c))])

    def size_law_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "probability"])
            for k, p in enumerate(self.size_law()):
                w.writerow([k, repr(float(p))])


def truth_table(event: Callable | np.ndarray, n: int) -> np.ndarray:
    """Boolean table over all ``2^n`` codes.  ``event`` is a table already, or
    a predicate taking an ``(m, n)`` bool array (vectorised) or one code."""
    if n > MAX_BITS:
        raise TooManyBits(f"{n} bits exceeds the exact limit of {MAX_BITS}")
    if isinstance(event, np.ndarray):
        if len(event) != 1 << n:
            raise ValueError("truth table has the wrong length")
        return event.astype(np.bool_)
    codes = np.arange(1 << n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(np.bool_)
    try:
        out = np.asarray(event(bits), dtype=np.bool_)
        if out.shape == (1 << n,):
            return out
    except Exception:
        pass
    return np.array([bool(event(b)) for b in bits], dtype=np.bool_)


def walsh_transform(event, n: int) -> SpectralDistribution:
    """Exact Fourier-Walsh coefficients of the ``+-1`` indicator of ``event``."""
    if n > MAX_BITS:
        raise TooManyBits(f"{n} bits exceeds the exact limit of {MAX_BITS}")
    f = np.where(truth_table(event, n), 1.0, -1.0)
    sign = np.where(_popcount(np.arange(1 << n)) % 2, -1.0, 1.0)
    return SpectralDistribution(n, sign * fwht(f) / (1 << n))


def inverse_transform(spec: SpectralDistribution) -> np.ndarray:
    """Recover ``f`` from its coefficients."""
    sign = np.where(spec.sizes % 2, -1.0, 1.0)
    return fwht(sign * spec.coefficients)


def spectral_size_moments(spec: SpectralDistribution) -> tuple[float, float]:
    w = spec.weights / spec.weights.sum()
    k = spec.sizes.astype(np.float64)
    return float((w * k).sum()), float((w * k * k).sum())


def decorrelation_exact(spec_a: SpectralDistribution, spec_b: SpectralDistribution,
                        t: float) -> float:
    """``E[f_A(omega_0) f_B(omega_t)] = sum_S fhat_A(S) fhat_B(S) e^{-t|S|}``."""
    if spec_a.n != spec_b.n:
        raise MismatchedBitSets("transforms are over different bit sets")
    return float((spec_a.coefficients * spec_b.coefficients * np.exp(-t * spec_a.sizes)).sum())


# ---------------------------------------------------------------------------
# crossing events and pivotals


def parallelogram_neighbors(L: int) -> np.ndarray:
    """Hexagonal adjacency on the ``L x L`` parallelogram ``{(q, s): 0 <= q, s < L}``
    with bit ``s * L + q`` (row-major); ``-1`` marks a missing neighbour."""
    dirs = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))
    nbr = -np.ones((L * L, 6), dtype=np.int64)
    for s in range(L):
        for q in range(L):
            for k, (dq, ds) in enumerate(dirs):
                a, b = q + dq, s + ds
                if 0 <= a < L and 0 <= b < L:
                    nbr[s * L + q, k] = b * L + a
    return nbr


@njit(cache=True)
def _crossing_table(nbr, L):
    n = L * L
    total = 1 << n
    out = np.zeros(total, dtype=np.bool_)
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    for m in range(total):
        seen[:] = False
        top = 0
        for s in range(L):
            v = s * L
            if (m >> v) & 1:
                seen[v] = True
                stack[top] = v
                top += 1
        hit = False
        while top > 0 and not hit:
            top -= 1
            v = stack[top]
            if v % L == L - 1:
                hit = True
                break
            for k in range(6):
                w = nbr[v, k]
                if w >= 0 and not seen[w] and (m >> w) & 1:
                    seen[w] = True
                    stack[top] = w
                    top += 1
        out[m] = hit
    return out


def crossing_table(L: int) -> np.ndarray:
    """Left-right open crossing of the ``L x L`` parallelogram for every code."""
    if L * L > MAX_BITS:
        raise TooManyBits(f"{L * L} bits exceeds the exact limit of {MAX_BITS}")
    return _crossing_table(parallelogram_neighbors(L), L)



def pivotal_counts(table: np.ndarray, n: int) -> np.ndarray:
    """Number of pivotal bits of every code, by flipping each bit."""
    codes = np.arange(1 << n, dtype=np.int64)
    cnt = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        cnt += table != table[codes ^ (1 << i)]
    return cnt


def pivotal_moments(table: np.ndarray, n: int) -> tuple[float, float]:
    """``(E|Piv|, E|Piv|^2)`` under the uniform law."""
    c = pivotal_counts(table, n).astype(np.float64)
    return float(c.mean()), float((c * c).mean())


# ---------------------------------------------------------------------------
# Monte Carlo decorrelation


@njit(cache=True)
def _decor_batch(table_a, table_b, n, t, trials, seed):
    np.random.seed(seed)
    keep = math.exp(-t)  # a bit is untouched by time t with this probability
    s = 0.0
    s2 = 0.0
    for _ in range(trials):
        m0 = 0
        for i in range(n):
            if np.random.random() < 0.5:
                m0 |= 1 << i
        m1 = m0
        for i in range(n):
            if np.random.random() >= keep:
                if np.random.random() < 0.5:
                    m1 |= 1 << i
                else:
                    m1 &= ~(1 << i)
        v = (1.0 if table_a[m0] else -1.0) * (1.0 if table_b[m1] else -1.0)
        s += v
        s2 += v * v
    return s, s2


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    se: float
    trials: int


def decorrelation_mc(event, n: int, t: float, trials: int, rng,
                     event_b=None) -> MCEstimate:
    """Monte Carlo ``E[f_A(omega_0) f_B(omega_t)]`` under stationary dynamics.

    A bit rings at least once by time ``t`` with probability ``1 - e^{-t}``
    and then holds a fresh fair coin, which is the exact two-time law.
    """
    ta = truth_table(event, n)
    tb = ta if event_b is None else truth_table(event_b, n)
    s, s2 = _decor_batch(ta, tb, n, float(t), int(trials), kernel_seed(as_generator(rng)))
    m = s / trials
    var = max(s2 / trials - m * m, 0.0)
    return MCEstimate(m, math.sqrt(var / trials), trials)


@njit(cache=True)
def _radial_batch(nbr, n, target_lo, ts, trials, seed):
    np.random.seed(seed)
    both = np.zeros(len(ts), dtype=np.int64)
    first = 0
    w0 = np.empty(n, dtype=np.bool_)
    wt = np.empty(n, dtype=np.bool_)
    seen = np.empty(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    for _ in range(trials):
        for i in range(n):
            w0[i] = np.random.random() < 0.5
        a = _reaches(w0, nbr, n, target_lo, seen, stack)
        first += a
        for k in range(len(ts)):
            keep = math.exp(-ts[k])
            for i in range(n):
                wt[i] = w0[i] if np.random.random() < keep else np.random.random() < 0.5
            if a and _reaches(wt, nbr, n, target_lo, seen, stack):
                both[k] += 1
    return first, both


@njit(cache=True)
def _reaches(open_, nbr, n, target_lo, seen, stack):
    if not open_[0]:
        return False
    seen[:] = False
    seen[0] = True
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        if v >= target_lo:
            return True
        for k in range(6):
            w = nbr[v, k]
            if w >= 0 and w < n and not seen[w] and open_[w]:
                seen[w] = True
                stack[top] = w
                top += 1
    return False


def radial_decorrelation(R: int, ts, trials: int, rng) -> list[dict]:
    """``P(0 <-> R at 0 and at t) / P(0 <-> R)^2`` for each ``t``, using the
    exact two-time law of stationary dynamics (each cell independently kept
    with probability ``e^{-t}``, otherwise a fresh fair coin)."""
    from .lattice import ball_index
    ix = ball_index(R)
    ts = np.asarray(ts, dtype=np.float64)
    first, both = _radial_batch(ix.nbr, ix.n, int(ix.shell_start[R]), ts, int(trials),
                                kernel_seed(as_generator(rng)))
    p = first / trials
    rows = []
    for t, b in zip(ts, both):
        q = b / trials
        # delta method for q / p^2 with multinomial counts
        se = math.sqrt(q / trials) / p ** 2 if p > 0 else float("nan")
        rows.append({"R": R, "t": float(t), "joint": q, "theta": p,
                     "ratio": q / p ** 2 if p > 0 else float("nan"), "se": se})
    return rows
