"""Dynamical percolation: trajectories, connection timelines, first
exceptional times, arrival configurations and the coupled normal/thinned
processes."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _dynkernels as D
from .lattice import Region, ball, ball_index
from .static import (Configuration, FineReport, fine_report, pivotal_indices, slim_config,
                     HEX_ETA)
from .rng import as_generator, kernel_seed

CADLAG = "cadlag"
CAGLAD = "caglad"
TRAJ_MAGIC = b"PTRJ"
RING_DTYPE = np.dtype([("time", "<f8"), ("cell", "<u4"), ("state", "u1")])
DEFAULT_CAP = 64.0


class CapReached(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Initial configuration plus time-ordered rings ``(time, cell, state)``.

    Cells are kernel indices of ``initial.region.index``.  With the càdlàg
    convention the state at time ``t`` includes rings at times ``<= t``;
    with càglàd only rings at times ``< t``.
    """

    initial: Configuration
    times: np.ndarray
    cells: np.ndarray
    states: np.ndarray
    horizon: float
    convention: str = CADLAG

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if len(t) and (t[0] <= 0 or t[-1] > self.horizon or np.any(np.diff(t) <= 0)):
            raise ValueError("ring times must be strictly increasing in (0, horizon]")
        if self.convention not in (CADLAG, CAGLAD):
            raise ValueError(f"unknown convention {self.convention!r}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64))
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.bool_))
        if len(self.cells) and not np.all(self.initial.region.mask[self.cells]):
            raise ValueError("ring outside the region")

    @property
    def region(self) -> Region:
        return self.initial.region

    def __len__(self) -> int:
        return len(self.times)

    def rings_before(self, t: float) -> int:
        """Number of rings applied to the state at time ``t``."""
        side = "right" if self.convention == CADLAG else "left"
        return int(np.searchsorted(self.times, t, side=side))

    def full_at(self, t: float) -> np.ndarray:
        k = self.rings_before(t)
        full = self.initial.full.copy()
        full[self.cells[:k]] = self.states[:k]
        return full

    def at(self, t: float) -> Configuration:
        full = self.full_at(t)
        return Configuration(self.region, full[self.region.indices])

    def final(self) -> Configuration:
        full = self.initial.full.copy()
        full[self.cells] = self.states
        return Configuration(self.region, full[self.region.indices])

    def window_codes(self, window: int) -> np.ndarray:
        """Bitmask of cells ``[0, window)`` before the first ring and after each."""
        return D.window_codes(self.initial.full, self.cells, self.states, window)

    def reversed(self) -> "Trajectory":
        """Time reversal ``t -> horizon - t``; flips the continuity convention."""
        full = self.initial.full.copy()
        prev = np.empty(len(self.cells), dtype=np.bool_)
        for k, (c, s) in enumerate(zip(self.cells, self.states)):
            prev[k] = full[c]
            full[c] = s
        init = Configuration(self.region, full[self.region.indices])
        conv = CAGLAD if self.convention == CADLAG else CADLAG
        return Trajectory(init, (self.horizon - self.times)[::-1], self.cells[::-1],
                          prev[::-1], self.horizon, conv)

    def to_bytes(self) -> bytes:
        rec = np.empty(len(self.times), dtype=RING_DTYPE)
        rec["time"], rec["cell"], rec["state"] = self.times, self.cells, self.states
        head = TRAJ_MAGIC + struct.pack("<dBQ", self.horizon, self.convention == CAGLAD, len(rec))
        return self.initial.to_bytes() + head + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Trajectory":
        init, pos = Configuration.read_from(data, 0)
        if data[pos:pos + 4] != TRAJ_MAGIC:
            raise ValueError("bad trajectory magic")
        horizon, flag, n = struct.unpack_from("<dBQ", data, pos + 4)
        pos += 4 + struct.calcsize("<dBQ")
        rec = np.frombuffer(data[pos:pos + n * RING_DTYPE.itemsize], dtype=RING_DTYPE)
        if len(rec) != n:
            raise ValueError("truncated trajectory")
        return cls(init, rec["time"].copy(), rec["cell"].astype(np.int64), rec["state"].astype(bool),
                   horizon, CAGLAD if flag else CADLAG)


def simulate(initial: Configuration, horizon: float, rng) -> Trajectory:
    """Rate-one resampling clocks on every cell of the region up to ``horizon``.

    The superposed clocks form a Poisson process of rate ``|region|``: the
    ring count is Poisson, ring times are sorted uniforms, ringing cells are
    uniform and each new state is a fair coin.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rng = as_generator(rng)
    idx = initial.region.indices
    n = rng.poisson(len(idx) * horizon) if horizon > 0 else 0
    times = np.sort(horizon * (1.0 - rng.random(n)))
    cells = idx[rng.integers(0, len(idx), size=n)]
    states = rng.random(n) < 0.5
    return Trajectory(initial, times, cells, states, float(horizon))


# ---------------------------------------------------------------------------
# connection timelines


@dataclass(frozen=True)
class ConnectionTimeline:
    """``E_R`` within ``[0, horizon]`` as disjoint ordered intervals
    ``(start, end, left_closed, right_closed)``."""

    R: int
    horizon: float
    intervals: tuple

    @property
    def total(self) -> float:
        return float(sum(b - a for a, b, _, _ in self.intervals))

    def contains(self, t: float) -> bool:
        for a, b, lc, rc in self.intervals:
            if (a < t < b) or (t == a and lc) or (t == b and rc):
                return True
        return False

    @property
    def arrivals(self) -> list[float]:
        return [a for a, _, _, _ in self.intervals if a > 0]


def connection_indicator(traj: Trajectory, R: int) -> tuple[bool, np.ndarray]:
    """``0 <-> R`` initially and after each ring."""
    reg = traj.region
    if reg.kind != "ball" or reg.radii[0] < R:
        raise ValueError(f"B_{R} must lie in the trajectory's region")
    ix = reg.index
    return D.connection_after_rings(traj.initial.full, ix.nbr, ix.ball_size(R),
                                    int(ix.shell_start[R]), traj.cells, traj.states)


def pieces(first: bool, after: np.ndarray, times: np.ndarray, horizon: float):
    """Maximal constant stretches ``(a, b, value)`` of a ring-driven indicator."""
    vals = np.concatenate([[first], after])
    edges = np.concatenate([[0.0], times, [horizon]])
    change = np.flatnonzero(vals[1:] != vals[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(vals)]])
    return [(edges[s], edges[e], bool(vals[s])) for s, e in zip(starts, ends)]


def connection_timeline(traj: Trajectory, R: int) -> ConnectionTimeline:
    first, after = connection_indicator(traj, R)
    out = []
    cad = traj.convention == CADLAG
    for a, b, v in pieces(first, after, traj.times, traj.horizon):
        if not v or (b == a and a > 0):
            continue
        lc = a == 0 or cad
        rc = b == traj.horizon or not cad
        out.append((float(a), float(b), lc, rc))
    return ConnectionTimeline(R, traj.horizon, tuple(out))


# ---------------------------------------------------------------------------
# first exceptional time and arrivals


def first_exceptional_time(region: Region, R: int, rng,
                           t_cap: float = math.inf) -> tuple[float, Configuration]:
    """Run stationary dynamics, started from Bernoulli(1/2) conditioned on no
    connection, until 0 <-> R.  Returns the time and the configuration then."""
    t, cfg, _ = _fet(region, R, rng, t_cap)
    return t, cfg


def _fet(region: Region, R: int, rng, t_cap: float):
    if region.kind != "ball" or region.radii[0] < R:
        raise ValueError(f"B_{R} must lie in the region")
    ix = region.index
    rng = as_generator(rng)
    times, capped, last, finals = D.fet_batch(ix.nbr, ix.n, ix.ball_size(R), int(ix.shell_start[R]),
                                              1, t_cap, kernel_seed(rng))
    if capped[0]:
        raise CapReached(f"no connection before t = {t_cap}")
    return float(times[0]), Configuration(region, finals[0]), int(last[0])


def fet_samples(R: int, count: int, rng, t_cap: float = math.inf) -> np.ndarray:
    """``count`` independent first exceptional times on ``B_R``."""
    ix = ball_index(R)
    times, capped, _, _ = D.fet_batch(ix.nbr, ix.n, ix.n, int(ix.shell_start[R]), count, t_cap,
                                      kernel_seed(as_generator(rng)))
    return times[~capped]


def arrival_sample(R: int, rng) -> tuple[Configuration, object]:
    """``omega_0 ~ IIC'_R`` and ``S`` uniform among its pivotals."""
    rng = as_generator(rng)
    ix = ball_index(R)
    cfgs, _, _ = D.iic_prime_batch(ix.nbr, ix.n, int(ix.shell_start[R]), 1, kernel_seed(rng))
    cfg = Configuration(ball(R), cfgs[0])
    piv = pivotal_indices(cfg, R)
    return cfg, ix.cell(int(piv[rng.integers(len(piv))]))


def reconnection_samples(R: int, count: int, rng, t_cap: float = DEFAULT_CAP):
    """Reconnection times ``N`` after closing a uniform pivotal of an IIC'_R
    configuration; returns ``(times, capped)``."""
    ix = ball_index(R)
    return D.reconnection_batch(ix.nbr, ix.n, int(ix.shell_start[R]), count, t_cap,
                                kernel_seed(as_generator(rng)))


# ---------------------------------------------------------------------------
# normal versus thinned


@dataclass(frozen=True)
class CoupledSample:
    N: float
    T: float
    fine: bool
    cap_N: bool
    cap_T: bool
    good: bool  # Good event on [0, 1/r], evaluated only when fine
    S: object
    S_thin: object


def coupled_norm_thin(r: int, epsilon: float, R: int, rng, horizon_cap: float = DEFAULT_CAP,
                      *, eta: float = HEX_ETA, alpha4: float | None = None) -> CoupledSample:
    """One pair from the coupling of the normal and thinned reversed processes.

    ``omega'_0`` is an arrival configuration and ``S`` a uniform pivotal.  On
    Fine, ``omega''_0`` is the thinned configuration; ``S'' = S`` when ``S``
    lies in the unbounded component of the complement of ``Gamma_r``,
    otherwise ``S''`` is uniform among the pivotals inside ``Gamma_r``, drawn
    from a dedicated substream.  Both processes then share every ring.
    """
    rng = as_generator(rng)
    g_arrival, g_pick, g_dyn = rng.spawn(3)
    cfg, S = arrival_sample(R, g_arrival)
    rep = fine_report(cfg, r, epsilon, R, eta=eta, alpha4=alpha4)
    ix = cfg.index
    norm = cfg.full.copy()
    norm[ix.index(S)] = False
    S2 = S
    if rep.fine:
        thin_cfg = apply_thinning(cfg, r, rep)
        if not (S not in rep.circuit.interior and S not in rep.circuit):
            inside = [c for c in rep.circuit.interior if c in _pivot_cells(thin_cfg, R)]
            inside.sort(key=ix.index)
            S2 = inside[int(g_pick.integers(len(inside)))]
        thin = thin_cfg.full.copy()
        thin[ix.index(S2)] = False
    else:
        thin = norm.copy()
    good_t, lo, hi, far_lo, far_n = 0.0, 0, 0, 0, 0
    if rep.fine:
        good_t = 1.0 / r
        lo = int(math.floor(r ** (1 + epsilon)))
        hi = int(math.floor(r ** (1 + 2 * epsilon)))
        far_lo, far_n = int(ix.shell_start[hi]), ix.ball_size(hi)
    N, T, cN, cT, good = D.coupled_run(norm, thin, ix.nbr, ix.dist, ix.n, int(ix.shell_start[R]),
                                       horizon_cap, kernel_seed(g_dyn), good_t, lo, hi,
                                       far_lo, far_n)
    return CoupledSample(float(N), float(T), rep.fine, bool(cN), bool(cT), bool(good), S, S2)


def _pivot_cells(cfg: Configuration, R: int) -> frozenset:
    ix = cfg.index
    return frozenset(ix.cell(i) for i in pivotal_indices(cfg, R))


def apply_thinning(cfg: Configuration, r: int, rep: FineReport) -> Configuration:
    slim = slim_config(r, rep.circuit, len(rep.piv_inside))
    sidx = slim.index
    return cfg.with_states({sidx.cell(i): bool(v) for i, v in zip(slim.region.indices, slim.bits)})
