"""Static percolation: configurations, connectivity, arm events, pivotals,
innermost circuits, the Fine predicate and the thinning map.

``0 <-> R`` always means an open path inside ``B_R`` from the origin cell to
the sphere ``{d = R}``.
"""
from __future__ import annotations

import base64
import json
import math
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Mapping

import numpy as np

from . import _kernels as K
from .lattice import (HEX, BallIndex, Cell, Circuit, Region, ball, ball_index, cell_region,
                      hex_cell, hex_distance, origin, validate_circuit, NotACircuit)
from .rng import as_generator, kernel_seed, run_chunks

MAGIC = b"PCFG"
HEX_ETA = 0.25  # lower bound gap 1 + eta <= four-arm exponent 5/4 on hexagons


class InsufficientTrials(ValueError):
    pass


class PreconditionUnmet(ValueError):
    pass


class InvalidA(ValueError):
    pass


# ---------------------------------------------------------------------------
# configurations


@dataclass(frozen=True, eq=False)
class Configuration:
    """Open/closed state of every cell of a region.

    ``bits[i]`` is the state of the i-th cell of ``region.indices`` (ascending
    kernel index).  The array is made read-only on construction.
    """

    region: Region
    bits: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.bits, dtype=np.bool_)
        if b.shape != (len(self.region),):
            raise ValueError(f"need {len(self.region)} bits, got {b.shape}")
        if b is self.bits or b.base is self.bits:
            b = b.copy()
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def kind(self) -> str:
        return self.region.lattice

    @property
    def index(self) -> BallIndex:
        return self.region.index

    @cached_property
    def full(self) -> np.ndarray:
        """States on the whole index ball; cells outside the region are closed."""
        out = np.zeros(self.index.n, dtype=np.bool_)
        out[self.region.indices] = self.bits
        out.flags.writeable = False
        return out

    def state(self, c: Cell) -> bool:
        i = self.index.index(c)
        if not self.region.mask[i]:
            raise KeyError(f"{c} not in region")
        return bool(self.full[i])

    def open_cells(self) -> frozenset:
        ix = self.index
        return frozenset(ix.cell(i) for i in np.flatnonzero(self.full))

    def with_states(self, states: Mapping[Cell, bool]) -> "Configuration":
        full = self.full.copy()
        ix = self.index
        for c, v in states.items():
            full[ix.index(c)] = bool(v)
        return Configuration(self.region, full[self.region.indices])

    def restrict(self, region: Region) -> "Configuration":
        """Restriction to a subregion (``omega^H``)."""
        src = self.index
        idx = np.array([src.index(region.index.cell(i)) for i in region.indices], dtype=np.int64)
        if not np.all(self.region.mask[idx]):
            raise ValueError("target region is not contained in this one")
        return Configuration(region, self.full[idx])

    def __eq__(self, other):
        return (isinstance(other, Configuration) and self.region == other.region
                and np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.region, self.bits.tobytes()))

    # serialization -------------------------------------------------------

    def _row_major_order(self) -> np.ndarray:
        rank = np.empty(self.index.n, dtype=np.int64)
        rank[self.index.row_major] = np.arange(self.index.n)
        return np.argsort(rank[self.region.indices], kind="stable")

    def to_bytes(self) -> bytes:
        r = self.region
        desc = {"lattice": r.lattice, "kind": r.kind, "radii": list(r.radii)}
        if r.kind == "cells":
            desc["cells"] = sorted([[int(x) for x in np.ravel(c.coords)] for c in r.explicit])
        header = json.dumps(desc, separators=(",", ":")).encode()
        bits = self.bits[self._row_major_order()]
        return (MAGIC + struct.pack("<I", len(header)) + header
                + struct.pack("<I", len(bits)) + np.packbits(bits).tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Configuration":
        cfg, _ = cls.read_from(data, 0)
        return cfg

    @classmethod
    def read_from(cls, data: bytes, offset: int) -> tuple["Configuration", int]:
        if data[offset:offset + 4] != MAGIC:
            raise ValueError("bad configuration magic")
        (hlen,) = struct.unpack_from("<I", data, offset + 4)
        pos = offset + 8
        desc = json.loads(data[pos:pos + hlen])
        pos += hlen
        (nbits,) = struct.unpack_from("<I", data, pos)
        pos += 4
        nbytes = (nbits + 7) // 8
        packed = np.frombuffer(data[pos:pos + nbytes], dtype=np.uint8)
        if len(packed) != nbytes:
            raise ValueError("truncated configuration")
        if desc["kind"] == "cells":
            if desc["lattice"] == HEX:
                cells = [hex_cell(*c) for c in desc["cells"]]
            else:
                cells = [Cell(desc["lattice"], ((c[0], c[1]), (c[2], c[3]))) for c in desc["cells"]]
            region = cell_region(cells)
        else:
            region = Region(desc["kind"], desc["lattice"], tuple(desc["radii"]))
        rm = np.unpackbits(packed, count=nbits).astype(np.bool_)
        if nbits != len(region):
            raise ValueError("bit count does not match region")
        cfg = cls(region, np.zeros(nbits, dtype=np.bool_))
        bits = np.empty(nbits, dtype=np.bool_)
        bits[cfg._row_major_order()] = rm
        return cls(region, bits), pos + nbytes

    def to_base64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_base64(cls, text: str) -> "Configuration":
        return cls.from_bytes(base64.b64decode(text))


def from_full(region: Region, full: np.ndarray) -> Configuration:
    return Configuration(region, np.asarray(full, dtype=np.bool_)[region.indices])


def sample(region: Region, p: float, rng) -> Configuration:
    """I.i.d. Bernoulli(p) states on ``region``."""
    rng = as_generator(rng)
    return Configuration(region, rng.random(len(region)) < p)


# ---------------------------------------------------------------------------
# connectivity


def _mask_of(cfg: Configuration, cells) -> np.ndarray:
    m = np.zeros(cfg.index.n, dtype=np.bool_)
    ix = cfg.index
    for c in cells:
        m[ix.index(c)] = True
    return m


def connected(cfg: Configuration, A: Iterable[Cell], B: Iterable[Cell]) -> bool:
    """True iff some open path in the region meets both A and B."""
    a = np.flatnonzero(_mask_of(cfg, A))
    b = _mask_of(cfg, B)
    return bool(K.connected_sets(cfg.full, cfg.region.mask, cfg.index.nbr, a, b))


def _check_ball(cfg: Configuration, R: int) -> None:
    if cfg.region.kind != "ball" or cfg.region.radii[0] < R:
        raise ValueError(f"B_{R} is not contained in the configuration's region")


def zero_to_R(cfg: Configuration, R: int) -> bool:
    _check_ball(cfg, R)
    ix = cfg.index
    return bool(K.origin_reaches(cfg.full, ix.nbr, ix.ball_size(R), int(ix.shell_start[R])))


def pivotal_mask_between(cfg: Configuration, a_mask: np.ndarray, b_mask: np.ndarray,
                         active: np.ndarray | None = None) -> tuple[bool, np.ndarray]:
    act = cfg.region.mask if active is None else active
    hit, piv = K.pivotal_mask(cfg.full, act, cfg.index.nbr, a_mask, b_mask)
    return bool(hit), piv


def _zero_R_masks(cfg: Configuration, R: int):
    ix = cfg.index
    n = ix.n
    active = np.zeros(n, dtype=np.bool_)
    active[:ix.ball_size(R)] = True
    a = np.zeros(n, dtype=np.bool_)
    a[0] = True
    b = np.zeros(n, dtype=np.bool_)
    b[ix.shell_start[R]:ix.ball_size(R)] = True
    return active, a, b


def pivotal_indices(cfg: Configuration, R: int) -> np.ndarray:
    """Kernel indices of Piv_{0<->R}(cfg)."""
    _check_ball(cfg, R)
    active, a, b = _zero_R_masks(cfg, R)
    _, piv = pivotal_mask_between(cfg, a, b, active)
    return np.flatnonzero(piv)


def pivotals(cfg: Configuration, R: int) -> frozenset:
    """Cells whose flip changes whether 0 <-> R."""
    ix = cfg.index
    return frozenset(ix.cell(i) for i in pivotal_indices(cfg, R))


def pivotals_naive(cfg: Configuration, R: int) -> frozenset:
    """Flip-and-retest reference for :func:`pivotals`."""
    base = zero_to_R(cfg, R)
    ix = cfg.index
    full = cfg.full.copy()
    out = []
    for i in range(ix.ball_size(R)):
        full[i] = not full[i]
        if bool(K.origin_reaches(full, ix.nbr, ix.ball_size(R), int(ix.shell_start[R]))) != base:
            out.append(ix.cell(i))
        full[i] = not full[i]
    return frozenset(out)


# ---------------------------------------------------------------------------
# arm events


@dataclass(frozen=True)
class ArmEstimate:
    kind: str  # "one-arm" | "four-arm"
    r: int
    R: int
    p: float
    trials: int
    estimate: float
    se: float


def _binomial(hits: int, trials: int) -> tuple[float, float]:
    est = hits / trials
    return est, math.sqrt(max(est * (1 - est), 0.0) / trials)


@lru_cache(maxsize=64)
def _arcs(R: int) -> np.ndarray:
    """Quadrant label 0..3 of each cell of the sphere ``{d = R}``, -1 inside.
    Quadrant 0 is centred on the positive x-axis, labels increase
    counter-clockwise."""
    ix = ball_index(R)
    arc = -np.ones(ix.n, dtype=np.int64)
    sph = ix.sphere(R)
    q, s = ix.coords[sph, 0], ix.coords[sph, 1]
    ang = np.degrees(np.arctan2(s * np.sqrt(3) / 2, q + s / 2))
    arc[sph] = (np.floor((ang + 45.0) / 90.0).astype(np.int64)) % 4
    return arc


def one_arm_hits(r: int, R: int, p: float, trials: int, seed: int) -> int:
    """Hits of ``sphere(r) <-> sphere(R)`` inside ``{r <= d <= R}``."""
    ix = ball_index(R)
    lo = int(ix.shell_start[r])
    return int(K.lazy_crossing_trials(ix.nbr, lo, int(ix.shell_start[r + 1]), lo, ix.n,
                                      int(ix.shell_start[R]), p, trials, seed))


def four_arm_hits(r: int, R: int, p: float, trials: int, seed: int) -> int:
    """Hits of "the block B_{r-1} is pivotal for crossing B_R between opposite
    quadrant arcs"."""
    ix = ball_index(R)
    return int(K.four_arm_trials(ix.nbr, ix.ball_size(r - 1), ix.n, _arcs(R), p, trials, seed))


def arm_probability(kind: str, r: int, R: int, p: float, trials: int, rng) -> ArmEstimate:
    """Monte Carlo one-arm ``alpha_1(r, R)`` or four-arm ``alpha_4(r, R)``."""
    if trials <= 0:
        raise InsufficientTrials("trials must be positive")
    if kind not in ("one-arm", "four-arm"):
        raise ValueError(f"unknown arm kind {kind!r}")
    if r == R and kind == "one-arm":
        return ArmEstimate(kind, r, R, p, trials, 1.0, 0.0)
    if not 1 <= r < R:
        raise ValueError("need 1 <= r < R")
    rng = as_generator(rng)
    fn = one_arm_hits if kind == "one-arm" else four_arm_hits
    hits = sum(run_chunks(lambda i, n, g: fn(r, R, p, n, kernel_seed(g)), trials, rng))
    est, se = _binomial(hits, trials)
    return ArmEstimate(kind, r, R, p, trials, est, se)


@lru_cache(maxsize=32)
def alpha4_hat(R: int, trials: int = 200_000, seed: int = 20240917) -> float:
    """Fixed-seed estimate of ``alpha_4(1, R)`` used by the Fine predicate."""
    return arm_probability("four-arm", 1, R, 0.5, trials, seed).estimate


# ---------------------------------------------------------------------------
# circuits, Fine, thinning


def innermost_circuit(cfg: Configuration, r: int) -> Circuit | None:
    """Innermost open circuit enclosing ``B_r``, or None."""
    if cfg.kind != HEX or cfg.region.kind != "ball":
        raise ValueError("innermost_circuit needs a hexagonal ball configuration")
    Rr = cfg.region.radii[0]
    if not r < Rr:
        raise ValueError("B_r must lie strictly inside the region")
    big = ball_index(Rr + 1)
    open_ = np.zeros(big.n, dtype=np.bool_)
    open_[:cfg.index.n] = cfg.full
    status, cycle, inner = K.innermost_circuit(open_, big.nbr, big.dist, r, cfg.index.n, big.n)
    if status != 0:
        return None
    cells = tuple(big.cell(i) for i in cycle)
    return Circuit(cells, frozenset(big.cell(i) for i in np.flatnonzero(inner)))


def fine_threshold(r: int, epsilon: float, eta: float = HEX_ETA,
                   alpha4: float | None = None) -> float:
    """``r^{2(1+2eps)} * alpha4_hat(floor(r^{1+2eps}))`` after checking the
    parameter preconditions."""
    if r % 2:
        raise PreconditionUnmet("r must be even")
    if not (1 + 2 * epsilon) * (1 - eta) < 1:
        raise PreconditionUnmet("need (1 + 2 eps)(1 - eta) < 1")
    rho = int(math.floor(r ** (1 + 2 * epsilon)))
    a4 = alpha4_hat(rho) if alpha4 is None else alpha4
    thr = r ** (2 * (1 + 2 * epsilon)) * a4
    if not thr < r / 2:
        raise PreconditionUnmet(
            f"r^(2(1+2eps)) alpha4(r^(1+2eps)) = {thr:.3f} is not below r/2 = {r / 2}")
    return thr


@dataclass(frozen=True)
class FineReport:
    fine: bool
    connected: bool
    circuit: Circuit | None
    inside: bool  # circuit within B_{r^{1+eps}}
    piv_inside: frozenset  # Piv_{0<->R} restricted to Int(circuit)
    threshold: float


def fine_report(cfg: Configuration, r: int, epsilon: float, R: int, *,
                eta: float = HEX_ETA, alpha4: float | None = None) -> FineReport:
    thr = fine_threshold(r, epsilon, eta, alpha4)
    if R < r ** (1 + 2 * epsilon):
        raise PreconditionUnmet("need R >= r^(1+2eps)")
    conn = zero_to_R(cfg, R)
    gam = innermost_circuit(cfg, r) if conn else None
    inside = False
    piv_in = frozenset()
    if gam is not None:
        lim = r ** (1 + epsilon)
        inside = all(hex_distance(origin(), c) <= lim for c in gam.cells)
        if inside:
            piv_in = pivotals(cfg, R) & gam.interior
    fine = conn and gam is not None and inside and len(piv_in) <= thr
    return FineReport(fine, conn, gam, inside, piv_in, thr)


def is_fine(cfg: Configuration, r: int, epsilon: float, R: int, **kw) -> bool:
    return fine_report(cfg, r, epsilon, R, **kw).fine


def _circuit_index(gamma: Circuit):
    M = max(hex_distance(origin(), c) for c in gamma.cells)
    ix = ball_index(M + 1)
    inner = np.zeros(ix.n, dtype=np.bool_)
    inner[ix.indices(gamma.interior)] = True
    ring = np.zeros(ix.n, dtype=np.bool_)
    ring[ix.indices(gamma.cells)] = True
    return ix, inner, ring


def _count_to_circuit(ix: BallIndex, open_: np.ndarray, inner: np.ndarray,
                      ring: np.ndarray) -> int:
    a = np.zeros(ix.n, dtype=np.bool_)
    a[0] = True
    state = open_ | ring
    _, piv = K.pivotal_mask(state, inner | ring, ix.nbr, a, ring)
    return int(np.count_nonzero(piv & inner))


def _inward_paths(ix: BallIndex, start: int, stop: int):
    """Geodesics from cell ``start`` down to the sphere ``{d = stop}``; two
    deterministic tie-break rules (first or last lower neighbour)."""
    for pick in (0, -1):
        path = [start]
        v = start
        while ix.dist[v] > stop:
            lower = [w for w in ix.nbr[v] if w >= 0 and ix.dist[w] == ix.dist[v] - 1]
            v = lower[pick]
            path.append(v)
        yield path[::-1]  # path[0] on the ring, path[-1] = start


def slim_config(r: int, gamma: Circuit, a: int) -> Configuration:
    """The slim configuration on ``Int(gamma)`` with ``a`` pivotals for 0 <-> gamma.

    Open cells: the x-axis row of ``B_{r/2}`` continued along the axis to a
    hexagonal ring, and a connector from the ring to the nearest cell of
    ``gamma``.  The ring sits at radius ``min(d(0, gamma) - a, r)``.  The
    connector's last ``a - 1`` cells are single-width; everything below them is
    doubled with common neighbours so that it carries no pivotal.  Together
    with the origin this gives exactly ``a`` pivotals; ``a = 0`` keeps only
    the axis row, disconnected from ``gamma``.
    """
    if r % 2 or r < 2:
        raise ValueError("r must be even and positive")
    if not 0 <= a <= r // 2:
        raise InvalidA(f"a must lie in 0..{r // 2}")
    ix, inner, ring_mask = _circuit_index(gamma)
    if ix.ball_size(r) > np.count_nonzero(inner[:ix.ball_size(r)]):
        raise ValueError("B_r must lie inside the circuit")
    region = cell_region(gamma.interior)
    half = r // 2
    axis = np.zeros(ix.n, dtype=np.bool_)
    axis[[ix.index(hex_cell(q, 0)) for q in range(-half, half + 1)]] = True
    if a == 0:
        return _to_region(region, ix, axis)

    gidx = np.flatnonzero(ring_mask)
    d_min = int(ix.dist[gidx].min())
    rho = min(d_min - a, r)
    base = axis.copy()
    base[ix.sphere(rho)] = True
    for q in range(half + 1, rho + 1):
        base[ix.index(hex_cell(q, 0))] = True
        base[ix.index(hex_cell(-q, 0))] = True
    top_single = d_min - a + 1  # first single-width connector distance
    for g in gidx[ix.dist[gidx] == d_min]:
        for path in _inward_paths(ix, int(g), rho):
            body = path[:-1]  # drop the circuit cell itself
            for inclusive, junction_helper in ((False, False), (True, False),
                                               (False, True), (True, True)):
                cand = base.copy()
                cand[body] = True
                for k in range(len(body) - 1):
                    lo, hi = body[k], body[k + 1]
                    thick = ix.dist[lo if inclusive else hi] < top_single
                    if thick or (k == 0 and junction_helper):
                        common = set(ix.nbr[lo]) & set(ix.nbr[hi])
                        for c in common:
                            if c >= 0 and inner[c] and ix.dist[c] > half:
                                cand[c] = True
                cand &= inner
                if _count_to_circuit(ix, cand, inner, ring_mask) == a:
                    return _to_region(region, ix, cand)
    raise RuntimeError("no connector realizes the requested pivotal count")


def _to_region(region: Region, ix: BallIndex, full: np.ndarray) -> Configuration:
    ridx = region.index
    src = np.array([ix.index(ridx.cell(i)) for i in region.indices], dtype=np.int64)
    return Configuration(region, full[src])


def thin(cfg: Configuration, r: int, epsilon: float, R: int, **kw) -> Configuration:
    """Identity off Fine; on Fine, replace ``Int(Gamma_r)`` by the slim
    configuration with the same number of inner pivotals."""
    rep = fine_report(cfg, r, epsilon, R, **kw)
    if not rep.fine:
        return cfg
    slim = slim_config(r, rep.circuit, len(rep.piv_inside))
    return cfg.with_states({c: bool(v) for c, v in
                            zip((slim.index.cell(i) for i in slim.region.indices), slim.bits)})
