"""Lattice geometry: hexagons of H (site percolation on the triangular lattice)
and bonds of Z^2, exposed through one Cell / Region interface.

Hexagons use axial coordinates ``(q, s)``; the Euclidean centre of ``(q, s)`` is
``q*e1 + s*(1/2, sqrt(3)/2)``, so the hexagons meeting the x-axis are the row
``s == 0``.  Bonds are stored as an ordered pair of Z^2 endpoints.

Every lattice has a cached :class:`BallIndex` per radius: cells of ``B_R``
sorted by (distance to the origin cell, polar angle).  Because of that order
``B_r`` is the index prefix ``[0, ball_size(r))`` for every ``r <= R``, which
the numba kernels rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

HEX = "hex-site"
BOND = "z2-bond"

# axial neighbour offsets, counter-clockwise starting at angle 0
HEX_DIRECTIONS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))


class NotACircuit(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Cell:
    kind: str
    coords: tuple

    def __repr__(self):
        return f"Cell({self.coords!r})" if self.kind == HEX else f"Bond{self.coords!r}"


def hex_cell(q: int, s: int) -> Cell:
    return Cell(HEX, (int(q), int(s)))


def bond_cell(a: Sequence[int], b: Sequence[int]) -> Cell:
    a, b = (int(a[0]), int(a[1])), (int(b[0]), int(b[1]))
    if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
        raise ValueError(f"{a}-{b} is not a nearest-neighbour bond")
    return Cell(BOND, (a, b) if a <= b else (b, a))


HEX_ORIGIN = hex_cell(0, 0)
BOND_ORIGIN = bond_cell((0, 0), (1, 0))


def hex_distance(a: Cell, b: Cell) -> int:
    dq = a.coords[0] - b.coords[0]
    ds = a.coords[1] - b.coords[1]
    return max(abs(dq), abs(ds), abs(dq + ds))


def bond_distance(a: Cell, b: Cell) -> int:
    # in the line graph of Z^2: 1 + closest endpoint pair in L1, or 0 if equal
    if a == b:
        return 0
    return 1 + min(abs(u[0] - v[0]) + abs(u[1] - v[1])
                   for u in a.coords for v in b.coords)


def _hex_neighbors(c: Cell) -> list[Cell]:
    q, s = c.coords
    return [hex_cell(q + dq, s + ds) for dq, ds in HEX_DIRECTIONS]


def _bond_neighbors(c: Cell) -> list[Cell]:
    (x1, y1), (x2, y2) = c.coords
    out = []
    for (x, y) in ((x1, y1), (x2, y2)):
        for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
            b = bond_cell((x, y), (x + dx, y + dy))
            if b != c:
                out.append(b)
    return out


def neighbors(c: Cell) -> list[Cell]:
    """Adjacent cells in a fixed order: 6 hexagons sharing an edge, or the 6
    bonds sharing an endpoint."""
    return _hex_neighbors(c) if c.kind == HEX else _bond_neighbors(c)


def distance(a: Cell, b: Cell) -> int:
    if a.kind != b.kind:
        raise ValueError("cells of different lattices")
    return hex_distance(a, b) if a.kind == HEX else bond_distance(a, b)


def origin(kind: str = HEX) -> Cell:
    return HEX_ORIGIN if kind == HEX else BOND_ORIGIN


def hex_ball_size(R: int) -> int:
    return 1 + 3 * R * (R + 1)


# ---------------------------------------------------------------------------
# indexed balls


@dataclass(frozen=True, eq=False)
class BallIndex:
    """Cells of B_radius in kernel order, with a neighbour table.

    ``nbr[i, k]`` is the index of the k-th neighbour of cell ``i`` or -1 when
    that neighbour lies outside ``B_radius``.
    """

    kind: str
    radius: int
    coords: np.ndarray  # (n, 2) axial, or (n, 4) bond endpoints
    dist: np.ndarray  # (n,) int32
    nbr: np.ndarray  # (n, 6) int32
    shell_start: np.ndarray  # cells with d <= k are [0, shell_start[k + 1])
    _lookup: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.dist)

    def ball_size(self, r: int) -> int:
        return int(self.shell_start[min(r, self.radius) + 1])

    def sphere(self, r: int) -> np.ndarray:
        return np.arange(self.shell_start[r], self.shell_start[r + 1])

    def cell(self, i: int) -> Cell:
        c = self.coords[i]
        if self.kind == HEX:
            return hex_cell(c[0], c[1])
        return bond_cell(c[:2], c[2:])

    def index(self, c: Cell) -> int:
        return self._lookup[c.coords]

    def indices(self, cells: Iterable[Cell]) -> np.ndarray:
        return np.array([self._lookup[c.coords] for c in cells], dtype=np.int64)

    def __contains__(self, c: Cell) -> bool:
        return c.coords in self._lookup

    @cached_property
    def x_axis(self) -> np.ndarray:
        """Indices of hexagons meeting the x-axis, ordered by q."""
        if self.kind != HEX:
            raise ValueError("x-axis row is defined for hexagons only")
        idx = np.flatnonzero(self.coords[:, 1] == 0)
        return idx[np.argsort(self.coords[idx, 0])]

    @cached_property
    def row_major(self) -> np.ndarray:
        """Permutation listing kernel indices in row-major order."""
        c = self.coords
        if self.kind == HEX:
            return np.lexsort((c[:, 0], c[:, 1]))
        return np.lexsort((c[:, 0], c[:, 1], c[:, 2], c[:, 3]))


def _hex_index(R: int) -> BallIndex:
    q, s = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
    q, s = q.ravel(), s.ravel()
    d = np.maximum(np.maximum(np.abs(q), np.abs(s)), np.abs(q + s))
    keep = d <= R
    q, s, d = q[keep], s[keep], d[keep]
    ang = np.mod(np.arctan2(s * np.sqrt(3) / 2, q + s / 2), 2 * np.pi)
    order = np.lexsort((ang, d))
    q, s, d = q[order], s[order], d[order]
    n = len(d)

    grid = -np.ones((2 * R + 3, 2 * R + 3), dtype=np.int32)
    grid[q + R + 1, s + R + 1] = np.arange(n, dtype=np.int32)
    nbr = np.empty((n, 6), dtype=np.int32)
    for k, (dq, ds) in enumerate(HEX_DIRECTIONS):
        nbr[:, k] = grid[q + dq + R + 1, s + ds + R + 1]
    coords = np.stack([q, s], axis=1).astype(np.int64)
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(coords)}
    shell_start = np.searchsorted(d, np.arange(R + 2), side="left").astype(np.int64)
    return BallIndex(HEX, R, coords, d.astype(np.int32), nbr, shell_start, lookup)


def _bond_index(R: int) -> BallIndex:
    L = R + 2
    xs, ys = np.meshgrid(np.arange(-L, L + 2), np.arange(-L, L + 1), indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    ends = [np.stack([xs, ys, xs + 1, ys], 1), np.stack([xs, ys, xs, ys + 1], 1)]
    b = np.concatenate(ends)
    # distance to the origin bond (0,0)-(1,0)
    l1 = np.minimum.reduce([
        np.abs(b[:, 0] - ox) + np.abs(b[:, 1]) for ox in (0, 1)
    ] + [np.abs(b[:, 2] - ox) + np.abs(b[:, 3]) for ox in (0, 1)])
    d = l1 + 1
    d[(b[:, 0] == 0) & (b[:, 1] == 0) & (b[:, 2] == 1) & (b[:, 3] == 0)] = 0
    keep = d <= R
    b, d = b[keep], d[keep]
    mx = (b[:, 0] + b[:, 2]) / 2 - 0.5
    my = (b[:, 1] + b[:, 3]) / 2
    ang = np.mod(np.arctan2(my, mx), 2 * np.pi)
    order = np.lexsort((ang, d))
    b, d = b[order], d[order]
    lookup = {((int(r[0]), int(r[1])), (int(r[2]), int(r[3]))): i for i, r in enumerate(b)}
    n = len(d)
    nbr = -np.ones((n, 6), dtype=np.int32)
    for i in range(n):
        c = Cell(BOND, ((int(b[i, 0]), int(b[i, 1])), (int(b[i, 2]), int(b[i, 3]))))
        for k, nb in enumerate(_bond_neighbors(c)):
            nbr[i, k] = lookup.get(nb.coords, -1)
    shell_start = np.searchsorted(d, np.arange(R + 2), side="left").astype(np.int64)
    return BallIndex(BOND, R, b.astype(np.int64), d.astype(np.int32), nbr, shell_start, lookup)


@lru_cache(maxsize=32)
def ball_index(R: int, kind: str = HEX) -> BallIndex:
    if R < 0:
        raise ValueError("radius must be nonnegative")
    return _hex_index(R) if kind == HEX else _bond_index(R)


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class Region:
    """A ball ``B_R``, an annulus ``A_{R1,R2} = B_R2 minus B_R1`` or an explicit
    finite cell set.  For balls and annuli ``radii`` holds ``(R,)`` or
    ``(R1, R2)``."""

    kind: str
    lattice: str = HEX
    radii: tuple = ()
    explicit: frozenset | None = None

    def __post_init__(self):
        if self.kind == "annulus" and not self.radii[0] < self.radii[1]:
            raise ValueError("annulus needs R1 < R2")
        if any(r < 0 for r in self.radii):
            raise ValueError("radii must be nonnegative")

    @property
    def outer_radius(self) -> int:
        if self.kind in ("ball", "annulus"):
            return self.radii[-1]
        o = origin(self.lattice)
        return max((distance(o, c) for c in self.explicit), default=0)

    def __contains__(self, c: Cell) -> bool:
        if c.kind != self.lattice:
            return False
        if self.kind == "cells":
            return c in self.explicit
        d = distance(origin(self.lattice), c)
        if self.kind == "ball":
            return d <= self.radii[0]
        return self.radii[0] < d <= self.radii[1]

    @cached_property
    def index(self) -> BallIndex:
        return ball_index(self.outer_radius, self.lattice)

    @cached_property
    def indices(self) -> np.ndarray:
        """Kernel indices of the region's cells, ascending (the bit order of a
        Configuration on this region)."""
        ix = self.index
        if self.kind == "ball":
            return np.arange(ix.n)
        if self.kind == "annulus":
            return np.arange(ix.ball_size(self.radii[0]), ix.n)
        return np.sort(ix.indices(self.explicit))

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.index.n, dtype=np.bool_)
        m[self.indices] = True
        return m

    @cached_property
    def cells(self) -> frozenset:
        if self.kind == "cells":
            return self.explicit
        ix = self.index
        return frozenset(ix.cell(i) for i in self.indices)

    def __len__(self) -> int:
        return len(self.indices)


def ball(R: int, kind: str = HEX) -> Region:
    return Region("ball", kind, (int(R),))


def annulus(R1: int, R2: int, kind: str = HEX) -> Region:
    return Region("annulus", kind, (int(R1), int(R2)))


def cell_region(cells: Iterable[Cell]) -> Region:
    cells = frozenset(cells)
    kinds = {c.kind for c in cells}
    if len(kinds) > 1:
        raise ValueError("mixed lattices")
    return Region("cells", kinds.pop() if kinds else HEX, (), cells)


def sphere_cells(R: int, kind: str = HEX) -> frozenset:
    ix = ball_index(R, kind)
    return frozenset(ix.cell(i) for i in ix.sphere(R))


def outer_boundary(A) -> frozenset:
    """Cells outside ``A`` at distance exactly 1 from it."""
    cells = A.cells if isinstance(A, Region) else frozenset(A)
    out = set()
    for c in cells:
        out.update(nb for nb in neighbors(c) if nb not in cells)
    return frozenset(out)


# ---------------------------------------------------------------------------
# circuits


@dataclass(frozen=True)
class Circuit:
    cells: tuple
    interior: frozenset

    def __len__(self):
        return len(self.cells)

    def __contains__(self, c):
        return c in set(self.cells)


def _complement_components(path_set: frozenset, bound: int) -> list[set]:
    """Connected components of B_bound minus the path (hex cells)."""
    ix = ball_index(bound)
    blocked = np.zeros(ix.n, dtype=bool)
    for c in path_set:
        blocked[ix.index(c)] = True
    seen = blocked.copy()
    comps = []
    for start in range(ix.n):
        if seen[start]:
            continue
        seen[start] = True
        stack, comp = [start], [start]
        while stack:
            v = stack.pop()
            for w in ix.nbr[v]:
                if w >= 0 and not seen[w]:
                    seen[w] = True
                    stack.append(w)
                    comp.append(w)
        comps.append(comp)
    return [set(ix.cell(i) for i in comp) for comp in comps]


def validate_circuit(path: Sequence[Cell]) -> Circuit:
    """Check that ``path`` is a circuit of hexagons and compute its interior.

    A circuit is a closed self-avoiding path with no three of its hexagons
    sharing a vertex, whose complement has one finite and one infinite
    component.
    """
    path = tuple(path)
    if not path:
        raise NotACircuit("empty path")
    if any(c.kind != HEX for c in path):
        raise NotACircuit("circuits are defined on the hexagonal lattice")
    pset = frozenset(path)
    if len(pset) != len(path):
        raise NotACircuit("path is not self-avoiding")
    n = len(path)
    if n < 6:
        raise NotACircuit("too short to enclose a hexagon")
    for i in range(n):
        if hex_distance(path[i], path[(i + 1) % n]) != 1:
            raise NotACircuit(f"{path[i]} and {path[(i + 1) % n]} are not adjacent")
    for c in path:
        nb = [x for x in _hex_neighbors(c) if x in pset]
        for i, a in enumerate(nb):
            for b in nb[i + 1:]:
                if hex_distance(a, b) == 1:
                    raise NotACircuit(f"{c}, {a}, {b} share a vertex")
    M = max(hex_distance(HEX_ORIGIN, c) for c in path)
    comps = _complement_components(pset, M + 1)
    if len(comps) != 2:
        raise NotACircuit(f"complement has {len(comps)} components")
    far = hex_cell(M + 1, 0)
    inner = comps[0] if far in comps[1] else comps[1]
    return Circuit(path, frozenset(inner))


def hex_ring(k: int) -> list[Cell]:
    """The sphere ``{d = k}`` as an ordered cyclic path (k >= 1)."""
    ix = ball_index(k)
    return [ix.cell(i) for i in ix.sphere(k)]
