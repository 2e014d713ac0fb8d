"""Quick oracle-equality checks run by ``perclab selftest``."""
from __future__ import annotations

import numpy as np

from .exact import ball_table, exact_M, iic_window_law
from .lattice import ball, ball_index, validate_circuit
from .spectrum import (crossing_table, pivotal_moments, spectral_size_moments,
                       walsh_transform)
from .static import (Configuration, innermost_circuit, pivotals, pivotals_naive, zero_to_R)


def _bfs_reaches(open_, nbr, target_lo):
    if not open_[0]:
        return False
    seen, todo = {0}, [0]
    while todo:
        v = todo.pop()
        if v >= target_lo:
            return True
        for w in nbr[v]:
            if w >= 0 and open_[w] and w not in seen:
                seen.add(w)
                todo.append(w)
    return False


def run_selftest(seed: int = 0) -> list[str]:
    """Return the names of failed checks (empty when all pass)."""
    fails = []
    ix = ball_index(1)
    reg = ball(1)
    conn, npiv = ball_table(1)
    for m in range(1 << ix.n):
        bits = np.array([(m >> i) & 1 for i in range(ix.n)], dtype=bool)
        cfg = Configuration(reg, bits)
        ok = zero_to_R(cfg, 1)
        if ok != _bfs_reaches(bits, ix.nbr, int(ix.shell_start[1])) or ok != conn[m]:
            fails.append(f"zero_to_R on B_1 state {m}")
            break
        if pivotals(cfg, 1) != pivotals_naive(cfg, 1) or len(pivotals(cfg, 1)) != npiv[m]:
            fails.append(f"pivotals on B_1 state {m}")
            break
    if abs(conn.mean() - 63 / 128) > 1e-15:
        fails.append("theta(1) enumeration")
    if abs(iic_window_law(2, 7) / 2.0**-7 - exact_M(1, 2)).max() > 1e-12:
        fails.append("martingale identity at (1, 2)")
    rng = np.random.default_rng(seed)
    reg3 = ball(3)
    for _ in range(200):
        cfg = Configuration(reg3, rng.random(len(reg3)) < 0.6)
        g = innermost_circuit(cfg, 1)
        if g is not None:
            try:
                validate_circuit(g.cells)
            except ValueError:
                fails.append("innermost circuit validity")
                break
            if any(not cfg.state(c) for c in g.cells if c in cfg.region):
                fails.append("innermost circuit openness")
                break
    tab = crossing_table(3)
    spec = walsh_transform(tab, 9)
    if abs(spec.weights.sum() - 1) > 1e-12:
        fails.append("Parseval on 3x3 crossing")
    if abs(spectral_size_moments(spec)[0] - pivotal_moments(tab, 9)[0]) > 1e-10:
        fails.append("E|Spec| = E|Piv| on 3x3 crossing")
    return fails
