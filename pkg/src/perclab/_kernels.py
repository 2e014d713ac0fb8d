"""numba kernels for static percolation on indexed balls.

Conventions shared by every kernel:

* ``nbr`` is the (n, 6) neighbour table of a :class:`~perclab.lattice.BallIndex`,
  -1 for neighbours outside the indexed ball;
* ``active`` masks the cells that belong to the region under study, cells
  outside it are treated as closed and never flipped;
* kernels that draw randomness take an integer ``seed`` and reseed numba's
  generator on entry, so every call is a pure function of its arguments.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def bfs_open(open_, active, nbr, seeds, mark):
    """Mark every open active cell connected to an open active seed."""
    stack = np.empty(len(open_), dtype=np.int64)
    top = 0
    for v in seeds:
        if open_[v] and active[v] and not mark[v]:
            mark[v] = True
            stack[top] = v
            top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and not mark[w] and open_[w] and active[w]:
                mark[w] = True
                stack[top] = w
                top += 1
    return mark


@njit(cache=True)
def connected_sets(open_, active, nbr, a_idx, b_mask):
    mark = np.zeros(len(open_), dtype=np.bool_)
    bfs_open(open_, active, nbr, a_idx, mark)
    for v in range(len(open_)):
        if mark[v] and b_mask[v]:
            return True
    return False


@njit(cache=True)
def origin_reaches(open_, nbr, n_ball, target_lo):
    """0 <-> sphere: BFS from cell 0 inside the prefix ball ``[0, n_ball)``;
    true once a cell with index >= target_lo is reached."""
    if not open_[0]:
        return False
    if target_lo == 0:
        return True
    mark = np.zeros(n_ball, dtype=np.bool_)
    stack = np.empty(n_ball, dtype=np.int64)
    mark[0] = True
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and w < n_ball and not mark[w] and open_[w]:
                if w >= target_lo:
                    return True
                mark[w] = True
                stack[top] = w
                top += 1
    return False


@njit(cache=True)
def pivotal_mask(open_, active, nbr, a_mask, b_mask):
    """Pivotal cells for the event "an open active path meets A and B".

    Connected case: open cells separating a super-source (joined to the open
    cells of A) from a super-sink (joined to the open cells of B), found with
    an iterative Tarjan DFS.  Disconnected case: closed cells whose opening
    joins a cluster touching A (or A itself) to one touching B (or B itself).
    Returns ``(event_holds, mask)``.
    """
    n = len(open_)
    piv = np.zeros(n, dtype=np.bool_)
    a_list = np.empty(n, dtype=np.int64)
    b_list = np.empty(n, dtype=np.int64)
    na = 0
    nb = 0
    for v in range(n):
        if active[v] and open_[v]:
            if a_mask[v]:
                a_list[na] = v
                na += 1
            if b_mask[v]:
                b_list[nb] = v
                nb += 1

    reach_a = np.zeros(n, dtype=np.bool_)
    bfs_open(open_, active, nbr, a_list[:na], reach_a)
    hit = False
    for i in range(nb):
        if reach_a[b_list[i]]:
            hit = True
            break

    if not hit:
        reach_b = np.zeros(n, dtype=np.bool_)
        bfs_open(open_, active, nbr, b_list[:nb], reach_b)
        for c in range(n):
            if not active[c] or open_[c]:
                continue
            ta = a_mask[c]
            tb = b_mask[c]
            for k in range(nbr.shape[1]):
                w = nbr[c, k]
                if w >= 0:
                    if reach_a[w]:
                        ta = True
                    if reach_b[w]:
                        tb = True
            if ta and tb:
                piv[c] = True
        return False, piv

    s = n
    t = n + 1
    disc = -np.ones(n + 2, dtype=np.int64)
    low = np.zeros(n + 2, dtype=np.int64)
    parent = -np.ones(n + 2, dtype=np.int64)
    ptr = np.zeros(n + 2, dtype=np.int64)
    stack = np.empty(n + 2, dtype=np.int64)
    deg = nbr.shape[1]
    clock = 0
    disc[s] = clock
    low[s] = clock
    clock += 1
    stack[0] = s
    top = 1
    while top > 0:
        v = stack[top - 1]
        w = -1
        # next neighbour of v
        while w < 0:
            p = ptr[v]
            if v == s:
                if p >= na:
                    break
                w = a_list[p]
            elif v == t:
                if p >= nb:
                    break
                w = b_list[p]
            else:
                if p < deg:
                    u = nbr[v, p]
                    if u >= 0 and open_[u] and active[u]:
                        w = u
                elif p == deg:
                    if a_mask[v]:
                        w = s
                elif p == deg + 1:
                    if b_mask[v]:
                        w = t
                else:
                    break
            ptr[v] += 1
        if w < 0:
            top -= 1
            pv = parent[v]
            if pv >= 0 and low[v] < low[pv]:
                low[pv] = low[v]
            continue
        if disc[w] < 0:
            parent[w] = v
            disc[w] = clock
            low[w] = clock
            clock += 1
            stack[top] = w
            top += 1
        elif w != parent[v] and disc[w] < low[v]:
            low[v] = disc[w]

    v = t
    while v != s:
        p = parent[v]
        if p != s and low[v] >= disc[p]:
            piv[p] = True
        v = p
    return True, piv


# ---------------------------------------------------------------------------
# lazily sampled exploration


@njit(cache=True)
def lazy_crossing_trials(nbr, src_lo, src_hi, reg_lo, reg_hi, tgt_lo, p, trials, seed):
    """Count trials in which an open path inside cells ``[reg_lo, reg_hi)``
    joins a source cell in ``[src_lo, src_hi)`` to a target cell with index
    ``>= tgt_lo``.  States are drawn only when a cell is first examined, which
    is exact because untouched cells never influence the outcome."""
    np.random.seed(seed)
    n = reg_hi
    stamp = -np.ones(n, dtype=np.int64)
    state = np.zeros(n, dtype=np.bool_)
    seen = -np.ones(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    hits = 0
    for tr in range(trials):
        top = 0
        found = False
        for v in range(src_lo, src_hi):
            stamp[v] = tr
            state[v] = np.random.random() < p
            if state[v]:
                if v >= tgt_lo:
                    found = True
                    break
                seen[v] = tr
                stack[top] = v
                top += 1
        while top > 0 and not found:
            top -= 1
            v = stack[top]
            for k in range(nbr.shape[1]):
                w = nbr[v, k]
                if w < reg_lo or w >= reg_hi or seen[w] == tr:
                    continue
                if stamp[w] != tr:
                    stamp[w] = tr
                    state[w] = np.random.random() < p
                seen[w] = tr
                if state[w]:
                    if w >= tgt_lo:
                        found = True
                        break
                    stack[top] = w
                    top += 1
        if found:
            hits += 1
    return hits


@njit(cache=True)
def four_arm_trials(nbr, n_center, n_ball, arc, p, trials, seed):
    """Trials in which the centre block ``[0, n_center)`` is pivotal for an open
    crossing of the ball ``[0, n_ball)`` between boundary arcs 0 and 2
    (``arc[v]`` in 0..3 on the outer sphere, -1 elsewhere).

    Pivotal means: no crossing with the centre closed, and a crossing once
    the whole centre is opened, i.e. four alternating arms from the centre.
    """
    np.random.seed(seed)
    n = n_ball
    stamp = -np.ones(n, dtype=np.int64)
    state = np.zeros(n, dtype=np.bool_)
    reach0 = -np.ones(n, dtype=np.int64)
    reach2 = -np.ones(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    hits = 0
    for tr in range(trials):
        crossed = False
        for side in range(2):
            want = 0 if side == 0 else 2
            reach = reach0 if side == 0 else reach2
            top = 0
            for v in range(n_center, n):
                if arc[v] == want:
                    if stamp[v] != tr:
                        stamp[v] = tr
                        state[v] = np.random.random() < p
                    if state[v] and reach[v] != tr:
                        reach[v] = tr
                        stack[top] = v
                        top += 1
            while top > 0:
                top -= 1
                v = stack[top]
                if side == 0 and arc[v] == 2:
                    crossed = True
                for k in range(nbr.shape[1]):
                    w = nbr[v, k]
                    if w < n_center or w >= n or reach[w] == tr:
                        continue
                    if stamp[w] != tr:
                        stamp[w] = tr
                        state[w] = np.random.random() < p
                    if state[w]:
                        reach[w] = tr
                        stack[top] = w
                        top += 1
            if crossed:
                break
        if crossed:
            continue
        # cells adjacent to the centre block
        t0 = False
        t2 = False
        for v in range(n_center):
            for k in range(nbr.shape[1]):
                w = nbr[v, k]
                if w >= n_center and w < n:
                    if reach0[w] == tr:
                        t0 = True
                    if reach2[w] == tr:
                        t2 = True
        if n_center > 0 and t0 and t2:
            hits += 1
        elif n_center > 0:
            # the centre itself may touch an arc when it reaches the sphere
            on0 = False
            on2 = False
            for v in range(n_center):
                if arc[v] == 0:
                    on0 = True
                if arc[v] == 2:
                    on2 = True
            if (on0 or t0) and (on2 or t2):
                hits += 1
    return hits


@njit(cache=True)
def origin_cluster(open_, nbr, n_ball):
    """Mask of the open cluster of cell 0 inside ``[0, n_ball)``."""
    mark = np.zeros(n_ball, dtype=np.bool_)
    if not open_[0]:
        return mark
    stack = np.empty(n_ball, dtype=np.int64)
    mark[0] = True
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and w < n_ball and not mark[w] and open_[w]:
                mark[w] = True
                stack[top] = w
                top += 1
    return mark


@njit(cache=True)
def lazy_origin_cluster(nbr, n_ball, target_lo, p, state, stamp, tag):
    """Explore the cluster of 0 in ``[0, n_ball)`` drawing states lazily into
    ``state`` (cells drawn in this call get ``stamp == tag``).  Returns
    whether the cluster reaches index ``target_lo``; the exploration is
    complete (the whole cluster is revealed)."""
    n = n_ball
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    stamp[0] = tag
    state[0] = np.random.random() < p
    if not state[0]:
        return False
    hit = target_lo == 0
    seen[0] = True
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w < 0 or w >= n or seen[w]:
                continue
            seen[w] = True
            if stamp[w] != tag:
                stamp[w] = tag
                state[w] = np.random.random() < p
            if state[w]:
                if w >= target_lo:
                    hit = True
                stack[top] = w
                top += 1
    return hit


@njit(cache=True)
def iic_batch(nbr, n_ball, target_lo, count, seed):
    """``count`` independent draws of Bernoulli(1/2) on ``[0, n_ball)``
    conditioned on 0 <-> sphere (rejection on the lazily explored cluster,
    then the unexplored cells are filled in).  Returns the states and the
    number of attempts."""
    np.random.seed(seed)
    out = np.zeros((count, n_ball), dtype=np.bool_)
    stamp = -np.ones(n_ball, dtype=np.int64)
    state = np.zeros(n_ball, dtype=np.bool_)
    attempts = 0
    tag = 0
    for i in range(count):
        while True:
            attempts += 1
            tag += 1
            if lazy_origin_cluster(nbr, n_ball, target_lo, 0.5, state, stamp, tag):
                break
        for v in range(n_ball):
            if stamp[v] == tag:
                out[i, v] = state[v]
            else:
                out[i, v] = np.random.random() < 0.5
    return out, attempts


# ---------------------------------------------------------------------------
# innermost circuit


@njit(cache=True)
def innermost_circuit(open_, nbr, dist, r, n_region, n_total):
    """Innermost open circuit enclosing B_r.

    ``open_`` lives on a ball index whose outermost sphere ``[n_region,
    n_total)`` is a virtual exterior layer just outside the configuration.
    Returns ``(status, cycle, interior_mask)``; status 0 = found, 1 = no
    enclosing open circuit, 2 = frontier failed circuit validation.
    """
    n = n_total
    empty = np.empty(0, dtype=np.int64)
    inner = np.zeros(n, dtype=np.bool_)
    S = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    rmax = dist[n_region - 1]
    for v in range(n):
        if dist[v] <= r:
            S[v] = True
            stack[top] = v
            top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(6):
            w = nbr[v, k]
            if w < 0 or S[w]:
                continue
            if w >= n_region:
                return 1, empty, inner
            if not open_[w]:
                if dist[w] >= rmax:
                    return 1, empty, inner
                S[w] = True
                stack[top] = w
                top += 1
    # exterior of the closed hull
    E0 = np.zeros(n, dtype=np.bool_)
    for v in range(n_region, n):
        E0[v] = True
        stack[top] = v
        top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(6):
            w = nbr[v, k]
            if w >= 0 and not E0[w] and not S[w]:
                E0[w] = True
                stack[top] = w
                top += 1
    F = np.zeros(n, dtype=np.bool_)
    for v in range(n_region):
        if E0[v]:
            for k in range(6):
                w = nbr[v, k]
                if w >= 0 and not E0[w]:
                    F[v] = True
                    break
    E = np.zeros(n, dtype=np.bool_)
    for v in range(n_region, n):
        E[v] = True
        stack[top] = v
        top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(6):
            w = nbr[v, k]
            if w >= 0 and not E[w] and E0[w] and not F[w]:
                E[w] = True
                stack[top] = w
                top += 1
    G = np.zeros(n, dtype=np.bool_)
    ng = 0
    first = -1
    for v in range(n_region):
        if F[v]:
            for k in range(6):
                w = nbr[v, k]
                if w >= 0 and E[w]:
                    G[v] = True
                    ng += 1
                    if first < 0:
                        first = v
                    break
    for v in range(n):
        inner[v] = not E[v] and not G[v]
    if ng < 6:
        return 2, empty, inner
    # every circuit cell has exactly two circuit neighbours, and those two
    # are not adjacent (no three circuit hexagons around a vertex)
    for v in range(n_region):
        if G[v]:
            c = 0
            a = -1
            b = -1
            for k in range(6):
                w = nbr[v, k]
                if w >= 0 and G[w]:
                    c += 1
                    if a < 0:
                        a = w
                    else:
                        b = w
            if c != 2:
                return 2, empty, inner
            for k in range(6):
                if nbr[a, k] == b:
                    return 2, empty, inner
    cycle = np.empty(ng, dtype=np.int64)
    cycle[0] = first
    prev = -1
    cur = first
    for i in range(1, ng):
        nxt = -1
        for k in range(6):
            w = nbr[cur, k]
            if w >= 0 and G[w] and w != prev:
                nxt = w
                break
        if nxt < 0 or nxt == first:
            return 2, empty, inner
        cycle[i] = nxt
        prev = cur
        cur = nxt
    closes = False
    for k in range(6):
        if nbr[cur, k] == first:
            closes = True
    if not closes:
        return 2, empty, inner
    # interior must be one component
    seen = np.zeros(n, dtype=np.bool_)
    seen[0] = True
    stack[0] = 0
    top = 1
    cnt = 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(6):
            w = nbr[v, k]
            if w >= 0 and inner[w] and not seen[w]:
                seen[w] = True
                cnt += 1
                stack[top] = w
                top += 1
    tot = 0
    for v in range(n):
        if inner[v]:
            tot += 1
    if tot != cnt:
        return 2, empty, inner
    return 0, cycle, inner


# ---------------------------------------------------------------------------
# exhaustive enumeration of small balls


@njit(cache=True)
def enumerate_ball(nbr, n, target_lo):
    """For every state ``m`` of the cells ``[0, n)`` (bit i = cell i): whether
    0 <-> target and the number of pivotal cells."""
    total = 1 << n
    conn = np.zeros(total, dtype=np.bool_)
    npiv = np.zeros(total, dtype=np.int16)
    open_ = np.zeros(n, dtype=np.bool_)
    active = np.ones(n, dtype=np.bool_)
    a = np.zeros(n, dtype=np.bool_)
    a[0] = True
    b = np.zeros(n, dtype=np.bool_)
    b[target_lo:] = True
    for m in range(total):
        for i in range(n):
            open_[i] = (m >> i) & 1
        hit, piv = pivotal_mask(open_, active, nbr, a, b)
        conn[m] = hit
        npiv[m] = np.count_nonzero(piv)
    return conn, npiv


@njit(cache=True)
def conditional_crossing_trials(nbr, inner, n_ball, target_lo, trials, seed):
    """Trials with 0 <-> target when the cells ``[0, len(inner))`` are frozen
    to ``inner`` and the rest of ``[0, n_ball)`` is fair coin flips."""
    np.random.seed(seed)
    n_in = len(inner)
    stamp = -np.ones(n_ball, dtype=np.int64)
    state = np.zeros(n_ball, dtype=np.bool_)
    seen = -np.ones(n_ball, dtype=np.int64)
    stack = np.empty(n_ball, dtype=np.int64)
    for v in range(n_in):
        state[v] = inner[v]
    hits = 0
    if not inner[0]:
        return 0
    for tr in range(trials):
        seen[0] = tr
        stack[0] = 0
        top = 1
        found = target_lo == 0
        while top > 0 and not found:
            top -= 1
            v = stack[top]
            for k in range(nbr.shape[1]):
                w = nbr[v, k]
                if w < 0 or w >= n_ball or seen[w] == tr:
                    continue
                seen[w] = tr
                if w >= n_in and stamp[w] != tr:
                    stamp[w] = tr
                    state[w] = np.random.random() < 0.5
                if state[w]:
                    if w >= target_lo:
                        found = True
                        break
                    stack[top] = w
                    top += 1
        if found:
            hits += 1
    return hits


# ---------------------------------------------------------------------------
# experiment batches


@njit(cache=True)
def annulus_pivotal_counts(nbr, lo, src_hi, n_hi, tgt_lo, p, trials, seed):
    """Pivotal counts for the crossing from the sphere ``[lo, src_hi)`` to the
    sphere ``[tgt_lo, n_hi)`` inside the annulus ``[lo, n_hi)``, plus whether
    the crossing occurred."""
    np.random.seed(seed)
    open_ = np.zeros(n_hi, dtype=np.bool_)
    active = np.zeros(n_hi, dtype=np.bool_)
    active[lo:] = True
    a = np.zeros(n_hi, dtype=np.bool_)
    a[lo:src_hi] = True
    b = np.zeros(n_hi, dtype=np.bool_)
    b[tgt_lo:] = True
    counts = np.zeros(trials, dtype=np.int64)
    crossed = np.zeros(trials, dtype=np.bool_)
    for tr in range(trials):
        for v in range(lo, n_hi):
            open_[v] = np.random.random() < p
        hit, piv = pivotal_mask(open_, active, nbr, a, b)
        counts[tr] = np.count_nonzero(piv)
        crossed[tr] = hit
    return counts, crossed


@njit(cache=True)
def volume_profile(states, nbr, dist, n_max):
    """``|C_0 \\cap B_n|`` for ``n = 0..n_max`` for each row of ``states``."""
    m, n_cells = states.shape
    out = np.zeros((m, n_max + 1), dtype=np.int64)
    seen = np.zeros(n_cells, dtype=np.bool_)
    stack = np.empty(n_cells, dtype=np.int64)
    for i in range(m):
        seen[:] = False
        if not states[i, 0]:
            continue
        seen[0] = True
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            v = stack[top]
            if dist[v] <= n_max:
                out[i, dist[v]] += 1
            for k in range(nbr.shape[1]):
                w = nbr[v, k]
                if w >= 0 and not seen[w] and states[i, w]:
                    seen[w] = True
                    stack[top] = w
                    top += 1
        for n in range(1, n_max + 1):
            out[i, n] += out[i, n - 1]
    return out


@njit(cache=True)
def box_pivotal_counts(nbr, L, p, trials, seed):
    """Pivotal counts and outcomes of the left-right crossing of an ``L x L``
    parallelogram with row-major cells (left column ``q = 0``)."""
    np.random.seed(seed)
    n = L * L
    open_ = np.zeros(n, dtype=np.bool_)
    active = np.ones(n, dtype=np.bool_)
    a = np.zeros(n, dtype=np.bool_)
    b = np.zeros(n, dtype=np.bool_)
    for s in range(L):
        a[s * L] = True
        b[s * L + L - 1] = True
    counts = np.zeros(trials, dtype=np.int64)
    crossed = np.zeros(trials, dtype=np.bool_)
    for tr in range(trials):
        for v in range(n):
            open_[v] = np.random.random() < p
        hit, piv = pivotal_mask(open_, active, nbr, a, b)
        counts[tr] = np.count_nonzero(piv)
        crossed[tr] = hit
    return counts, crossed
