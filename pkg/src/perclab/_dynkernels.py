"""numba kernels for dynamical percolation.

Rings are generated inside the kernels as a superposition of rate-one clocks:
the gap to the next ring on ``n`` cells is Exp(n), the ringing cell is
uniform and the new state is a fair coin.  Each ring consumes exactly three
draws in that order, so two kernels seeded alike see the same rings.

The cluster of the origin is tracked incrementally: an opening next to the
cluster extends it, a closing inside it triggers a rebuild, anything else
leaves it alone.  ``hits`` counts cluster cells on the target sphere.
"""
import numpy as np
from numba import njit

from ._kernels import lazy_origin_cluster, pivotal_mask


@njit(cache=True)
def cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, size, stack):
    for i in range(size):
        incl[mem[i]] = False
    if not open_[0]:
        return 0, 0
    incl[0] = True
    mem[0] = 0
    size = 1
    hits = 1 if target_lo == 0 else 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and w < n_ball and open_[w] and not incl[w]:
                incl[w] = True
                mem[size] = w
                size += 1
                if w >= target_lo:
                    hits += 1
                stack[top] = w
                top += 1
    return size, hits


@njit(cache=True)
def cl_opened(open_, nbr, n_ball, target_lo, incl, mem, size, hits, c, stack):
    """Update after cell ``c`` became open."""
    if c >= n_ball:
        return size, hits
    if c == 0:
        return cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, size, stack)
    attach = False
    for k in range(nbr.shape[1]):
        w = nbr[c, k]
        if w >= 0 and incl[w]:
            attach = True
            break
    if not attach:
        return size, hits
    incl[c] = True
    mem[size] = c
    size += 1
    if c >= target_lo:
        hits += 1
    stack[0] = c
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and w < n_ball and open_[w] and not incl[w]:
                incl[w] = True
                mem[size] = w
                size += 1
                if w >= target_lo:
                    hits += 1
                stack[top] = w
                top += 1
    return size, hits


@njit(cache=True)
def cl_flip(open_, nbr, n_ball, target_lo, incl, mem, size, hits, c, new, stack):
    """Apply ``open_[c] = new`` and update the tracked cluster."""
    if open_[c] == new:
        return size, hits
    open_[c] = new
    if new:
        return cl_opened(open_, nbr, n_ball, target_lo, incl, mem, size, hits, c, stack)
    if c < n_ball and incl[c]:
        return cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, size, stack)
    return size, hits


@njit(cache=True)
def _ring(n_cells, t):
    t += np.random.exponential(1.0 / n_cells)
    c = np.random.randint(0, n_cells)
    new = np.random.random() < 0.5
    return t, c, new


# ---------------------------------------------------------------------------
# trajectories given explicitly


@njit(cache=True)
def connection_after_rings(open0, nbr, n_ball, target_lo, cells, states):
    """Indicator of 0 <-> target after each ring, plus the initial value."""
    open_ = open0.copy()
    n = len(open_)
    incl = np.zeros(n, dtype=np.bool_)
    mem = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    size, hits = cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, 0, stack)
    first = hits > 0
    out = np.empty(len(cells), dtype=np.bool_)
    for k in range(len(cells)):
        size, hits = cl_flip(open_, nbr, n_ball, target_lo, incl, mem, size, hits,
                             cells[k], states[k], stack)
        out[k] = hits > 0
    return first, out


@njit(cache=True)
def window_codes(open0, cells, states, window):
    """Bitmask of the cells ``[0, window)`` initially and after each ring."""
    code = 0
    for i in range(window):
        if open0[i]:
            code |= 1 << i
    out = np.empty(len(cells) + 1, dtype=np.int64)
    out[0] = code
    for k in range(len(cells)):
        c = cells[k]
        if c < window:
            if states[k]:
                code |= 1 << c
            else:
                code &= ~(1 << c)
        out[k + 1] = code
    return out


# ---------------------------------------------------------------------------
# runs with internally generated rings


@njit(cache=True)
def run_until_connected(open_, nbr, n_region, n_ball, target_lo, t_cap, seed):
    """Evolve ``open_`` in place until 0 <-> target.  Returns
    ``(time, ringing cell, capped)``; time is ``t_cap`` when capped."""
    np.random.seed(seed)
    n = len(open_)
    incl = np.zeros(n, dtype=np.bool_)
    mem = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    size, hits = cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, 0, stack)
    if hits > 0:
        return 0.0, -1, False
    t = 0.0
    while True:
        t, c, new = _ring(n_region, t)
        if t > t_cap:
            return t_cap, -1, True
        size, hits = cl_flip(open_, nbr, n_ball, target_lo, incl, mem, size, hits, c, new, stack)
        if hits > 0:
            return t, c, False


@njit(cache=True)
def fet_batch(nbr, n_region, n_ball, target_lo, count, t_cap, seed):
    """First exceptional times from Bernoulli(1/2) starts conditioned on no
    connection.  Returns times, capped flags, the cell whose ring made the
    connection and the configurations at that moment."""
    np.random.seed(seed)
    times = np.empty(count, dtype=np.float64)
    capped = np.zeros(count, dtype=np.bool_)
    last = -np.ones(count, dtype=np.int64)
    finals = np.zeros((count, n_region), dtype=np.bool_)
    open_ = np.zeros(n_region, dtype=np.bool_)
    incl = np.zeros(n_region, dtype=np.bool_)
    mem = np.empty(n_region, dtype=np.int64)
    stack = np.empty(n_region, dtype=np.int64)
    size = 0
    for i in range(count):
        while True:
            for v in range(n_region):
                open_[v] = np.random.random() < 0.5
            size, hits = cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, size, stack)
            if hits == 0:
                break
        t = 0.0
        while True:
            t, c, new = _ring(n_region, t)
            if t > t_cap:
                times[i] = t_cap
                capped[i] = True
                break
            size, hits = cl_flip(open_, nbr, n_ball, target_lo, incl, mem, size, hits, c, new, stack)
            if hits > 0:
                times[i] = t
                last[i] = c
                break
        finals[i] = open_
    return times, capped, last, finals


@njit(cache=True)
def _shortest_path_cells(open_, nbr, n_ball, target_lo, dist, queue):
    """Cells on a shortest open path from 0 to the target (0 if none)."""
    dist[:] = -1
    if not open_[0]:
        return 0
    dist[0] = 1
    queue[0] = 0
    head, tail = 0, 1
    while head < tail:
        v = queue[head]
        head += 1
        if v >= target_lo:
            return dist[v]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and w < n_ball and open_[w] and dist[w] < 0:
                dist[w] = dist[v] + 1
                queue[tail] = w
                tail += 1
    return 0


@njit(cache=True)
def iic_prime_draw(nbr, n_ball, target_lo, state, stamp, tag, out):
    """One IIC'_R draw into ``out`` (rejection from IIC_R with acceptance
    |Piv| / |B_R|).  Returns ``(pivotal mask, new tag, attempts)``.

    Pivotals for a realised connection depend on the explored cluster and its
    closed boundary only, so the rest of the ball is filled after acceptance.
    """
    attempts = 0
    a_mask = np.zeros(n_ball, dtype=np.bool_)
    a_mask[0] = True
    b_mask = np.zeros(n_ball, dtype=np.bool_)
    b_mask[target_lo:] = True
    active = np.ones(n_ball, dtype=np.bool_)
    work = np.zeros(n_ball, dtype=np.bool_)
    dist = np.empty(n_ball, dtype=np.int64)
    queue = np.empty(n_ball, dtype=np.int64)
    while True:
        attempts += 1
        tag += 1
        if not lazy_origin_cluster(nbr, n_ball, target_lo, 0.5, state, stamp, tag):
            continue
        for v in range(n_ball):
            work[v] = state[v] if stamp[v] == tag else False
        u = np.random.random() * n_ball
        # every pivotal lies on a shortest open path, so its cell count bounds |Piv|
        if u >= _shortest_path_cells(work, nbr, n_ball, target_lo, dist, queue):
            continue
        _, piv = pivotal_mask(work, active, nbr, a_mask, b_mask)
        k = 0
        for v in range(n_ball):
            if piv[v]:
                k += 1
        if u < k:
            for v in range(n_ball):
                out[v] = state[v] if stamp[v] == tag else np.random.random() < 0.5
            return piv, tag, attempts


@njit(cache=True)
def iic_prime_batch(nbr, n_ball, target_lo, count, seed):
    np.random.seed(seed)
    out = np.zeros((count, n_ball), dtype=np.bool_)
    npiv = np.zeros(count, dtype=np.int64)
    stamp = -np.ones(n_ball, dtype=np.int64)
    state = np.zeros(n_ball, dtype=np.bool_)
    tag = 0
    attempts = 0
    for i in range(count):
        piv, tag, a = iic_prime_draw(nbr, n_ball, target_lo, state, stamp, tag, out[i])
        attempts += a
        npiv[i] = np.count_nonzero(piv)
    return out, npiv, attempts


@njit(cache=True)
def reconnection_batch(nbr, n_ball, target_lo, count, t_cap, seed):
    """Arrival-Palm reconnection times: draw IIC'_R, close a uniform pivotal,
    run until reconnection."""
    np.random.seed(seed)
    out = np.zeros(n_ball, dtype=np.bool_)
    times = np.empty(count, dtype=np.float64)
    capped = np.zeros(count, dtype=np.bool_)
    stamp = -np.ones(n_ball, dtype=np.int64)
    state = np.zeros(n_ball, dtype=np.bool_)
    incl = np.zeros(n_ball, dtype=np.bool_)
    mem = np.empty(n_ball, dtype=np.int64)
    stack = np.empty(n_ball, dtype=np.int64)
    tag = 0
    for i in range(count):
        piv, tag, _ = iic_prime_draw(nbr, n_ball, target_lo, state, stamp, tag, out)
        idx = np.nonzero(piv)[0]
        s = idx[np.random.randint(0, len(idx))]
        out[s] = False
        size, hits = cl_rebuild(out, nbr, n_ball, target_lo, incl, mem, 0, stack)
        t = 0.0
        while True:
            t, c, new = _ring(n_ball, t)
            if t > t_cap:
                times[i] = t_cap
                capped[i] = True
                break
            size, hits = cl_flip(out, nbr, n_ball, target_lo, incl, mem, size, hits, c, new, stack)
            if hits > 0:
                times[i] = t
                break
        for v in range(size):
            incl[mem[v]] = False
    return times, capped


@njit(cache=True)
def _closed_crossing(open_, nbr, dist, lo_d, hi_d, n_hi):
    """Closed path inside ``{lo_d <= d <= hi_d}`` from ``d = lo_d`` to
    ``d = hi_d``; its absence is equivalent to an open circuit in that
    annulus surrounding the inner ball."""
    seen = np.zeros(n_hi, dtype=np.bool_)
    stack = np.empty(n_hi, dtype=np.int64)
    top = 0
    for v in range(n_hi):
        if dist[v] == lo_d and not open_[v]:
            seen[v] = True
            stack[top] = v
            top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        if dist[v] == hi_d:
            return True
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and w < n_hi and not seen[w] and not open_[w] and dist[w] >= lo_d:
                seen[w] = True
                stack[top] = w
                top += 1
    return False


@njit(cache=True)
def _reaches(open_, nbr, n_ball, target_lo):
    if not open_[0]:
        return False
    seen = np.zeros(n_ball, dtype=np.bool_)
    stack = np.empty(n_ball, dtype=np.int64)
    seen[0] = True
    stack[0] = 0
    top = 1
    if target_lo == 0:
        return True
    while top > 0:
        top -= 1
        v = stack[top]
        for k in range(nbr.shape[1]):
            w = nbr[v, k]
            if w >= 0 and w < n_ball and not seen[w] and open_[w]:
                if w >= target_lo:
                    return True
                seen[w] = True
                stack[top] = w
                top += 1
    return False


@njit(cache=True)
def coupled_run(norm, thin, nbr, dist, n_ball, target_lo, t_cap, seed,
                good_t, ann_lo, ann_hi, far_lo, far_n):
    """Shared-ring evolution of the normal and thinned processes (both given
    after the initial closing).  Rings at a common time use the same cell and
    the same new state in both.

    Returns ``(N, T, capN, capT, good)``.  ``good`` is evaluated on the normal
    process over ``[0, good_t]`` when ``good_t > 0``: an open circuit in the
    annulus ``{ann_lo < d <= ann_hi}`` and 0 <-> the sphere whose first index
    is ``far_lo`` (inside ``[0, far_n)``) at every moment.
    """
    np.random.seed(seed)
    n = n_ball
    inc1 = np.zeros(n, dtype=np.bool_)
    inc2 = np.zeros(n, dtype=np.bool_)
    mem1 = np.empty(n, dtype=np.int64)
    mem2 = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    s1, h1 = cl_rebuild(norm, nbr, n, target_lo, inc1, mem1, 0, stack)
    s2, h2 = cl_rebuild(thin, nbr, n, target_lo, inc2, mem2, 0, stack)
    N = -1.0
    T = -1.0
    if h1 > 0:
        N = 0.0
    if h2 > 0:
        T = 0.0
    good = good_t > 0
    n_ann = 0
    for v in range(n):
        if dist[v] <= ann_hi:
            n_ann = v + 1
    if good:
        good = (not _closed_crossing(norm, nbr, dist, ann_lo + 1, ann_hi, n_ann)
                and _reaches(norm, nbr, far_n, far_lo))
    t = 0.0
    while N < 0 or T < 0 or (good and t <= good_t):
        t, c, new = _ring(n, t)
        if t > t_cap and (N < 0 or T < 0):
            break
        if good and t <= good_t and norm[c] != new:
            norm[c] = new
            good = (not _closed_crossing(norm, nbr, dist, ann_lo + 1, ann_hi, n_ann)
                    and _reaches(norm, nbr, far_n, far_lo))
            norm[c] = not new
        s1, h1 = cl_flip(norm, nbr, n, target_lo, inc1, mem1, s1, h1, c, new, stack)
        s2, h2 = cl_flip(thin, nbr, n, target_lo, inc2, mem2, s2, h2, c, new, stack)
        if N < 0 and h1 > 0:
            N = t
        if T < 0 and h2 > 0:
            T = t
        if t > t_cap:
            break
    capN = N < 0
    capT = T < 0
    if capN:
        N = t_cap
    if capT:
        T = t_cap
    return N, T, capN, capT, good


@njit(cache=True)
def liggett_batch(nbr, n_ball, target_lo, theta, run_length, window, count, seed):
    """Extra-head shifts of stationary dynamics on ``[0, n_ball)``.

    For each run: local time density ``1{0 <-> target} / theta``, a unit-rate
    Poisson process of marks in local-time units, points ``q_i`` where the
    local time crosses the marks, ``J`` the first integer ``n >= 1`` with
    more than ``n`` points in ``[0, n]``.  Returns the ``window`` bitmask of
    the configuration at ``q_J``, ``J``, ``q_J`` and an exceeded flag.
    """
    np.random.seed(seed)
    codes = np.zeros(count, dtype=np.int64)
    Js = np.zeros(count, dtype=np.int64)
    qs = np.zeros(count, dtype=np.float64)
    exceeded = np.zeros(count, dtype=np.bool_)
    cap_pts = 4 * run_length + 64
    snap = np.empty(cap_pts, dtype=np.int64)
    qt = np.empty(cap_pts, dtype=np.float64)
    open_ = np.zeros(n_ball, dtype=np.bool_)
    incl = np.zeros(n_ball, dtype=np.bool_)
    mem = np.empty(n_ball, dtype=np.int64)
    stack = np.empty(n_ball, dtype=np.int64)
    size = 0
    for i in range(count):
        for v in range(n_ball):
            open_[v] = np.random.random() < 0.5
        size, hits = cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, size, stack)
        code = 0
        for v in range(window):
            if open_[v]:
                code |= 1 << v
        t = 0.0
        mass = 0.0
        mark = np.random.exponential(1.0)
        npts = 0
        nxt_int = 1
        done = False
        while not done:
            t_new, c, new = _ring(n_ball, t)
            # integer checkpoints and marks inside (t, t_new], state constant
            while not done:
                t_int = float(nxt_int)
                seg_end = min(t_new, t_int)
                if hits > 0:
                    while mass + (seg_end - t) / theta > mark:
                        q = t + (mark - mass) * theta
                        mass = mark
                        t = q
                        if npts >= cap_pts:
                            exceeded[i] = True
                            done = True
                            break
                        snap[npts] = code
                        qt[npts] = q
                        npts += 1
                        mark += np.random.exponential(1.0)
                    if done:
                        break
                    mass += (seg_end - t) / theta
                t = seg_end
                if seg_end == t_int:
                    if npts > nxt_int:
                        Js[i] = nxt_int
                        qs[i] = qt[nxt_int - 1]
                        codes[i] = snap[nxt_int - 1]
                        done = True
                        break
                    nxt_int += 1
                    if nxt_int > run_length:
                        exceeded[i] = True
                        done = True
                        break
                else:
                    break
            if done:
                break
            t = t_new
            if c < window:
                if new:
                    code |= 1 << c
                else:
                    code &= ~(1 << c)
            size, hits = cl_flip(open_, nbr, n_ball, target_lo, incl, mem, size, hits, c, new, stack)
    return codes, Js, qs, exceeded


@njit(cache=True)
def fallone_batch(nbr, n_ball, target_lo, axis, t_start, t_end, trials, seed):
    """Trials in which 0 <-> target at some time in ``[t_start, t_end]``,
    starting from only the ``axis`` cells open."""
    np.random.seed(seed)
    n = n_ball
    open_ = np.zeros(n, dtype=np.bool_)
    incl = np.zeros(n, dtype=np.bool_)
    mem = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    size = 0
    hitsum = 0
    if t_start > t_end:
        return 0
    for tr in range(trials):
        open_[:] = False
        for v in axis:
            open_[v] = True
        size, hits = cl_rebuild(open_, nbr, n, target_lo, incl, mem, size, stack)
        t = 0.0
        found = False
        while True:
            t, c, new = _ring(n, t)
            if t > t_end:
                # state constant on the last stretch up to t_end
                if hits > 0:
                    found = True
                break
            if t >= t_start and hits > 0:
                found = True  # connected at t_start or carried into the window
                break
            size, hits = cl_flip(open_, nbr, n, target_lo, incl, mem, size, hits, c, new, stack)
            if t >= t_start and hits > 0:
                found = True
                break
        if found:
            hitsum += 1
    return hitsum


@njit(cache=True)
def collapse_run(open_, nbr, dist, t_grid, seed):
    """Running infimum of the origin cluster radius at the times ``t_grid``.

    Only closings of open cells with ``d <= m`` (``m`` the current infimum)
    can lower it; after such a closing a search from the origin inside ``B_m``
    either reaches the sphere ``{d = m}`` or reveals the whole, smaller,
    cluster.  The radius of an empty cluster is 0.
    """
    np.random.seed(seed)
    n = len(open_)
    R = dist[n - 1]
    seen = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    shell_end = np.zeros(R + 2, dtype=np.int64)
    for v in range(n):
        shell_end[dist[v] + 1] = v + 1
    out = np.empty(len(t_grid), dtype=np.int64)
    m = R
    stamp = 0
    gi = 0
    t = 0.0
    check = True
    while gi < len(t_grid):
        if check:
            check = False
            stamp += 1
            if not open_[0]:
                m = 0
            else:
                lim = shell_end[m]  # first index of the sphere d = m
                nb = shell_end[m + 1]
                seen[0] = stamp
                stack[0] = 0
                top = 1
                reached = m == 0
                far = 0
                while top > 0 and not reached:
                    top -= 1
                    v = stack[top]
                    if dist[v] > far:
                        far = dist[v]
                    for k in range(nbr.shape[1]):
                        w = nbr[v, k]
                        if w >= 0 and w < nb and seen[w] != stamp and open_[w]:
                            if w >= lim:
                                reached = True
                                break
                            seen[w] = stamp
                            stack[top] = w
                            top += 1
                if not reached:
                    m = far
        if m == 0:
            while gi < len(t_grid):
                out[gi] = 0
                gi += 1
            break
        t_new, c, new = _ring(n, t)
        while gi < len(t_grid) and t_grid[gi] < t_new:
            out[gi] = m
            gi += 1
        t = t_new
        if open_[c] and not new and dist[c] <= m:
            check = True
        open_[c] = new
    return out


@njit(cache=True)
def annealed_batch(nbr, n_ball, target_lo, T, window, count, seed):
    """Annealed chi-sampling: stationary runs on ``[0, T]`` accepted with
    probability ``|E| / T`` (``E`` the connected time set), then ``chi``
    uniform on ``E``.  ``chi`` is drawn by weighted reservoir sampling over
    the connected pieces.  Returns window codes at ``chi``, the ``chi``
    values and the number of runs."""
    np.random.seed(seed)
    codes = np.zeros(count, dtype=np.int64)
    chis = np.zeros(count, dtype=np.float64)
    open_ = np.zeros(n_ball, dtype=np.bool_)
    incl = np.zeros(n_ball, dtype=np.bool_)
    mem = np.empty(n_ball, dtype=np.int64)
    stack = np.empty(n_ball, dtype=np.int64)
    size = 0
    runs = 0
    i = 0
    while i < count:
        runs += 1
        for v in range(n_ball):
            open_[v] = np.random.random() < 0.5
        size, hits = cl_rebuild(open_, nbr, n_ball, target_lo, incl, mem, size, stack)
        code = 0
        for v in range(window):
            if open_[v]:
                code |= 1 << v
        t = 0.0
        total = 0.0
        pick_code = 0
        pick_t = 0.0
        while t < T:
            t_new, c, new = _ring(n_ball, t)
            end = min(t_new, T)
            if hits > 0 and end > t:
                ell = end - t
                total += ell
                if np.random.random() * total < ell:
                    pick_code = code
                    pick_t = t + np.random.random() * ell
            t = t_new
            if t >= T:
                break
            if c < window:
                if new:
                    code |= 1 << c
                else:
                    code &= ~(1 << c)
            size, hits = cl_flip(open_, nbr, n_ball, target_lo, incl, mem, size, hits, c, new, stack)
        if total > 0 and np.random.random() * T < total:
            codes[i] = pick_code
            chis[i] = pick_t
            i += 1
    return codes, chis, runs
