"""Local-time densities and measures along trajectories, the finite-radius
IIC samplers and the chi-sampling constructions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _dynkernels as D
from . import _kernels as K
from .dynamics import Trajectory, connection_indicator, first_exceptional_time, pieces
from .lattice import ball, ball_index
from .rng import as_generator, kernel_seed, run_chunks
from .static import Configuration, InsufficientTrials


class MissingTheta(KeyError):
    pass


class ZeroMass(ValueError):
    pass


class RunLengthExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# theta table


@dataclass(frozen=True)
class ThetaEntry:
    r: int
    estimate: float
    se: float
    trials: int
    seed: int


@dataclass
class ThetaTable:
    """Write-once cache of ``theta(r) = P(0 <-> r)`` estimates."""

    entries: dict = field(default_factory=dict)

    def add(self, entry: ThetaEntry) -> None:
        if entry.r in self.entries:
            raise ValueError(f"theta({entry.r}) already recorded")
        if not 0 < entry.estimate <= 1:
            raise ValueError("theta estimates must lie in (0, 1]")
        self.entries[entry.r] = entry

    def __getitem__(self, r: int) -> float:
        try:
            return self.entries[r].estimate
        except KeyError:
            raise MissingTheta(r) from None

    def __contains__(self, r: int) -> bool:
        return r in self.entries

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "estimate", "se", "trials", "seed"])
            for r in sorted(self.entries):
                e = self.entries[r]
                w.writerow([e.r, repr(e.estimate), repr(e.se), e.trials, e.seed])

    @classmethod
    def from_csv(cls, path) -> "ThetaTable":
        tab = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                tab.add(ThetaEntry(int(row["r"]), float(row["estimate"]), float(row["se"]),
                                   int(row["trials"]), int(row["seed"])))
        return tab

    @classmethod
    def exact(cls, radii) -> "ThetaTable":
        """Table with enumerated values (zero SE) for radii with ``|B_r| <= 19``."""
        from .exact import exact_theta
        tab = cls()
        for r in radii:
            tab.add(ThetaEntry(r, exact_theta(r), 0.0, 0, 0))
        return tab


def theta_hits(r: int, trials: int, seed: int) -> int:
    ix = ball_index(r)
    return int(K.lazy_crossing_trials(ix.nbr, 0, 1, 0, ix.n, int(ix.shell_start[r]), 0.5,
                                      trials, seed))


def estimate_theta(r: int, trials: int, rng) -> ThetaEntry:
    """Binomial estimate of ``P(0 <-> r)`` at p = 1/2."""
    if trials < 1:
        raise InsufficientTrials("trials must be positive")
    rng = as_generator(rng)
    seed = kernel_seed(rng)
    hits = sum(run_chunks(lambda i, n, g: theta_hits(r, n, kernel_seed(g)), trials,
                          np.random.Generator(np.random.Philox(seed))))
    est = hits / trials
    return ThetaEntry(r, est, math.sqrt(est * (1 - est) / trials), trials, seed)


# ---------------------------------------------------------------------------
# local time series


@dataclass(frozen=True)
class LocalTimeSeries:
    """Piecewise-constant density on ``[breakpoints[k], breakpoints[k+1])``."""

    r: int
    kind: str  # "mu-bar" | "mu"
    breakpoints: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=np.float64)
        d = np.asarray(self.density, dtype=np.float64)
        if len(b) != len(d) + 1 or np.any(np.diff(b) < 0) or np.any(d < 0):
            raise ValueError("malformed local time series")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "density", d)

    @property
    def masses(self) -> np.ndarray:
        return np.diff(self.breakpoints) * self.density

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def mass_between(self, a: float, b: float) -> float:
        lo = np.clip(self.breakpoints[:-1], a, b)
        hi = np.clip(self.breakpoints[1:], a, b)
        return float(((hi - lo) * self.density).sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_start", "t_end", "density"])
            for a, b, d in zip(self.breakpoints[:-1], self.breakpoints[1:], self.density):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(d))])


def _merge(stretches) -> tuple[np.ndarray, np.ndarray]:
    b = [s[0] for s in stretches] + [stretches[-1][1]]
    return np.array(b), np.array([s[2] for s in stretches], dtype=np.float64)


def mu_bar(traj: Trajectory, r: int, theta: ThetaTable) -> LocalTimeSeries:
    """Density ``1{0 <-> r} / theta(r)`` along the trajectory."""
    th = theta[r]
    first, after = connection_indicator(traj, r)
    st = pieces(first, after, traj.times, traj.horizon)
    b, d = _merge(st)
    return LocalTimeSeries(r, "mu-bar", b, d / th)


def _inner_codes(traj: Trajectory, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints and the ``B_r`` state (as a bool matrix row per piece)."""
    ix = traj.region.index
    w = ix.ball_size(r)
    full = traj.initial.full.copy()
    rows = [full[:w].copy()]
    bps = [0.0]
    for t, c, s in zip(traj.times, traj.cells, traj.states):
        if c < w and full[c] != s:
            full[c] = s
            rows.append(full[:w].copy())
            bps.append(t)
    bps.append(traj.horizon)
    return np.array(bps), np.array(rows)


def estimate_M(cfg_inner: np.ndarray | Configuration, r: int, R: int, trials: int, rng,
               theta_R: float | None = None) -> tuple[float, float]:
    """``M_r`` for the given ``B_r`` contents: ``P(0 <-> R | B_r) / P(0 <-> R)``,
    the numerator by resampling ``B_R \\ B_r`` with ``B_r`` frozen.

    ``cfg_inner`` is a configuration on ``B_r`` or its states in kernel
    order.  ``theta_R`` is estimated with the same trial count when absent.
    Returns the estimate and its delta-method SE.
    """
    if R < 2 * r:
        raise ValueError("need R >= 2r")
    if trials < 1:
        raise InsufficientTrials("trials must be positive")
    rng = as_generator(rng)
    ix = ball_index(R)
    inner = cfg_inner.full if isinstance(cfg_inner, Configuration) else np.asarray(cfg_inner)
    inner = np.ascontiguousarray(inner[:ix.ball_size(r)], dtype=np.bool_)
    if not inner[0]:
        return 0.0, 0.0
    hits = K.conditional_crossing_trials(ix.nbr, inner, ix.n, int(ix.shell_start[R]), trials,
                                         kernel_seed(rng))
    p = hits / trials
    se_p = math.sqrt(p * (1 - p) / trials)
    if theta_R is None:
        e = estimate_theta(R, trials, rng)
        th, se_th = e.estimate, e.se
    else:
        th, se_th = theta_R, 0.0
    m = p / th
    se = m * math.sqrt((se_p / p) ** 2 + (se_th / th) ** 2) if p > 0 else se_p / th
    return m, se


def mu(traj: Trajectory, r: int, R: int | None = None, trials: int = 1000, rng=None, *,
       table: dict | None = None) -> LocalTimeSeries:
    """Piecewise-constant ``M_r`` along the trajectory.

    ``table`` maps a ``B_r`` state (bytes of the bool vector) to a density;
    states missing from it are estimated by :func:`estimate_M` and added.
    """
    R = 4 * r if R is None else R
    rng = as_generator(rng)
    bps, rows = _inner_codes(traj, r)
    table = {} if table is None else table
    th = None
    dens = np.empty(len(rows))
    for k, row in enumerate(rows):
        key = row.tobytes()
        if key not in table:
            if th is None:
                th = estimate_theta(R, trials, rng).estimate
            table[key] = estimate_M(row, r, R, trials, rng, theta_R=th)[0]
        dens[k] = table[key]
    return LocalTimeSeries(r, "mu", bps, dens)


def exact_M_table(r: int, R: int) -> dict:
    """Lookup table for :func:`mu` from exact enumeration."""
    from .exact import exact_M
    m = exact_M(r, R)
    w = len(m).bit_length() - 1
    bits = (np.arange(len(m))[:, None] >> np.arange(w)) & 1
    return {bits[c].astype(np.bool_).tobytes(): float(m[c]) for c in range(len(m))}


def sample_chi(series: LocalTimeSeries, rng, size: int | None = None):
    """Inverse-CDF draw(s) from ``series / series.total``."""
    masses = series.masses
    tot = masses.sum()
    if not tot > 0:
        raise ZeroMass("local time has zero mass")
    rng = as_generator(rng)
    u = rng.random(1 if size is None else size) * tot
    cum = np.cumsum(masses)
    k = np.minimum(np.searchsorted(cum, u, side="right"), len(masses) - 1)
    while np.any(masses[k] == 0):  # guard against float ties at piece ends
        k = np.where(masses[k] == 0, k - 1, k)
    start = cum[k] - masses[k]
    t = series.breakpoints[k] + (u - start) / series.density[k]
    t = np.clip(t, series.breakpoints[k], series.breakpoints[k + 1])
    return float(t[0]) if size is None else t


def annealed_sample(r: int, T: float, rng, theta: ThetaTable | None = None,
                    max_runs: int = 10**6):
    """Stationary trajectory on ``B_r`` accepted with probability
    ``mubar[0,T] theta(r) / T``, then ``chi`` drawn from ``mubar``.
    Returns ``(trajectory, chi, runs)``."""
    from .dynamics import simulate
    from .static import sample
    rng = as_generator(rng)
    theta = ThetaTable.exact([r]) if theta is None and ball_index(r).n <= 19 else theta
    reg = ball(r)
    for runs in range(1, max_runs + 1):
        traj = simulate(sample(reg, 0.5, rng), T, rng)
        s = mu_bar(traj, r, theta)
        if rng.random() * T < s.total * theta[r]:
            return traj, sample_chi(s, rng), runs
    raise RuntimeError("no acceptance within max_runs")


def annealed_window_codes(r: int, T: float, window: int, count: int, rng):
    """Batched annealed sampling: window codes of ``omega(chi)`` and the run count."""
    ix = ball_index(r)
    codes, chis, runs = D.annealed_batch(ix.nbr, ix.n, int(ix.shell_start[r]), float(T), window,
                                         count, kernel_seed(as_generator(rng)))
    return codes, chis, runs


# ---------------------------------------------------------------------------
# extra head


@dataclass(frozen=True)
class ExtraHead:
    trajectory: Trajectory  # shifted so that the chosen point is time 0
    J: int
    q: float
    points: np.ndarray  # Pi restricted to [0, J]


def extra_head_index(points: np.ndarray, run_length: int) -> int | None:
    """First integer ``n >= 1`` with more than ``n`` points in ``[0, n]``."""
    pts = np.sort(points)
    for n in range(1, run_length + 1):
        if np.searchsorted(pts, n, side="right") > n:
            return n
    return None


def poisson_points(series: LocalTimeSeries, rng) -> np.ndarray:
    """Poisson process on ``[0, horizon]`` with intensity ``series``: unit-rate
    marks in local-time units mapped back through the inverse mass."""
    rng = as_generator(rng)
    cum = np.concatenate([[0.0], np.cumsum(series.masses)])
    total = cum[-1]
    marks = np.cumsum(rng.exponential(1.0, size=int(2 * total + 64)))
    while marks[-1] < total:
        marks = np.concatenate([marks, marks[-1] + np.cumsum(rng.exponential(1.0, size=len(marks)))])
    marks = marks[marks < total]
    k = np.searchsorted(cum, marks, side="right") - 1
    return series.breakpoints[k] + (marks - cum[k]) / series.density[k]


def liggett_extra_head(r: int, rng, run_length: int = 1000,
                       theta: ThetaTable | None = None) -> ExtraHead:
    """Shift stationary dynamics on ``B_r`` to the ``J``-th point of the
    Poisson process with intensity ``mubar_r``; ``m_r = 1``."""
    from .dynamics import simulate
    from .static import sample
    rng = as_generator(rng)
    theta = ThetaTable.exact([r]) if theta is None and ball_index(r).n <= 19 else theta
    traj = simulate(sample(ball(r), 0.5, rng), float(run_length), rng)
    pts = poisson_points(mu_bar(traj, r, theta), rng)
    J = extra_head_index(pts, run_length)
    if J is None:
        raise RunLengthExceeded(f"no J within {run_length}")
    q = float(pts[J - 1])
    start = traj.at(q)
    keep = traj.times > q
    shifted = Trajectory(start, traj.times[keep] - q, traj.cells[keep], traj.states[keep],
                         traj.horizon - q, traj.convention)
    return ExtraHead(shifted, J, q, pts[pts <= J])


def liggett_window_codes(r: int, window: int, count: int, rng, run_length: int = 1000,
                         theta: float | None = None):
    """Batched extra-head shifts: window codes at the shifted origin, ``J``,
    ``q_J`` and the runs that exceeded ``run_length``."""
    from .exact import exact_theta
    ix = ball_index(r)
    th = exact_theta(r) if theta is None else theta
    return D.liggett_batch(ix.nbr, ix.n, int(ix.shell_start[r]), th, run_length, window, count,
                           kernel_seed(as_generator(rng)))


# ---------------------------------------------------------------------------
# samplers


def iic_r_sample(r: int, rng, count: int | None = None):
    """Bernoulli(1/2) on ``B_r`` conditioned on ``0 <-> r`` (rejection).
    With ``count`` returns ``(states, attempts)`` in kernel order."""
    ix = ball_index(r)
    out, attempts = K.iic_batch(ix.nbr, ix.n, int(ix.shell_start[r]), 1 if count is None else count,
                                kernel_seed(as_generator(rng)))
    if count is None:
        return Configuration(ball(r), out[0])
    return out, attempts


def iic_prime_sample(R: int, rng, count: int | None = None):
    """IIC_R reweighted by the pivotal count (rejection with acceptance
    ``|Piv| / |B_R|``).  With ``count`` returns ``(states, npiv, attempts)``."""
    ix = ball_index(R)
    out, npiv, attempts = D.iic_prime_batch(ix.nbr, ix.n, int(ix.shell_start[R]),
                                            1 if count is None else count,
                                            kernel_seed(as_generator(rng)))
    if count is None:
        return Configuration(ball(R), out[0])
    return out, npiv, attempts


def fetic_sample(R: int, rng) -> Configuration:
    """Configuration at the first exceptional time on ``B_R``."""
    return first_exceptional_time(ball(R), R, rng)[1]


def size_biased_cdf(N: np.ndarray):
    """CDF of ``N U`` with ``N`` reweighted by its size and ``U`` uniform:
    ``F(x) = sum min(N_i, x) / sum N_i``."""
    Ns = np.sort(np.asarray(N, dtype=np.float64))
    tot = Ns.sum()
    csum = np.concatenate([[0.0], np.cumsum(Ns)])

    def F(x):
        x = np.asarray(x, dtype=np.float64)
        k = np.searchsorted(Ns, x, side="right")
        return (csum[k] + x * (len(Ns) - k)) / tot
    return F
