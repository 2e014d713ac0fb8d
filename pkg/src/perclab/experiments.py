"""Desk-scale experiments: arm and pivotal exponents, the near-critical
window, Kesten's scaling relation, IIC sampling along trajectories, the
thinned/normal comparison, the centre-cannot-hold probability, collapse of
the IIC cluster and the volume exponent.

Every experiment is a pure function of its parameters and a master seed;
sub-streams are derived with :func:`perclab.rng.stream`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _dynkernels as D
from . import _kernels as K
from .dynamics import Trajectory, coupled_norm_thin, simulate
from .exact import iic_window_law, tv
from .lattice import ball, ball_index
from .measures import ThetaTable, ZeroMass, mu_bar, sample_chi
from .rng import as_generator, kernel_seed, run_chunks, stream
from .spectrum import parallelogram_neighbors
from .static import arm_probability, sample

ALPHA1_EXPONENT = 5 / 48
ALPHA4_EXPONENT = 5 / 4
PIVOTAL_EXPONENT = 3 / 4
COLLAPSE_EXPONENT = 4 / 3
VOLUME_EXPONENT = 2 - 5 / 48


class InsufficientPoints(ValueError):
    pass


def _sub(seed, *keys) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return np.random.Generator(np.random.Philox(seed.integers(0, 2**63 - 1)))
    return stream(seed, *keys)


# ---------------------------------------------------------------------------
# fits


@dataclass(frozen=True)
class ExponentFit:
    """Weighted least-squares fit of ``log y = a + slope * log x``."""

    name: str
    xs: np.ndarray
    estimates: np.ndarray
    ses: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    residuals: np.ndarray

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.slope - z * self.slope_se, self.slope + z * self.slope_se

    def rows(self) -> list[dict]:
        return [{"x": float(x), "estimate": float(e), "se": float(s), "residual": float(r)}
                for x, e, s, r in zip(self.xs, self.estimates, self.ses, self.residuals)]

    def summary(self) -> dict:
        return {f"{self.name}_slope": self.slope, f"{self.name}_slope_se": self.slope_se}


def fit_power_law(name: str, xs, ys, ses) -> ExponentFit:
    """Fit on logs with weights ``(y / se)^2`` (delta method); points with
    zero SE get the smallest positive relative SE present."""
    xs, ys, ses = (np.asarray(v, dtype=np.float64) for v in (xs, ys, ses))
    if len(xs) < 4:
        raise InsufficientPoints(f"{name}: need at least 4 points, got {len(xs)}")
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ValueError(f"{name}: log-log fit needs positive values")
    rel = ses / ys
    floor = rel[rel > 0].min() if np.any(rel > 0) else 1.0
    w = 1.0 / np.maximum(rel, floor) ** 2
    X = np.column_stack([np.ones_like(xs), np.log(xs)])
    y = np.log(ys)
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    a, b = cov @ (X.T @ (w * y))
    return ExponentFit(name, xs, ys, ses, float(b), float(math.sqrt(cov[1, 1])), float(a),
                       y - (a + b * np.log(xs)))


# ---------------------------------------------------------------------------
# arms and pivotals


def exp_arm_exponents(radii, trials: int, rng, four_radii=None) -> tuple[ExponentFit, ExponentFit]:
    """Fits of ``alpha_1(1, R)`` and ``alpha_4(1, R)`` against ``R``."""
    four_radii = radii if four_radii is None else four_radii
    if len(radii) < 4 or len(four_radii) < 4:
        raise InsufficientPoints("need at least 4 radii")
    out = []
    for kind, rs in (("one-arm", radii), ("four-arm", four_radii)):
        est = [arm_probability(kind, 1, R, 0.5, trials, _sub(rng, "arm", kind, R)) for R in rs]
        out.append(fit_power_law("alpha1" if kind == "one-arm" else "alpha4", rs,
                                 [e.estimate for e in est], [e.se for e in est]))
    return out[0], out[1]


def box_pivotal_counts(L: int, p: float, trials: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Pivotal counts and outcomes of the left-right crossing of the ``L x L``
    parallelogram."""
    nbr = parallelogram_neighbors(L)
    return K.box_pivotal_counts(nbr, L, p, trials, seed)


def annulus_pivotal_counts(R: int, p: float, trials: int, seed: int):
    """Pivotal counts and outcomes of the crossing ``{d = R} <-> {d = 2R}``."""
    ix = ball_index(2 * R)
    return K.annulus_pivotal_counts(ix.nbr, int(ix.shell_start[R]), int(ix.shell_start[R + 1]),
                                    ix.n, int(ix.shell_start[2 * R]), p, trials, seed)


@dataclass(frozen=True)
class PivotalScale:
    """``E|Piv|`` per radius for a crossing event and the inverse map."""

    event: str  # "annulus" (A(R, 2R)) | "box" (A(R))
    radii: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    crossing: np.ndarray  # crossing probability per radius

    def fit(self) -> ExponentFit:
        return fit_power_law(f"piv_{self.event}", self.radii, self.means, self.ses)

    def piv(self, R: float) -> float:
        """Log-log interpolation of ``E|Piv|``; outside the measured radii,
        the fitted slope continued from the nearest endpoint."""
        lx, ly = np.log(self.radii), np.log(self.means)
        x = math.log(R)
        if x < lx[0] or x > lx[-1]:
            k = 0 if x < lx[0] else -1
            return float(math.exp(ly[k] + self.fit().slope * (x - lx[k])))
        return float(math.exp(np.interp(x, lx, ly)))

    def rho(self, r: float) -> int:
        """Smallest integer ``R >= 1`` with ``piv(R) >= r``."""
        if self.piv(1) >= r:
            return 1
        hi = 2
        while self.piv(hi) < r:
            hi *= 2
        lo = hi // 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.piv(mid) >= r:
                hi = mid
            else:
                lo = mid
        return hi

    def rows(self) -> list[dict]:
        return [{"R": int(R), "mean_piv": float(m), "se": float(s), "crossing": float(c)}
                for R, m, s, c in zip(self.radii, self.means, self.ses, self.crossing)]


def exp_pivotal_scale(radii, trials: int, rng, event: str = "annulus") -> PivotalScale:
    """Mean pivotal counts at p = 1/2 for ``A(R, 2R)`` (annulus) or ``A(R)``
    (left-right crossing of the ``R x R`` parallelogram)."""
    if event not in ("annulus", "box"):
        raise ValueError(f"unknown event {event!r}")
    fn = annulus_pivotal_counts if event == "annulus" else box_pivotal_counts
    means, ses, cross = [], [], []
    for R in radii:
        parts = run_chunks(lambda i, n, g: fn(R, 0.5, n, kernel_seed(g)), trials,
                           _sub(rng, "piv", event, R))
        c = np.concatenate([p[0] for p in parts]).astype(np.float64)
        x = np.concatenate([p[1] for p in parts])
        means.append(c.mean())
        ses.append(c.std(ddof=1) / math.sqrt(len(c)) if len(c) > 1 else 0.0)
        cross.append(x.mean())
    return PivotalScale(event, np.asarray(radii), np.array(means), np.array(ses), np.array(cross))


# ---------------------------------------------------------------------------
# near-critical window and scaling relation


def annulus_crossing(R: int, p: float, trials: int, rng) -> tuple[float, float]:
    ix = ball_index(2 * R)
    lo = int(ix.shell_start[R])
    hits = sum(run_chunks(lambda i, n, g: int(K.lazy_crossing_trials(
        ix.nbr, lo, int(ix.shell_start[R + 1]), lo, ix.n, int(ix.shell_start[2 * R]), p, n,
        kernel_seed(g))), trials, as_generator(rng)))
    est = hits / trials
    return est, math.sqrt(est * (1 - est) / trials)


def exp_window(R_list, s_list, trials: int, rng, scale: PivotalScale | None = None) -> list[dict]:
    """``P_p(A(R, 2R))`` at ``p = 1/2 +- s / E|Piv_{A(R)}|``."""
    if scale is None:
        scale = exp_pivotal_scale(R_list, trials, _sub(rng, "window-scale"), event="box")
    rows = []
    for R in R_list:
        piv = scale.piv(R)
        for s in s_list:
            for sign in ((1,) if s == 0 else (-1, 1)):
                p = 0.5 + sign * s / piv
                if not 0 <= p <= 1:
                    est, se = (1.0 if p > 1 else 0.0), 0.0
                else:
                    est, se = annulus_crossing(R, p, trials, _sub(rng, "window", R, s, sign))
                rows.append({"R": R, "s": s, "sign": sign, "p": p, "mean_piv": piv,
                             "estimate": est, "se": se})
    return rows


def origin_to_sphere(R: int, p: float, trials: int, rng) -> tuple[float, float]:
    """``P_p(0 <-> R)``."""
    ix = ball_index(R)
    hits = sum(run_chunks(lambda i, n, g: int(K.lazy_crossing_trials(
        ix.nbr, 0, 1, 0, ix.n, int(ix.shell_start[R]), p, n, kernel_seed(g))),
        trials, as_generator(rng)))
    est = hits / trials
    return est, math.sqrt(est * (1 - est) / trials)


def exp_kesten_relation(epsilons, R_max: int, trials: int, rng,
                        scale: PivotalScale | None = None) -> list[dict]:
    """``P_{1/2+eps}(0 <-> R_max)`` next to ``P_{1/2}(0 <-> rho(1/eps))``."""
    if scale is None:
        scale = exp_pivotal_scale([8, 16, 32, 64], trials, _sub(rng, "kesten-scale"), event="box")
    rows = []
    for eps in epsilons:
        p_hat, p_se = origin_to_sphere(R_max, min(0.5 + eps, 1.0), trials,
                                       _sub(rng, "kesten", "p", eps))
        rho = scale.rho(1.0 / eps)
        a_hat, a_se = origin_to_sphere(rho, 0.5, trials, _sub(rng, "kesten", "a", eps))
        rows.append({"epsilon": eps, "p_hat": p_hat, "p_se": p_se, "rho": rho,
                     "alpha1_hat": a_hat, "alpha1_se": a_se,
                     "ratio": p_hat / a_hat if a_hat > 0 else math.inf})
    return rows


# ---------------------------------------------------------------------------
# IIC sampling along trajectories


def exp_quenched_iic(r: int, T_list, rng, draws: int = 100_000, window: int = 7) -> list[dict]:
    """TV distance on the first ``window`` cells between the law of
    ``omega(chi)`` (chi drawn from ``mubar_r`` on ``[0, T]`` of one long
    trajectory) and the enumerated IIC_r marginal."""
    rng = as_generator(rng)
    g_traj, g_chi = rng.spawn(2)
    H = float(max(T_list))
    traj = simulate(sample(ball(r), 0.5, g_traj), H, g_traj)
    theta = ThetaTable.exact([r])
    law = iic_window_law(r, window)
    codes = traj.window_codes(window)
    rows = []
    for T in T_list:
        k = int(np.searchsorted(traj.times, T, side="right"))
        sub = Trajectory(traj.initial, traj.times[:k], traj.cells[:k], traj.states[:k], float(T))
        s = mu_bar(sub, r, theta)
        if not s.total > 0:
            raise ZeroMass(f"no connection on [0, {T}]")
        chi = sample_chi(s, g_chi, draws)
        idx = np.searchsorted(sub.times, chi, side="right")
        emp = np.bincount(codes[idx], minlength=1 << window) / draws
        rows.append({"T": float(T), "tv": tv(emp, law), "mass": s.total})
    return rows


def window_tv(codes: np.ndarray, law: np.ndarray) -> float:
    return tv(np.bincount(codes, minlength=len(law)) / len(codes), law)


# ---------------------------------------------------------------------------
# thinned versus normal


def bootstrap_ratio(num: np.ndarray, den: np.ndarray, rng, resamples: int = 1000,
                    level: float = 0.95) -> tuple[float, float, float]:
    """Ratio of means with a paired percentile bootstrap CI."""
    num, den = np.asarray(num, float), np.asarray(den, float)
    est = num.mean() / den.mean() if den.sum() > 0 else math.nan
    rng = as_generator(rng)
    n = len(num)
    if n == 0:
        return math.nan, math.nan, math.nan
    idx = rng.integers(0, n, size=(resamples, n))
    with np.errstate(invalid="ignore", divide="ignore"):
        boots = num[idx].mean(1) / den[idx].mean(1)
    boots = boots[np.isfinite(boots)]
    if len(boots) == 0:
        return est, math.nan, math.nan
    a = (1 - level) / 2
    return float(est), float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))


@dataclass
class FeticReport:
    r: int
    epsilon: float
    R: int
    pairs: int
    fine: int
    capped: int
    ratio: float
    ci: tuple
    e_thin: float
    e_norm: float
    containment_violations: int
    window_tv: float
    window_tv_ci: tuple
    samples: list = field(repr=False, default_factory=list)

    def summary(self) -> dict:
        return {"pairs": self.pairs, "fine": self.fine, "capped": self.capped,
                "ratio": self.ratio, "ci_lo": self.ci[0], "ci_hi": self.ci[1],
                "containment_violations": self.containment_violations,
                "window_tv": self.window_tv}


def exp_fetic_vs_iic(r: int, epsilon: float, R: int, trials: int, rng, cap: float = 64.0,
                     window_trials: int | None = None) -> FeticReport:
    """Coupled normal/thinned pairs and the ratio of ``E[T 1_Fine]`` to
    ``E[N 1_Fine]``; capped pairs are excluded.  Also compares FETIC_R and
    IIC_R on the ``B_1`` window."""
    samples = [coupled_norm_thin(r, epsilon, R, _sub(rng, "pair", i), cap) for i in range(trials)]
    keep = [s for s in samples if not (s.cap_N or s.cap_T)]
    fine = np.array([s.fine for s in keep])
    N = np.array([s.N for s in keep])
    T = np.array([s.T for s in keep])
    ratio, lo, hi = bootstrap_ratio(T * fine, N * fine, _sub(rng, "boot"))
    viol = sum(1 for s in keep if s.fine and s.good and s.N > 1 / r and not s.T > 1 / r)
    # FETIC_R versus IIC_R on B_1
    wt = trials if window_trials is None else window_trials
    ix = ball_index(R)
    _, capped, _, finals = D.fet_batch(ix.nbr, ix.n, ix.n, int(ix.shell_start[R]), wt, math.inf,
                                       kernel_seed(_sub(rng, "fetic")))
    iic, _ = K.iic_batch(ix.nbr, ix.n, int(ix.shell_start[R]), wt, kernel_seed(_sub(rng, "iic")))
    w = 7
    pw = 1 << np.arange(w)
    cf, ci_ = finals[:, :w] @ pw, iic[:, :w] @ pw
    t0 = tv(np.bincount(cf, minlength=1 << w) / wt, np.bincount(ci_, minlength=1 << w) / wt)
    g = _sub(rng, "boot-tv")
    bt = [tv(np.bincount(cf[g.integers(0, wt, wt)], minlength=1 << w) / wt,
             np.bincount(ci_[g.integers(0, wt, wt)], minlength=1 << w) / wt) for _ in range(1000)]
    return FeticReport(r, epsilon, R, len(samples), int(fine.sum()),
                       len(samples) - len(keep), ratio, (lo, hi),
                       float((T * fine).mean()) if len(keep) else math.nan,
                       float((N * fine).mean()) if len(keep) else math.nan, viol, t0,
                       (float(np.quantile(bt, 0.025)), float(np.quantile(bt, 0.975))), samples)


# ---------------------------------------------------------------------------
# centre cannot hold, collapse, volume


def default_g(m: float) -> float:
    return math.log2(m) / 4


def exp_centre_cannot_hold(n_list, trials: int, rng, g=default_g) -> list[dict]:
    """``P(exists t in [1/(2n), g(2n)] : 0 <-> n)`` from only the x-axis of
    ``B_n`` open."""
    rows = []
    for n in n_list:
        ix = ball_index(n)
        t0, t1 = 1 / (2 * n), g(2 * n)
        hits = sum(run_chunks(lambda i, m, gen: int(D.fallone_batch(
            ix.nbr, ix.n, int(ix.shell_start[n]), ix.x_axis, t0, t1, m, kernel_seed(gen))),
            trials, _sub(rng, "centre", n)))
        est = hits / trials
        rows.append({"n": n, "t_start": t0, "t_end": t1, "hits": hits, "trials": trials,
                     "estimate": est, "se": math.sqrt(est * (1 - est) / trials)})
    return rows


@dataclass(frozen=True)
class CollapseResult:
    R: int
    t_grid: np.ndarray
    paths: np.ndarray  # running-infimum radius per trial and grid time
    fit: ExponentFit

    @property
    def mean_chi(self) -> np.ndarray:
        return self.paths.mean(0)

    def rows(self) -> list[dict]:
        m = self.mean_chi
        se = self.paths.std(0, ddof=1) / math.sqrt(len(self.paths))
        return [{"t": float(t), "mean_chi": float(a), "se": float(b)}
                for t, a, b in zip(self.t_grid, m, se)]


def exp_collapse(R: int, t_grid, trials: int, rng) -> CollapseResult:
    """``chi_t`` (running infimum of the origin cluster radius) from IIC_R
    starts; fit of the mean ``chi_t`` against ``1/t`` over the positive grid
    times."""
    t_grid = np.asarray(t_grid, dtype=np.float64)
    ix = ball_index(R)
    g = _sub(rng, "collapse", R)
    paths = np.empty((trials, len(t_grid)), dtype=np.int64)
    for i in range(trials):
        gi = g.spawn(1)[0]
        st, _ = K.iic_batch(ix.nbr, ix.n, int(ix.shell_start[R]), 1, kernel_seed(gi))
        paths[i] = D.collapse_run(st[0], ix.nbr, ix.dist, t_grid, kernel_seed(gi))
    m = paths.mean(0).astype(np.float64)
    se = paths.std(0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros_like(m)
    pos = t_grid > 0
    fit = fit_power_law("collapse", 1.0 / t_grid[pos], m[pos], se[pos])
    return CollapseResult(R, t_grid, paths, fit)


@dataclass(frozen=True)
class VolumeResult:
    r: int
    n_list: np.ndarray
    profiles: np.ndarray  # |C_0 cap B_n| per trial, n = 0..max
    fit: ExponentFit

    def rows(self) -> list[dict]:
        return self.fit.rows()


def exp_volume_exponent(r: int, n_list, trials: int, rng) -> VolumeResult:
    """Fit of ``E_{IIC_r} |C_0 cap B_n|`` against ``n`` for ``n <= r/2``."""
    n_list = np.asarray(n_list)
    if np.any(n_list > r / 2) or np.any(n_list < 1):
        raise ValueError("need 1 <= n <= r/2")
    ix = ball_index(r)
    parts = run_chunks(lambda i, m, g: K.volume_profile(
        K.iic_batch(ix.nbr, ix.n, int(ix.shell_start[r]), m, kernel_seed(g))[0],
        ix.nbr, ix.dist, int(n_list.max())), trials, _sub(rng, "volume", r), chunk=512)
    prof = np.concatenate(parts)
    vals = prof[:, n_list].astype(np.float64)
    fit = fit_power_law("volume", n_list, vals.mean(0), vals.std(0, ddof=1) / math.sqrt(trials))
    return VolumeResult(r, n_list, prof, fit)
