import math

import numpy as np
import pytest
from scipy import stats

import oracles
from perclab import exact
from perclab.dynamics import Trajectory, _fet, reconnection_samples, fet_samples, simulate
from perclab.lattice import ball, ball_index, origin
from perclab.measures import (LocalTimeSeries, MissingTheta, ThetaEntry, ThetaTable, ZeroMass,
                              annealed_sample, annealed_window_codes, estimate_M,
                              estimate_theta, exact_M_table, extra_head_index, fetic_sample,
                              iic_prime_sample, iic_r_sample, liggett_extra_head,
                              liggett_window_codes, mu, mu_bar, poisson_points,
                              RunLengthExceeded, sample_chi, size_biased_cdf)
from perclab.rng import as_generator
from perclab.static import Configuration, pivotal_indices, sample, zero_to_R

W = 1 << np.arange(7)


def _all(R, v):
    return Configuration(ball(R), np.full(len(ball(R)), v))


@pytest.fixture(scope="module")
def oracle_M(b2_laws):
    """Exact ``M_1`` at R = 2 and ``theta(1), theta(2)`` from the oracle tables."""
    conn2, npiv2 = b2_laws
    th2 = conn2.mean()
    cond = np.bincount(np.arange(len(conn2)) % 128, weights=conn2, minlength=128) / (len(conn2) // 128)
    conn1, _ = oracles.ball_laws(1)
    return cond / th2, conn1, conn1.mean(), th2


# ---------------------------------------------------------------------------
# theta


def test_theta_values(b2_laws):
    e0 = estimate_theta(0, 100_000, 1)
    assert abs(e0.estimate - 0.5) < 3 * e0.se
    e1 = estimate_theta(1, 100_000, 2)
    assert abs(e1.estimate - 63 / 128) < 3 * e1.se
    e2 = estimate_theta(2, 100_000, 3)
    assert abs(e2.estimate - b2_laws[0].mean()) < 3 * e2.se


def test_theta_exact_matches_enumeration(b2_laws):
    assert exact.exact_theta(1) == 63 / 128
    assert exact.exact_theta(2) == b2_laws[0].mean()


def test_theta_table(tmp_path):
    tab = ThetaTable()
    tab.add(ThetaEntry(1, 0.49, 0.001, 1000, 5))
    with pytest.raises(ValueError):
        tab.add(ThetaEntry(1, 0.5, 0.001, 1000, 5))
    with pytest.raises(MissingTheta):
        tab[3]
    with pytest.raises(ValueError):
        tab.add(ThetaEntry(2, 0.0, 0.0, 1, 1))
    tab.to_csv(tmp_path / "t.csv")
    back = ThetaTable.from_csv(tmp_path / "t.csv")
    assert back.entries == tab.entries


def test_theta_table_monotone():
    tab = ThetaTable()
    for r in (1, 2, 4, 8):
        tab.add(estimate_theta(r, 20_000, r))
    vals = [tab.entries[r] for r in (1, 2, 4, 8)]
    for a, b in zip(vals, vals[1:]):
        assert b.estimate <= a.estimate + 3 * math.hypot(a.se, b.se)


# ---------------------------------------------------------------------------
# local time series


def test_mu_bar_trivial_cases():
    th = ThetaTable.exact([2])
    never = Trajectory(_all(2, False), [], [], [], 3.0)
    assert mu_bar(never, 2, th).total == 0.0
    always = Trajectory(_all(2, True), [], [], [], 3.0)
    assert mu_bar(always, 2, th).total == pytest.approx(3.0 / th[2], rel=1e-12)
    with pytest.raises(MissingTheta):
        mu_bar(never, 3, th)


def test_mu_bar_mass_matches_timeline():
    from perclab.dynamics import connection_timeline
    th = ThetaTable.exact([2])
    tr = simulate(sample(ball(2), 0.5, 1), 5.0, 2)
    assert mu_bar(tr, 2, th).total == pytest.approx(connection_timeline(tr, 2).total / th[2])


def test_mu_bar_unit_mean(oracle_M):
    th = ThetaTable()
    th.add(ThetaEntry(2, float(oracle_M[3]), 0.0, 0, 0))
    rng = np.random.default_rng(3)
    m = np.array([mu_bar(simulate(sample(ball(2), 0.5, rng), 1.0, rng), 2, th).total
                  for _ in range(10_000)])
    assert abs(m.mean() - 1.0) < 3 * m.std() / math.sqrt(len(m))


def test_estimate_M_closed_origin():
    assert estimate_M(_all(1, False), 1, 2, 100, 0) == (0.0, 0.0)


def test_estimate_M_vs_enumeration(oracle_M):
    M1 = oracle_M[0]
    rng = np.random.default_rng(4)
    for code in range(128):
        bits = ((code >> np.arange(7)) & 1).astype(bool)
        m, se = estimate_M(bits, 1, 2, 20_000, rng)
        if M1[code] == 0:
            assert m == 0
        else:
            assert abs(m - M1[code]) < 3 * se + 1e-12


def test_M_bounded_by_quasi_multiplicative_constant(oracle_M):
    M1, conn1, th1, _ = oracle_M
    mbar = conn1 / th1
    pos = mbar > 0
    C = float(np.max(M1[pos] / mbar[pos]))
    assert np.all(M1[~pos] == 0)
    assert exact.qm_constant(1, 2) == pytest.approx(C, rel=1e-12)
    rng = np.random.default_rng(5)
    for code in range(0, 128, 3):
        bits = ((code >> np.arange(7)) & 1).astype(bool)
        m, se = estimate_M(bits, 1, 2, 5_000, rng)
        assert m <= C * mbar[code] + 3 * se + 1e-12


def test_martingale_identity_exact(oracle_M, b2_laws):
    M1 = oracle_M[0]
    conn2 = b2_laws[0]
    M2 = conn2 / conn2.mean()
    cond = np.bincount(np.arange(len(M2)) % 128, weights=M2, minlength=128) / (len(M2) // 128)
    assert np.max(np.abs(cond - M1)) < 1e-12
    pkg = exact.conditional_mean(exact.exact_M_bar(2), 7)
    assert np.max(np.abs(pkg - exact.exact_M(1, 2))) < 1e-12
    assert np.max(np.abs(exact.exact_M(1, 2) - M1)) < 1e-12


def test_martingale_identity_on_ring_free_interval(oracle_M, b2_laws):
    # on an interval with no rings mu_r[0,T] = T M_r, so conditioning on the
    # B_1 contents reduces to the identity above, weighted by T
    T = 0.7
    table2 = {np.array([(c >> i) & 1 for i in range(19)], bool).tobytes(): v
              for c, v in enumerate(b2_laws[0] / b2_laws[0].mean())}
    M1 = oracle_M[0]
    rng = np.random.default_rng(6)
    for code in rng.integers(0, 128, size=8):
        inner = ((code >> np.arange(7)) & 1).astype(bool)
        outer_codes = np.arange(1 << 12)
        masses = []
        for oc in outer_codes:
            bits = np.concatenate([inner, ((oc >> np.arange(12)) & 1).astype(bool)])
            tr = Trajectory(Configuration(ball(2), bits), [], [], [], T)
            masses.append(mu(tr, 2, 2, table=table2).total)
        lhs = float(np.mean(masses))
        tr1 = Trajectory(Configuration(ball(1), inner), [], [], [], T)
        rhs = mu(tr1, 1, 2, table=exact_M_table(1, 2)).total
        assert abs(lhs - rhs) < 1e-12
        assert abs(rhs - T * M1[code]) < 1e-12


def test_mu_origin_closed_has_zero_mass():
    cfg = sample(ball(8), 0.5, 7).with_states({origin(): False})
    tr = simulate(cfg, 2.0, 8)
    keep = tr.cells != 0
    tr = Trajectory(cfg, tr.times[keep], tr.cells[keep], tr.states[keep], 2.0)
    assert mu(tr, 2, 8, trials=200, rng=9).total == 0.0


def test_mu_unit_mean_and_comparability():
    table = exact_M_table(1, 2)
    th = ThetaTable.exact([1])
    C = exact.qm_constant(1, 2)
    rng = np.random.default_rng(10)
    masses = []
    for _ in range(10_000):
        tr = simulate(sample(ball(2), 0.5, rng), 1.0, rng)
        m = mu(tr, 1, 2, table=table).total
        assert m <= C * mu_bar(tr, 1, th).total + 1e-12
        masses.append(m)
    m = np.array(masses)
    assert abs(m.mean() - 1.0) < 3 * m.std() / math.sqrt(len(m))


def test_mu_estimated_table_is_reused():
    tr = simulate(sample(ball(8), 0.5, 11), 0.5, 12)
    table = {}
    s = mu(tr, 2, 8, trials=300, rng=13, table=table)
    assert len(table) == len({bytes(k) for k in table})
    assert s.total >= 0
    again = mu(tr, 2, 8, trials=300, rng=99, table=table)
    assert np.array_equal(again.density, s.density)


def test_no_piece_exceeds_density_times_length():
    th = ThetaTable.exact([2])
    tr = simulate(sample(ball(2), 0.5, 14), 20.0, 15)
    s = mu_bar(tr, 2, th)
    lengths = np.diff(s.breakpoints)
    assert np.all(s.masses <= s.density * lengths + 1e-15)
    assert s.masses.max() < 1.0 / th[2] * lengths.max() + 1e-15


def test_ergodic_average():
    entry = estimate_theta(4, 1_000_000, 16)
    th = ThetaTable()
    th.add(entry)
    tr = simulate(sample(ball(4), 0.5, 17), 1000.0, 18)
    s = mu_bar(tr, 4, th)
    avgs = [s.mass_between(0, T) / T for T in (10, 100, 1000)]
    # batch means over 20 blocks of length 50 for the error bar
    blocks = np.array([s.mass_between(50 * k, 50 * (k + 1)) / 50 for k in range(20)])
    se = blocks.std(ddof=1) / math.sqrt(len(blocks))
    assert abs(avgs[-1] - 1.0) < 3 * se + 3 * entry.se / entry.estimate
    assert abs(avgs[-1] - 1.0) <= abs(avgs[0] - 1.0) + 3 * se


def test_series_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        LocalTimeSeries(1, "mu", np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        LocalTimeSeries(1, "mu", np.array([0.0, 1.0]), np.array([-1.0]))
    s = LocalTimeSeries(1, "mu", np.array([0.0, 0.5, 2.0]), np.array([2.0, 1.0]))
    assert s.total == 2.5
    assert s.mass_between(0.25, 1.0) == pytest.approx(1.0)
    s.to_csv(tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "t_start,t_end,density" and len(rows) == 3


# ---------------------------------------------------------------------------
# chi sampling


def test_sample_chi_uniform():
    s = LocalTimeSeries(1, "mu-bar", np.array([0.0, 0.3, 1.0, 2.0]), np.array([1.0, 1.0, 1.0]))
    t = sample_chi(s, 19, size=100_000)
    assert stats.kstest(t / 2.0, "uniform").pvalue > 0.01


def test_sample_chi_single_piece():
    s = LocalTimeSeries(1, "mu-bar", np.array([0.0, 1.0, 1.5, 3.0]), np.array([0.0, 4.0, 0.0]))
    t = sample_chi(s, 20, size=10_000)
    assert np.all((t >= 1.0) & (t <= 1.5))


def test_sample_chi_two_pieces():
    s = LocalTimeSeries(1, "mu-bar", np.array([0.0, 1.0, 2.0]), np.array([1.0, 3.0]))
    n = 100_000
    f = (sample_chi(s, 21, size=n) > 1.0).mean()
    assert abs(f - 0.75) < 3 * math.sqrt(0.75 * 0.25 / n)


def test_sample_chi_zero_mass():
    s = LocalTimeSeries(1, "mu-bar", np.array([0.0, 1.0]), np.array([0.0]))
    with pytest.raises(ZeroMass):
        sample_chi(s, 0)


# ---------------------------------------------------------------------------
# annealed and extra head


def test_annealed_sample_properties():
    rng = np.random.default_rng(22)
    for _ in range(100):
        tr, chi, runs = annealed_sample(2, 1.0, rng)
        assert 0 <= chi <= 1.0 and runs >= 1
        assert zero_to_R(tr.at(chi), 2)


def test_annealed_acceptance_rate(b2_laws):
    th = b2_laws[0].mean()
    count = 20_000
    _, _, runs = annealed_window_codes(2, 1.0, 7, count, 23)
    rate = count / runs
    assert abs(rate - th) < 3 * math.sqrt(th * (1 - th) / runs)


def test_annealed_window_law(b2_laws):
    law = oracles.window_law(b2_laws[0], 7)
    codes, chis, _ = annealed_window_codes(2, 1.0, 7, 100_000, 24)
    emp = np.bincount(codes, minlength=128) / len(codes)
    assert oracles.tv(emp, law) < 0.02


def test_extra_head_index():
    assert extra_head_index(np.array([0.2, 0.5]), 10) == 1
    assert extra_head_index(np.array([0.5, 1.5, 1.7]), 10) == 2
    assert extra_head_index(np.array([5.0]), 3) is None


def test_liggett_shift_lands_in_connection_set():
    th = ThetaTable.exact([2])
    rng = np.random.default_rng(25)
    done = 0
    for _ in range(60):
        try:
            eh = liggett_extra_head(2, rng, run_length=200, theta=th)
        except RunLengthExceeded:
            continue
        done += 1
        assert zero_to_R(eh.trajectory.initial, 2)
        assert eh.J >= 1 and np.count_nonzero(eh.points <= eh.J) > eh.J
    assert done >= 40


def test_poisson_points_in_local_time():
    th = ThetaTable.exact([2])
    rng = np.random.default_rng(26)
    counts = []
    for _ in range(200):
        tr = simulate(sample(ball(2), 0.5, rng), 50.0, rng)
        s = mu_bar(tr, 2, th)
        pts = poisson_points(s, rng)
        assert np.all(s.density[np.searchsorted(s.breakpoints, pts, side="right") - 1] > 0)
        cum = np.concatenate([[0.0], np.cumsum(s.masses)])
        local = np.interp(pts, s.breakpoints, cum)
        c = np.bincount(local.astype(np.int64), minlength=int(cum[-1]) + 1)
        counts.extend(c[:int(cum[-1])])
    counts = np.array(counts)
    obs = np.bincount(np.minimum(counts, 5), minlength=6)
    p = stats.poisson.pmf(np.arange(5), 1.0)
    exp = np.concatenate([p, [1 - p.sum()]]) * len(counts)
    assert ((obs - exp) ** 2 / exp).sum() < stats.chi2.ppf(0.999, 5)
    # counts in neighbouring windows are uncorrelated
    assert abs(np.corrcoef(counts[:-1], counts[1:])[0, 1]) < 4 / math.sqrt(len(counts))


def test_liggett_window_law(b2_laws):
    law = oracles.window_law(b2_laws[0], 7)
    codes, Js, qs, exceeded = liggett_window_codes(2, 7, 100_000, 26, run_length=1000)
    kept = codes[~exceeded]
    emp = np.bincount(kept, minlength=128) / len(kept)
    assert oracles.tv(emp, law) < 0.02


# ---------------------------------------------------------------------------
# IIC samplers


def test_iic_r_sample(b2_laws):
    for s in range(50):
        assert zero_to_R(iic_r_sample(3, s), 3)
    count = 100_000
    states, attempts = iic_r_sample(2, 27, count=count)
    th = b2_laws[0].mean()
    assert abs(count / attempts - th) < 3 * math.sqrt(th * (1 - th) / attempts)
    emp = np.bincount(states[:, :7] @ W, minlength=128) / count
    assert oracles.tv(emp, oracles.window_law(b2_laws[0], 7)) < 0.02


def test_iic_prime_sample(b2_laws):
    conn, npiv = b2_laws
    states, piv, attempts = iic_prime_sample(2, 28, count=100_000)
    assert np.all(piv > 0)
    emp = np.bincount(states[:, :7] @ W, minlength=128) / len(states)
    assert oracles.tv(emp, oracles.window_law(conn * npiv, 7)) < 0.02
    # size-biasing raises the mean pivotal count
    base, _ = iic_r_sample(2, 29, count=20_000)
    base_piv = np.array([len(pivotal_indices(Configuration(ball(2), b), 2)) for b in base])
    se = math.hypot(piv.std() / math.sqrt(len(piv)), base_piv.std() / math.sqrt(len(base_piv)))
    assert piv.mean() >= base_piv.mean() - 3 * se
    # reported pivotal counts agree with recomputation
    for b, k in zip(states[:200], piv[:200]):
        assert len(pivotal_indices(Configuration(ball(2), b), 2)) == k


def test_fetic_sample():
    for s in range(50):
        cfg = fetic_sample(4, s)
        assert zero_to_R(cfg, 4)
    for s in range(50):
        t, cfg, last = _fet(ball(4), 4, s, math.inf)
        assert zero_to_R(cfg, 4)
        assert last in set(pivotal_indices(cfg, 4))
        full = cfg.full.copy()
        full[last] = False
        assert not zero_to_R(Configuration(ball(4), full), 4)


def test_size_biased_cdf():
    F = size_biased_cdf(np.array([1.0, 3.0]))
    # mixture: w.p. 1/4 uniform on [0,1], w.p. 3/4 uniform on [0,3]
    assert F(0.0) == 0.0 and F(3.0) == pytest.approx(1.0)
    assert F(1.0) == pytest.approx(0.25 + 0.75 / 3)


def test_size_biasing_identity_small():
    n = 20_000
    N, capped = reconnection_samples(4, n, 30, t_cap=math.inf)
    assert not capped.any()
    fet = fet_samples(4, n, 31)
    ks = stats.kstest(fet, size_biased_cdf(N)).statistic
    assert ks < 1.63 / math.sqrt(n) * math.sqrt(2)
