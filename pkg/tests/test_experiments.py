import math

import numpy as np
import pytest

import oracles
from perclab import _kernels as K
from perclab.experiments import (InsufficientPoints, PivotalScale, annulus_crossing,
                                 bootstrap_ratio, box_pivotal_counts, exp_arm_exponents,
                                 exp_centre_cannot_hold, exp_collapse, exp_fetic_vs_iic,
                                 exp_kesten_relation, exp_pivotal_scale, exp_quenched_iic,
                                 exp_volume_exponent, exp_window, fit_power_law)
from perclab.lattice import ball_index
from perclab.measures import ZeroMass
from perclab.spectrum import crossing_table, pivotal_moments


def test_fit_recovers_exact_power_law():
    xs = np.array([2.0, 4.0, 8.0, 16.0, 32.0])
    ys = 3.0 * xs ** -1.25
    f = fit_power_law("t", xs, ys, 0.01 * ys)
    assert f.slope == pytest.approx(-1.25, abs=1e-12)
    assert math.exp(f.intercept) == pytest.approx(3.0)
    assert np.allclose(f.residuals, 0, atol=1e-12)
    lo, hi = f.ci()
    assert lo <= f.slope <= hi


def test_insufficient_points():
    with pytest.raises(InsufficientPoints):
        fit_power_law("t", [8], [0.5], [0.01])
    with pytest.raises(InsufficientPoints):
        exp_arm_exponents([8], 100, 0)


def test_arm_fit_small_run_has_negative_slopes():
    a1, a4 = exp_arm_exponents([4, 8, 16, 32], 4000, 1)
    assert a1.slope < 0 and a4.slope < a1.slope
    assert len(a1.rows()) == 4


def _scale():
    return PivotalScale("box", np.array([8, 16, 32, 64]), np.array([4.0, 6.7, 11.3, 19.0]),
                        np.full(4, 0.1), np.full(4, 0.5))


def test_rho_inverts_piv():
    sc = _scale()
    for R in (3, 8, 12, 16, 40, 64, 200):
        assert sc.rho(sc.piv(R)) == R
    r = 9.0
    R = sc.rho(r)
    assert sc.piv(R) >= r > sc.piv(R - 1)


def test_piv_endpoints_and_continuity():
    sc = _scale()
    assert sc.piv(8) == pytest.approx(4.0) and sc.piv(64) == pytest.approx(19.0)
    assert sc.piv(64 * 1.0001) == pytest.approx(19.0, rel=1e-3)
    vals = [sc.piv(R) for R in range(1, 300)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    # three radii: inside the measured range no fit is needed
    small = PivotalScale("box", np.array([16, 32, 64]), np.array([6.7, 11.3, 19.0]),
                         np.full(3, 0.1), np.full(3, 0.5))
    assert small.piv(32) == pytest.approx(11.3)
    with pytest.raises(InsufficientPoints):
        small.piv(128)


def test_box_pivotals_three_by_three_match_enumeration():
    exact, _ = pivotal_moments(crossing_table(3), 9)
    counts, crossed = box_pivotal_counts(3, 0.5, 200_000, 2)
    se = counts.std() / math.sqrt(len(counts))
    assert abs(counts.mean() - exact) < 3 * se
    table = crossing_table(3)
    assert abs(crossed.mean() - table.mean()) < 3 * math.sqrt(0.25 / len(crossed))


def test_pivotal_scale_monotone():
    sc = exp_pivotal_scale([4, 8, 16, 32], 4000, 3, event="box")
    assert np.all(np.diff(sc.means) > -3 * (sc.ses[1:] + sc.ses[:-1]))
    with pytest.raises(ValueError):
        exp_pivotal_scale([4], 10, 0, event="disc")


def test_window_s0_constant_in_R():
    rows = exp_window([8, 16, 32], [0], 20_000, 4, scale=_scale())
    est = [r["estimate"] for r in rows]
    se = [r["se"] for r in rows]
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            assert abs(est[i] - est[j]) <= 3 * math.hypot(se[i], se[j]) + 1e-4


def test_window_plus_side_is_above_minus_side():
    rows = exp_window([16], [1], 5_000, 5, scale=_scale())
    by = {r["sign"]: r for r in rows}
    assert by[1]["p"] > 0.5 > by[-1]["p"]
    assert by[1]["estimate"] >= by[-1]["estimate"]


def test_crossing_monotone_in_p():
    lo = annulus_crossing(8, 0.45, 10_000, 6)
    hi = annulus_crossing(8, 0.55, 10_000, 6)
    assert hi[0] >= lo[0]


def test_kesten_deep_supercritical_and_monotone():
    rows = exp_kesten_relation([0.02, 0.1, 0.5], 64, 5_000, 7, scale=_scale())
    ps = [r["p_hat"] for r in rows]
    ses = [r["p_se"] for r in rows]
    assert ps[-1] > 0.99
    for k in range(len(rows) - 1):
        assert ps[k + 1] >= ps[k] - 3 * math.hypot(ses[k], ses[k + 1])
    assert all(r["rho"] >= 1 for r in rows)


def test_quenched_small_T_zero_mass():
    raised = fine = 0
    for seed in range(20):
        try:
            exp_quenched_iic(2, [1e-6], seed, draws=10)
            fine += 1
        except ZeroMass:
            raised += 1
    assert raised > 0 and fine > 0


def test_quenched_trace_has_tv_and_mass():
    rows = exp_quenched_iic(2, [100.0, 1000.0], 8, draws=20_000)
    assert [r["T"] for r in rows] == [100.0, 1000.0]
    assert all(0 <= r["tv"] <= 1 and r["mass"] > 0 for r in rows)


def test_bootstrap_ratio():
    rng = np.random.default_rng(9)
    den = rng.exponential(1.0, 2000)
    num = 2.0 * den
    est, lo, hi = bootstrap_ratio(num, den, 1)
    assert est == pytest.approx(2.0)
    assert lo == pytest.approx(2.0) and hi == pytest.approx(2.0)
    est, lo, hi = bootstrap_ratio(np.zeros(5), np.zeros(5), 1)
    assert math.isnan(est)


@pytest.mark.slow
def test_fetic_vs_iic_small():
    rep = exp_fetic_vs_iic(8, 0.1, 32, 40, 10, window_trials=2000)
    assert rep.pairs == 40
    assert all(s.N > 0 and s.T > 0 for s in rep.samples)
    non_fine = [s for s in rep.samples if not s.fine and not (s.cap_N or s.cap_T)]
    assert sum(s.T for s in non_fine) == sum(s.N for s in non_fine)
    assert rep.containment_violations == 0
    assert 0 <= rep.window_tv <= 1


def test_centre_empty_interval_and_early_time():
    rows = exp_centre_cannot_hold([16], 500, 11, g=lambda m: 0.0)
    assert rows[0]["t_end"] < rows[0]["t_start"]
    assert rows[0]["estimate"] == 0.0
    rows = exp_centre_cannot_hold([16], 500, 12, g=lambda m: 1e-9)
    rows2 = exp_centre_cannot_hold([16], 500, 12, g=lambda m: 1e-9)
    assert rows == rows2
    from perclab import _dynkernels as D
    from perclab.lattice import ball_index
    ix = ball_index(16)
    hits = D.fallone_batch(ix.nbr, ix.n, int(ix.shell_start[16]), ix.x_axis, 1e-9, 2e-9, 500, 13)
    assert hits == 500


def test_centre_reasonable_small_run():
    rows = exp_centre_cannot_hold([8, 16], 2000, 14)
    for r in rows:
        assert 0 < r["estimate"] < 1


def test_collapse_paths_nonincreasing():
    res = exp_collapse(32, [0.0, 2**-6, 2**-4, 2**-2, 1.0], 10, 15)
    assert np.all(res.paths[:, 0] == 32)
    assert np.all(np.diff(res.paths, axis=1) <= 0)
    assert len(res.rows()) == 5


def test_volume_profile_properties():
    res = exp_volume_exponent(16, [1, 2, 4, 8], 500, 16)
    assert np.all(res.profiles[:, 0] == 1)
    assert np.all(np.diff(res.profiles, axis=1) >= 0)
    assert res.fit.slope > 0
    with pytest.raises(ValueError):
        exp_volume_exponent(16, [9], 10, 0)


def test_experiments_are_seed_deterministic():
    a = exp_pivotal_scale([4, 8, 16, 32], 500, 17, event="box")
    b = exp_pivotal_scale([4, 8, 16, 32], 500, 17, event="box")
    assert np.array_equal(a.means, b.means)
    assert exp_centre_cannot_hold([8], 300, 18) == exp_centre_cannot_hold([8], 300, 18)


def test_volume_profile_matches_enumeration(b2_laws):
    ix = ball_index(2)
    S = oracles.all_states(ix.n)
    seed = np.zeros(ix.n, bool)
    seed[0] = True
    cluster = oracles.reach_table(S, ix.nbr, seed)
    conn = b2_laws[0]
    exact = [cluster[conn][:, :ix.ball_size(n)].sum(1).mean() for n in (0, 1, 2)]
    states, _ = K.iic_batch(ix.nbr, ix.n, int(ix.shell_start[2]), 100_000, 41)
    prof = K.volume_profile(states, ix.nbr, ix.dist, 2)
    for n in (0, 1, 2):
        se = prof[:, n].std() / math.sqrt(len(prof))
        assert abs(prof[:, n].mean() - exact[n]) <= 3 * se + 1e-12
