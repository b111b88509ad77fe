import math
from fractions import Fraction

import numpy as np
import pytest

from bosebound.doubling import (
    DoublingSchedule,
    PiecewiseQuadratic,
    check_chernoff,
    convexity_defects,
    eval_F,
    eval_F_exact,
    eval_F_mc,
    final_dominates_large_cell,
    gk_Mk_moments,
    jensen_floor,
    large_cell_f,
    randomization_step_certificate,
    small_cell_f,
    verify_atypical_knees,
    verify_F_estimate,
    verify_F_estimate_knees,
    verify_jensen,
    verify_lemma_doubling_atypical,
)
from bosebound.errors import BudgetError, ConfigError
from bosebound.rng import stream
from bosebound.scales import build_scales


def _sched(rho=1e-4, h=2):
    return DoublingSchedule.example(build_scales(rho, strict=False), h=h)


def _F_enumerated(K, vol, nA, nB, k):
    """Oracle: plain binomial enumeration in exact rationals."""
    f = PiecewiseQuadratic(Fraction(K))
    tot = sum(math.comb(k, m) * (f(nA + m) + f(nB + k - m)) for m in range(k + 1))
    return Fraction(tot, 2**k) / vol


def test_piecewise_continuity_and_value_at_knee():
    for K in (3.0, 17.5, 200.0):
        f = PiecewiseQuadratic(K)
        assert f(K) == pytest.approx(K * K - K)
        assert (2 * K - 1) * K - K * K == pytest.approx(K * K - K)


def test_piecewise_convex():
    for K in (2.0, 7.3, 55.0):
        assert convexity_defects(PiecewiseQuadratic(K), int(4 * K)) == []


def test_instances():
    assert small_cell_f(5.0).K == 10.0 and large_cell_f(5.0).K == 5.0


def test_schedule_invariants():
    sc = build_scales(1e-8, strict=False)
    sched = DoublingSchedule.example(sc, h=2)
    assert sched.K[0] == pytest.approx(2 * sc.rho * sc.l1**3)
    for row in sched.checks():
        assert row["K_above_density"] and row["gap_positive"]
    assert sched.final_knee_ok()
    assert sched.box_A_dims(2) == (2 * sc.l1, sc.l1, sc.l1)
    assert sched.ell(4) == 2 * sc.l1


def test_schedule_needs_h():
    with pytest.raises(ConfigError):
        DoublingSchedule.example(build_scales(1e-6, strict=False))


def test_F_at_k0():
    sched = _sched()
    f = sched.f(1)
    assert eval_F_exact(sched, 1, 5, 9, 0) == pytest.approx((f(5) + f(9)) / sched.volume_A(1))


def test_F_002_is_one_over_volume():
    f = PiecewiseQuadratic(4.0)
    assert eval_F(f, 8, 0, 0, 2, exact=True) == Fraction(1, 8)


def test_F_quadratic_regime_moment():
    # <m^2 - m> = n^2/4 - n/4 for m ~ Bin(n, 1/2)
    for n in (3, 10, 40):
        F = eval_F(PiecewiseQuadratic(1000.0), 1, 0, 0, n, exact=True)
        assert F == 2 * (Fraction(n * n, 4) - Fraction(n, 4))


def test_F_against_enumeration():
    rng = stream(3, "tests", 0)
    for _ in range(30):
        K = float(rng.integers(2, 60))
        nA, nB, k = (int(v) for v in rng.integers(0, 80, size=3))
        exact = eval_F(PiecewiseQuadratic(K), 3, nA, nB, k, exact=True)
        assert exact == _F_enumerated(K, 3, nA, nB, k)
        assert eval_F(PiecewiseQuadratic(K), 3, nA, nB, k) == pytest.approx(float(exact), rel=1e-12)


def test_F_symmetric():
    f = PiecewiseQuadratic(12.0)
    assert eval_F(f, 1, 3, 17, 9, exact=True) == eval_F(f, 1, 17, 3, 9, exact=True)


def test_F_large_k_budget():
    with pytest.raises(BudgetError):
        eval_F(PiecewiseQuadratic(5.0), 1, 0, 0, 10_001)
    # the log-domain weights survive k = 10^4
    v = eval_F(PiecewiseQuadratic(1e6), 1, 0, 0, 10_000)
    assert v == pytest.approx(2 * (1e8 / 4 - 1e4 / 4), rel=1e-10)


def test_F_exact_vs_mc_within_4_sigma():
    rng = stream(11, "tests", 1)
    for i in range(50):
        K = float(rng.integers(2, 100))
        nA, nB, k = (int(v) for v in rng.integers(0, 150, size=3))
        f = PiecewiseQuadratic(K)
        exact = eval_F(f, 1.0, nA, nB, k)
        mean, _ = eval_F_mc(f, 1.0, nA, nB, k, 1_000_000, stream(11, "tests.mc", i))
        # sigma from the exact binomial variance; the sample estimate is
        # unreliable when only a rare tail crosses the knee
        m = np.arange(k + 1)
        w = np.array([math.comb(k, j) for j in m], dtype=float) / 2.0**k
        v = f(nA + m.astype(float)) + f(nB + k - m.astype(float))
        sigma = math.sqrt(max(np.dot(w, v * v) - np.dot(w, v) ** 2, 0.0) / 1_000_000)
        assert abs(mean - exact) <= 4 * sigma + 1e-10 * abs(exact)


def test_atypical_knee_20_38_counterexample():
    # K_{s+1} < 2K_s alone is not enough: at the lower end of the range the
    # inequality fails by 3 (2*1189 vs f_{s+1}(51) = 2381)
    rep = verify_atypical_knees(20, 38)
    assert rep.n_lo == 51
    assert rep.violations[0]["n"] == 51
    assert rep.violations[0]["lhs"] == 2378.0 and rep.violations[0]["rhs"] == 2381.0


def test_atypical_brute_force_oracle():
    Ks, Kn = 30.0, 52.0
    rep = verify_atypical_knees(Ks, Kn)
    fs, fn = PiecewiseQuadratic(Ks), PiecewiseQuadratic(Kn)
    bad = [n for n in range(rep.n_lo, rep.n_hi + 1)
           if 2 * min(fs(m) + fs(n - m) for m in range(n + 1)) < fn(n)]
    assert [v["n"] for v in rep.violations] == bad


def test_central_split_is_minimal():
    rep = verify_atypical_knees(50, 90, n_hi=400)
    assert rep.argmin_not_central == []


def test_atypical_sweep_example_schedule():
    sched = _sched(1e-4, h=3)
    assert 4 <= sched.K[0] <= 200
    for s in range(1, sched.s_max + 1):
        rep = verify_lemma_doubling_atypical(sched, s)
        assert rep.ok and rep.slope_ok and not rep.half_step_failures


def test_F_estimate_n2():
    f = PiecewiseQuadratic(10.0)
    assert eval_F(f, 1, 0, 0, 2, exact=True) * 2 == 2 == f(2)
    rep = verify_F_estimate_knees(10.0, 18.0, 1e-4)
    assert not any(v["n"] == 2 for v in rep.violations)


def test_F_estimate_matches_direct_expectation():
    # the tail-sum recurrence equals the binomial expectation 4<f_s(m)>
    Ks, Kn = 7.5, 14.0
    rep = verify_F_estimate_knees(Ks, Kn, 0.0, keep_rows=True)
    f, fn = PiecewiseQuadratic(Fraction(Ks)), PiecewiseQuadratic(Fraction(Kn))
    for s, n, rel in rep.rows:
        lhs = 4 * sum(math.comb(n, m) * f(m) for m in range(n + 1)) / Fraction(2**n)
        assert rel == pytest.approx(float((lhs - fn(n)) / (n * n - n)), abs=1e-12)


def test_F_estimate_fails_for_example_schedule():
    # the F estimate with factor (1 - rho) does not hold near the top of the
    # admissible range at desk densities; the exact margin is negative
    rep = verify_F_estimate(_sched(1e-4), 1)
    assert rep.violations
    assert rep.min_rel_margin < 0


def test_chernoff_small_n():
    ch = check_chernoff(300)
    assert not ch["violations"]
    assert ch["checked"] == sum(n - (n + 1) // 2 + 1 for n in range(1, 301))


def test_moments_balanced():
    m = gk_Mk_moments(PiecewiseQuadratic(10.0), 1, 4, 4, 3)
    assert m.mean_M == 1 and m.var_M == 0 and m.all_ok


def test_moments_d3():
    m = gk_Mk_moments(PiecewiseQuadratic(10.0), 1, 6, 3, 2)
    assert set(m.M_values) == {7, -5}
    assert m.mean_M == 1 and m.var_M == 36


def test_moment_identities_random():
    rng = stream(5, "tests", 2)
    for _ in range(500):
        K = float(rng.integers(2, 40))
        nA, nB = (int(v) for v in rng.integers(0, 60, size=2))
        k = int(rng.integers(1, 20))
        assert gk_Mk_moments(PiecewiseQuadratic(K), 4, nA, nB, k).all_ok


def test_step_certificate_full_randomisation():
    sc = build_scales(1e-6, strict=False)
    sched = DoublingSchedule.example(sc, h=2)
    n = int(sched.K[0])
    cert = randomization_step_certificate(sched, 1, sc, 0, 0, n, n)
    assert cert.F_full > 0
    for v in cert.terms.values():
        assert abs(v) < cert.F_full


def test_step_certificate_rejects_atypical():
    sc = build_scales(1e-6, strict=False)
    sched = DoublingSchedule.example(sc, h=2)
    with pytest.raises(ConfigError):
        randomization_step_certificate(sched, 1, sc, 0, 0, 10, int(4 * sched.K[1]))


def test_jensen_equal_occupancy():
    f = PiecewiseQuadratic(30.0)
    assert jensen_floor(f, 4, 100) == 4 * f(25)


def test_jensen_skewed():
    f = PiecewiseQuadratic(30.0)
    skew = f(97) + 3 * f(1)
    assert jensen_floor(f, 4, 100) < skew


def test_jensen_random_compositions():
    res = verify_jensen(PiecewiseQuadratic(8.0), 6, 60, 10_000, stream(0, "tests", 3))
    assert res["violations"] == 0 and res["min_sum"] >= res["floor"]


def test_final_knee_dominates_large_cell_f():
    for rho in (1e-4, 1e-6, 1e-8):
        assert final_dominates_large_cell(_sched(rho)) == []
