import math

import pytest

from bosebound.errors import ConfigError, ScaleHierarchyError
from bosebound.scales import (
    ScaleSet,
    asymptotic_crossover_log,
    build_scales,
    cell_error_terms,
    crossover_k,
    error_budget,
    first_eps_below_one,
    first_valid_k,
    headline_bound,
    lee_yang_factor,
    previous_best_crossover,
    scan,
    temple_applicability_ratio,
)


def test_eps_at_1e6():
    s = build_scales(1e-6, strict=False)
    L = math.log(1e6)
    assert s.log == pytest.approx(13.8155, rel=1e-5)
    assert s.eps == pytest.approx(1e-2 * L**3, rel=1e-12)
    assert s.eps == pytest.approx(26.37, rel=1e-3)


def test_hierarchy_broken_at_1e6_is_diagnosed():
    # l2 < l1 at this density, so the strict build must name the failing ratio
    with pytest.raises(ScaleHierarchyError, match="l2/l1"):
        build_scales(1e-6)
    s = build_scales(1e-6, strict=False)
    assert not s.valid and any("l2/l1" in v for v in s.violations)


def test_scale_formulas_by_hand():
    rho, eta = 1e-25, 0.05
    L = -math.log(rho)
    s = build_scales(rho, eta)
    assert s.l_m1 == pytest.approx(rho ** (-2 / 9) * L ** (2 / 3), rel=1e-12)
    assert s.l0 == pytest.approx(rho ** (-1 / 3) * L ** (-1 / 3), rel=1e-12)
    assert s.l1 == pytest.approx(rho ** (-1 / 3) * L ** (1 / 3 + eta), rel=1e-12)
    raw_l2 = rho ** (-4 / 9) * L ** (-2 / 3)
    assert s.l2 / s.l1 == 2.0**s.h
    assert 2 ** -0.5 <= s.l2 / raw_l2 <= 2 ** 0.5
    assert s.l2_adjust == pytest.approx(s.l2 / raw_l2)


@pytest.mark.parametrize("eta", [0.0, 1 / 15, -0.1])
def test_eta_open_interval(eta):
    with pytest.raises(ConfigError):
        build_scales(1e-20, eta)


def test_rho_range():
    with pytest.raises(ConfigError):
        build_scales(0.5)


def test_ratios_monotone_over_scan():
    rows = scan(range(6, 31))
    for name in rows[0].ratios:
        vals = [r.ratios[name] for r in rows]
        if name == "l2/l1":
            # snapped to powers of two: a staircase
            assert all(b >= a for a, b in zip(vals, vals[1:]))
        else:
            assert all(b > a for a, b in zip(vals, vals[1:])), name


def test_eps_decreasing_beyond_turning_point():
    rows = scan(range(4, 61))
    eps = [r.eps for r in rows]
    turn = max(range(len(eps)), key=eps.__getitem__)
    assert all(b < a for a, b in zip(eps[turn:], eps[turn + 1:]))
    k = first_eps_below_one(rows)
    assert k is not None and (10.0 ** -k) ** (1 / 3) * (k * math.log(10)) ** 3 < 1.0


def test_first_valid_k_reported():
    rows = scan(range(4, 31))
    k = first_valid_k(rows)
    assert k is not None and not rows[k - 4].violations
    assert rows[k - 5].violations


def test_cell_terms_zero_for_empty_cell():
    s = build_scales(1e-20)
    assert all(v == 0.0 for v in cell_error_terms(s, 0).values())


def test_rho_l0_squared_term_below_eps():
    for k in range(6, 31):
        s = build_scales(10.0**-k, strict=False)
        term = cell_error_terms(s)["n_l0sq_over_l1cu"]
        assert term == pytest.approx(s.rho ** (1 / 3) * s.log ** (-2 / 3), rel=1e-10)
        assert term <= s.eps


def test_budget_contains_named_terms():
    b = error_budget(build_scales(1e-20))
    assert set(b["cell"]) == set(b["cell_over_eps"])
    assert b["eps"] > 0


def test_cell_crossover_matches_power_law():
    # all term/eps ratios fall as powers of L; the scan crossover, if any,
    # cannot precede the asymptotic threshold
    rows = scan(range(6, 31))
    k = crossover_k(rows)
    thr = asymptotic_crossover_log()
    if k is not None:
        assert k * math.log(10) >= thr * (1 - 1e-9)
    else:
        assert 30 * math.log(10) < thr


def test_temple_ratio_grows():
    vals = [temple_applicability_ratio(build_scales(10.0**-k, strict=False)) for k in range(6, 31)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_lee_yang_factor():
    assert lee_yang_factor(1e-6) == pytest.approx(1 + 128 / (15 * math.sqrt(math.pi)) * 1e-3, rel=1e-14)
    assert lee_yang_factor(1e-6) == pytest.approx(1.004814, abs=1e-6)


def test_headline_vacuous():
    s = build_scales(1e-6, strict=False)
    h = headline_bound(s, a=1.0)
    assert h["vacuous"] and h["bound"] <= 0


def test_headline_ratio():
    s = build_scales(1e-30)
    h = headline_bound(s, a=1000.0, C0=0.1)
    assert h["bound"] == pytest.approx(4 * math.pi * 1000.0 * 1e-30 * (1 - 0.1 * s.eps))
    assert h["ratio_to_lee_yang"] <= h["ratio_to_leading"] < 1
    assert h["lee_yang_factor"] > 1


def test_previous_best_crossover():
    rho = previous_best_crossover()
    x = -math.log(rho)
    assert rho ** (1 / 3) * x**3 == pytest.approx(rho ** (1 / 17), rel=1e-9)
    assert rho == pytest.approx(2.76e-18, rel=0.01)


def test_explicit_desk_scales():
    s = ScaleSet.explicit(1e-4, 4.0, 16.0, 128.0)
    assert s.h == 1 and s.l2 == 256.0 and s.valid
