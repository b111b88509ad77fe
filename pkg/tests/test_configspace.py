import math

import numpy as np
import pytest

from bosebound.configspace import (
    Box,
    GridDecomposition,
    ParticleConfig,
    build_neighbors,
    build_neighbors_reference,
    check_hierarchy,
    eval_soft_potential,
    eval_truncated_soft_potential,
    eval_W,
    eval_W_reference,
    expectation_split,
    grid_average,
    integrate_W_squared,
)
from bosebound.errors import ConfigError
from bosebound.rng import stream
from bosebound.twobody import check_profile_bounds
from bosebound.scales import ScaleSet

L = 256.0


def _cfg(*pts, side=L):
    return ParticleConfig(side, np.array(pts, dtype=float))


def test_coordinates_must_be_on_torus():
    with pytest.raises(ConfigError):
        _cfg((L, 0, 0))


def test_csv_roundtrip():
    cfg = ParticleConfig.uniform(5, L, stream(0, "tests", 10))
    back = ParticleConfig.from_csv(cfg.to_csv())
    assert back.L == cfg.L and np.array_equal(back.x, cfg.x)


def test_hierarchy_enforced(square):
    with pytest.raises(ConfigError):
        check_hierarchy(ScaleSet.explicit(1e-4, 3.0, 16.0, 128.0), square.support_radius)


def test_t_collinear(desk):
    nb = build_neighbors(_cfg((10, 10, 10), (11, 10, 10), (15, 10, 10)), desk)
    assert nb.t[0, 1] == 2.5
    assert nb.t[0, 2] == 0.5
    assert nb.t[1, 0] == 2.0


def test_t_two_particles(desk):
    nb = build_neighbors(_cfg((1, 1, 1), (2, 2, 2)), desk)
    assert np.isinf(nb.t[0, 1]) and nb.F[0, 1] and nb.G[0, 1]


@pytest.mark.parametrize("mode", ["kdtree", "brute"])
def test_neighbors_match_reference(desk, mode):
    cfg = ParticleConfig.uniform(64, 60.0, stream(1, "tests", 11))
    ref = build_neighbors_reference(cfg, desk)
    nb = build_neighbors(cfg, desk, mode)
    assert np.array_equal(nb.t, ref.t)
    assert np.array_equal(nb.F, ref.F) and np.array_equal(nb.G, ref.G)
    assert np.all(nb.G[nb.F])


def test_neighbors_do_not_depend_on_xj(desk):
    rng = stream(2, "tests", 12)
    cfg = ParticleConfig.uniform(40, 80.0, rng)
    nb = build_neighbors(cfg, desk)
    for j in (0, 7, 39):
        moved = build_neighbors(cfg.replace_particle(j, rng.uniform(0, 80.0, 3)), desk)
        mask = np.arange(cfg.N) != j
        assert np.array_equal(nb.t[mask, j], moved.t[mask, j])
        assert np.array_equal(nb.F[mask, j], moved.F[mask, j])


def test_W_far_is_one(desk, table):
    cfg = _cfg((100, 100, 100), (10, 10, 10))
    nb = build_neighbors(cfg, desk)
    assert eval_W(cfg, nb, table, 1, (50, 50, 50))[0] == 1.0


def test_W_single_neighbor(desk, table):
    cfg = _cfg((100, 100, 100), (10, 10, 10))
    nb = build_neighbors(cfg, desk)
    assert nb.F[0, 1]
    y = np.array([105.0, 100.0, 100.0])
    assert eval_W(cfg, nb, table, 1, y)[0] == pytest.approx(1 - table.tau(16.0, 5.0), abs=1e-15)


def test_W_floor_along_sweep(desk, table):
    cfg = _cfg((100, 100, 100), (140, 100, 100), (10, 10, 10))
    nb = build_neighbors(cfg, desk)
    ys = np.stack([np.linspace(120, 100, 400), np.full(400, 100.0), np.full(400, 100.0)], 1)
    W = eval_W(cfg, nb, table, 2, ys)
    assert np.all(W >= table.w_floor - 1e-12) and np.all(W <= 1.0)
    assert W.min() == pytest.approx(table.solution(16.0).c0, rel=1e-3)


def test_W_against_literal_sum(desk, table):
    rng = stream(3, "tests", 13)
    cfg = ParticleConfig.uniform(30, 128.0, rng)
    nb = build_neighbors(cfg, desk)
    ys = rng.uniform(0, 128.0, size=(2000, 3))
    for j in (0, 5):
        W = eval_W(cfg, nb, table, j, ys)
        np.testing.assert_allclose(W, eval_W_reference(cfg, nb, table, j, ys), atol=1e-14)
        assert np.all(W >= table.w_floor - 1e-12)


def test_integral_empty_box_exact(desk, table):
    cfg = _cfg((200, 200, 200), (10, 10, 10))
    nb = build_neighbors(cfg, desk)
    box = Box.cube((50, 50, 50), 64.0)
    res = integrate_W_squared(cfg, nb, table, 1, box)
    assert res.estimate == box.volume


def test_integral_one_ball_three_ways(desk, table):
    cfg = _cfg((60, 60, 60), (200, 200, 200))
    nb = build_neighbors(cfg, desk)
    box = Box.cube((20, 20, 20), 80.0)
    ball = integrate_W_squared(cfg, nb, table, 1, box)
    mc = integrate_W_squared(cfg, nb, table, 1, box, "mc", 400_000, stream(4, "tests", 14))
    # independent radial oracle: trapezoid on a fine grid
    sol = table.solution(16.0)
    r = np.linspace(0.0, 16.0, 200_001)
    oracle = box.volume - np.trapezoid(4 * math.pi * r * r * (1 - sol.phi(r) ** 2), r)
    assert ball.estimate == pytest.approx(oracle, rel=1e-9)
    assert abs(mc.estimate - ball.estimate) <= 3 * mc.stderr


def test_integral_cut_ball_mc(desk, table):
    # particle near a face: the partial-ball quadrature against Monte Carlo
    cfg = _cfg((25, 60, 60), (200, 200, 200))
    nb = build_neighbors(cfg, desk)
    box = Box.cube((20, 20, 20), 80.0)
    ball = integrate_W_squared(cfg, nb, table, 1, box)
    mc = integrate_W_squared(cfg, nb, table, 1, box, "mc", 800_000, stream(5, "tests", 15))
    assert ball.deficit_boundary == 0 and ball.deficit_inside > 0
    assert abs(mc.estimate - ball.estimate) <= 3 * mc.stderr + 1e-3 * ball.deficit


def test_integral_bounds_uniform(desk, table):
    rng = stream(6, "tests", 16)
    cfg = ParticleConfig.uniform(8, 128.0, rng)
    nb = build_neighbors(cfg, desk)
    box = Box.cube((0, 0, 0), 128.0 - 1e-9)
    res = integrate_W_squared(cfg, nb, table, 0, box)
    # 1 - phi^2 <= 2 tau <= 2 c1/r gives a per-ball deficit <= 4 pi c1 l0^2
    c1 = check_profile_bounds(table.solution(16.0)).c1
    assert res.estimate <= box.volume
    assert res.deficit <= cfg.N * table.ball_deficit(16.0) * (1 + 1e-9)
    assert res.deficit <= 4 * math.pi * c1 * cfg.N * desk.l0**2


def test_soft_potential_cases(desk, table):
    cfg = _cfg((100, 100, 100), (10, 10, 10))
    nb = build_neighbors(cfg, desk)
    assert eval_soft_potential(cfg, nb, table, 0, 1, (110, 100, 100))[0] == table.e0(16.0)
    assert eval_soft_potential(cfg, nb, table, 0, 1, (117, 100, 100))[0] == 0.0


def test_soft_potential_intermediate_t(desk, table):
    # third particle at distance 20 from x_i puts t_ij = 10 in (l_-1, l0)
    cfg = _cfg((100, 100, 100), (10, 10, 10), (120, 100, 100))
    nb = build_neighbors(cfg, desk)
    assert not nb.F[0, 1] and nb.G[0, 1] and nb.t[0, 1] == 10.0
    k = table.quantize(10.0)
    assert eval_soft_potential(cfg, nb, table, 0, 1, (105, 100, 100))[0] == table.e0(k)
    assert k <= 10.0 and k > 10.0 / 1.02


def test_soft_potential_excluded(desk, table):
    cfg = _cfg((100, 100, 100), (10, 10, 10), (105, 100, 100))
    nb = build_neighbors(cfg, desk)
    assert not nb.G[0, 1]
    assert eval_soft_potential(cfg, nb, table, 0, 1, (101, 100, 100))[0] == 0.0


def test_soft_potential_asymmetric(desk, table):
    cfg = _cfg((100, 100, 100), (104, 100, 100), (80, 100, 100))
    nb = build_neighbors(cfg, desk)
    assert nb.t[0, 1] != nb.t[1, 0]


def test_truncated_soft_potential(desk, table):
    g = GridDecomposition(256.0, 128.0, 16.0)
    cfg = _cfg((64, 64, 64), (200, 200, 200), (10, 64, 64))
    nb = build_neighbors(cfg, desk)
    y = (70, 64, 64)
    assert eval_truncated_soft_potential(g, cfg, nb, table, 0, 1, y)[0] == \
        eval_soft_potential(cfg, nb, table, 0, 1, y)[0] > 0
    assert eval_truncated_soft_potential(g, cfg, nb, table, 2, 1, (12, 64, 64))[0] == 0.0


def test_grid_average_identity():
    target = ((128 - 64) / 128) ** 3
    rng = stream(7, "tests", 17)
    for x in rng.uniform(0, 256, size=(5, 3)):
        mean, se = grid_average(x, 256.0, 128.0, 16.0, 10_000, rng)
        assert abs(mean - target) <= 3 * math.sqrt(target * (1 - target) / 10_000)


def test_partition_property():
    rng = stream(8, "tests", 18)
    x = rng.uniform(0, 256, size=(500, 3))
    for u in rng.uniform(-64, 64, size=(10, 3)):
        g = GridDecomposition(256.0, 128.0, 16.0, tuple(u))
        assert np.all(g.membership(x).sum(axis=1) == 1)


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridDecomposition(200.0, 128.0, 16.0)
    with pytest.raises(ConfigError):
        GridDecomposition(256.0, 128.0, 16.0, (64.0, 0.0, 0.0))


def test_expectation_split_trivial(desk, table):
    cfg = _cfg((10, 10, 10), (200, 200, 200))
    nb = build_neighbors(cfg, desk)
    A, B = Box.cube((40, 40, 40), 64.0), Box.cube((104, 40, 40), 64.0)
    r = expectation_split(cfg, nb, table, 0, A, B, 1.0, 1.0)
    assert r.mean_W == r.mean_1 == 1.0 and r.gap == 0.0
    r = expectation_split(cfg, nb, table, 0, A, B, 3.0, 1.0)
    assert r.mean_W == r.mean_1 == 2.0


def test_expectation_split_uniform(desk, table):
    rng = stream(9, "tests", 19)
    A, B = Box.cube((0, 0, 0), 64.0), Box.cube((64, 0, 0), 64.0)
    c1 = check_profile_bounds(table.solution(16.0)).c1
    for _ in range(5):
        pts = rng.uniform(0, 1, size=(4, 3)) * np.array([128.0, 64.0, 64.0])
        cfg = ParticleConfig(256.0, pts)
        nb = build_neighbors(cfg, desk)
        r = expectation_split(cfg, nb, table, 0, A, B, 1.0, 0.0)
        assert r.realized_C <= 10 * c1**2 * 4 * math.pi
