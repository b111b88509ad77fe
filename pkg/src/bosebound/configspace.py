"""Particle configurations on a 3-torus and the objects built on them.

Covers the nearest-neighbour cutoffs t_ij, F_ij, G_ij, the trial factor W_j,
the soft potentials q_ij and their cell-truncated versions, and the
averaged-origin cell grid.

W_j differs from 1 only inside balls B_i around the other particles, with
radius l0 (when F_ij = 1) or the quantised t_ij (when only G_ij = 1).  The
radius never exceeds half the distance from x_i to any particle other than
x_j, so these balls are pairwise disjoint.  That makes
``integral (1 - W_j^2)`` a sum of per-ball radial integrals, which is the
quadrature route used next to plain Monte Carlo.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.spatial import cKDTree

from .errors import ConfigError
from .scales import ScaleSet
from .twobody import GridSpec, PotentialSpec, RadialSolution, solve_neumann_mode

HARD_RATIO = 4.0


def min_image(delta: np.ndarray, L: float) -> np.ndarray:
    return delta - L * np.round(delta / L)


def torus_dist(a: np.ndarray, b: np.ndarray, L: float) -> np.ndarray:
    return np.sqrt(np.sum(min_image(np.asarray(a) - np.asarray(b), L) ** 2, axis=-1))


def check_hierarchy(scales: ScaleSet, R0: float, ratio: float = HARD_RATIO) -> None:
    """Hard validation of R0 << l_-1 << l0 << l1 as ratios >= ``ratio``."""
    checks = {"l_m1/R0": scales.l_m1 / R0, "l0/l_m1": scales.l0 / scales.l_m1,
              "l1/l0": scales.l1 / scales.l0}
    bad = [f"{k}={v:.3g}" for k, v in checks.items() if v < ratio]
    if bad:
        raise ConfigError(f"length hierarchy needs ratios >= {ratio}: " + ", ".join(bad))


# --------------------------------------------------------------- configs


@dataclass(frozen=True)
class ParticleConfig:
    L: float
    x: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float).reshape(-1, 3))
        if x.shape[0] < 1:
            raise ConfigError("configuration needs at least one particle")
        if not (self.L > 0.0):
            raise ConfigError("torus side must be positive")
        if np.any(x < 0.0) or np.any(x >= self.L):
            raise ConfigError("all coordinates must lie in [0, L)")
        object.__setattr__(self, "x", x)
        x.setflags(write=False)

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def density(self) -> float:
        return self.N / self.L**3

    @classmethod
    def uniform(cls, N: int, L: float, rng) -> "ParticleConfig":
        return cls(L, rng.uniform(0.0, L, size=(N, 3)) % L)

    def replace_particle(self, j: int, y) -> "ParticleConfig":
        x = self.x.copy()
        x[j] = np.asarray(y, dtype=float) % self.L
        return ParticleConfig(self.L, x)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# L={self.L!r}\n")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["x", "y", "z"])
        for p in self.x:
            w.writerow([repr(float(c)) for c in p])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ParticleConfig":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# L="):
            raise ConfigError("configuration CSV must start with '# L=<side>'")
        L = float(lines[0][4:])
        rows = list(csv.reader(lines[1:]))
        if rows and rows[0] == ["x", "y", "z"]:
            rows = rows[1:]
        return cls(L, np.array([[float(c) for c in r] for r in rows if r]))


# ------------------------------------------------------------- neighbours


@dataclass(frozen=True)
class NeighborStructure:
    """t[i, j], F[i, j], G[i, j] for ordered pairs (diagonal unused)."""

    t: np.ndarray
    F: np.ndarray
    G: np.ndarray
    l0: float
    l_m1: float


def _two_nearest(cfg: ParticleConfig, mode: str):
    """For every i: nearest other particle (d1, k1) and second-nearest distance d2."""
    N, L = cfg.N, cfg.L
    d1 = np.full(N, np.inf)
    d2 = np.full(N, np.inf)
    k1 = np.full(N, -1)
    if N < 2:
        return d1, k1, d2
    if mode == "brute":
        D = torus_dist(cfg.x[:, None, :], cfg.x[None, :, :], L)
        np.fill_diagonal(D, np.inf)
        order = np.argsort(D, axis=1, kind="stable")
        k1 = order[:, 0]
        d1 = D[np.arange(N), k1]
        if N > 2:
            d2 = D[np.arange(N), order[:, 1]]
        return d1, k1, d2
    if mode != "kdtree":
        raise ConfigError(f"unknown neighbour mode {mode!r}")
    tree = cKDTree(cfg.x, boxsize=L)
    kq = min(N, 4)
    _, idx = tree.query(cfg.x, k=kq)
    for i in range(N):
        cand = [int(c) for c in np.atleast_1d(idx[i]) if c != i and c < N]
        d = torus_dist(cfg.x[i], cfg.x[cand], L)
        o = np.argsort(d, kind="stable")
        # ties resolved by index so both modes pick the same k1
        cand = [cand[c] for c in o]
        d = d[o]
        if len(cand) > 1 and d[0] == d[1] and cand[1] < cand[0]:
            cand[0], cand[1] = cand[1], cand[0]
        k1[i], d1[i] = cand[0], d[0]
        if len(cand) > 1:
            d2[i] = d[1]
    return d1, k1, d2


def build_neighbors(cfg: ParticleConfig, scales: ScaleSet, mode: str = "kdtree") -> NeighborStructure:
    """t_ij = (1/2) min_{k != i, j} |x_i - x_k| with the empty minimum = +inf."""
    N = cfg.N
    d1, k1, d2 = _two_nearest(cfg, "brute" if mode == "brute" else mode)
    t = np.repeat((0.5 * d1)[:, None], N, axis=1)
    rows = np.arange(N)
    valid = k1 >= 0
    t[rows[valid], k1[valid]] = 0.5 * d2[valid]
    np.fill_diagonal(t, np.inf)
    F = t > scales.l0
    G = t > scales.l_m1
    return NeighborStructure(t, F, G, scales.l0, scales.l_m1)


def build_neighbors_reference(cfg: ParticleConfig, scales: ScaleSet) -> NeighborStructure:
    """Literal O(N^3) evaluation of the definition, for testing."""
    N = cfg.N
    D = torus_dist(cfg.x[:, None, :], cfg.x[None, :, :], cfg.L)
    t = np.full((N, N), np.inf)
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            m = np.inf
            for k in range(N):
                if k != i and k != j and D[i, k] < m:
                    m = D[i, k]
            t[i, j] = 0.5 * m
    return NeighborStructure(t, t > scales.l0, t > scales.l_m1, scales.l0, scales.l_m1)


# ------------------------------------------------------------- tau table


class TauTable:
    """Cache of Neumann modes on a geometric kappa ladder.

    Any kappa in (l_-1, l0] is rounded down to l_-1 * ratio^k, so the ball
    used for q and tau never exceeds t_ij.  l0 itself is solved exactly.
    Safe for concurrent use: insertions are guarded by a lock.
    """

    def __init__(self, pot: PotentialSpec, scales: ScaleSet, ratio: float = 1.02,
                 grid: GridSpec = GridSpec()):
        check_hierarchy(scales, pot.support_radius)
        self.pot, self.scales, self.ratio, self.grid = pot, scales, ratio, grid
        self._sol: dict = {}
        self._deficit: dict = {}
        self._lock = threading.Lock()

    def quantize(self, kappa):
        """Ladder value for kappa; l0 and anything above map to l0."""
        k = np.asarray(kappa, dtype=float)
        base = self.scales.l_m1
        steps = np.floor(np.log(np.maximum(k, base) / base) / math.log(self.ratio) + 1e-12)
        q = base * self.ratio**steps
        q = np.where(k >= self.scales.l0, self.scales.l0, np.minimum(q, k))
        return q if q.ndim else float(q)

    def solution(self, kappa: float) -> RadialSolution:
        kappa = float(kappa)
        sol = self._sol.get(kappa)
        if sol is None:
            sol = solve_neumann_mode(self.pot, kappa, self.grid)
            with self._lock:
                self._sol.setdefault(kappa, sol)
        return sol

    def e0(self, kappa: float) -> float:
        return self.solution(kappa).eigenvalue

    def tau(self, kappa: float, r):
        return self.solution(kappa).tau(r)

    def ball_deficit(self, kappa: float) -> float:
        """4 pi int_0^kappa r^2 (1 - (1 - tau)^2) dr."""
        kappa = float(kappa)
        val = self._deficit.get(kappa)
        if val is None:
            sol = self.solution(kappa)
            g = lambda r: 4.0 * math.pi * r * r * (1.0 - sol.phi(r) ** 2)  # noqa: E731
            R0 = self.pot.support_radius
            val = quad(g, 0.0, R0, limit=200, epsabs=0, epsrel=1e-8)[0]
            val += quad(g, R0, kappa, limit=200, epsabs=0, epsrel=1e-8)[0]
            with self._lock:
                self._deficit.setdefault(kappa, val)
        return val

    def soft_mass(self, kappa: float) -> float:
        """e0(kappa) * (4/3) pi kappa^3, the full integral of q(kappa, .)."""
        return self.e0(kappa) * 4.0 / 3.0 * math.pi * kappa**3

    @cached_property
    def w_floor(self) -> float:
        """Smallest phi(0) over the ladder; W_j never drops below it."""
        s = self.scales
        n = int(math.floor(math.log(s.l0 / s.l_m1) / math.log(self.ratio) + 1e-12))
        ks = [s.l_m1 * self.ratio**k for k in range(n + 1)] + [s.l0]
        return min(self.solution(k).c0 for k in ks)

    def prewarm(self, kappas) -> None:
        for k in np.unique(np.asarray(kappas, dtype=float)):
            self.solution(float(k))


def ball_radii(nbrs: NeighborStructure, table: TauTable, j: int) -> np.ndarray:
    """Support radius of particle i's contribution to W_j (0 when absent)."""
    t = nbrs.t[:, j]
    r = np.where(nbrs.F[:, j], nbrs.l0, np.where(nbrs.G[:, j], table.quantize(np.where(np.isfinite(t), t, nbrs.l0)), 0.0))
    r = np.asarray(r, dtype=float)
    r[j] = 0.0
    return r


# ---------------------------------------------------------------- W_j


def eval_W(cfg: ParticleConfig, nbrs: NeighborStructure, table: TauTable, j: int, y) -> np.ndarray:
    """W_j with x_j replaced by y (shape (3,) or (M, 3))."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    radii = ball_radii(nbrs, table, j)
    others = np.nonzero(radii > 0.0)[0]
    W = np.ones(y.shape[0])
    if others.size == 0:
        return W
    tree = cKDTree(cfg.x[others] % cfg.L, boxsize=cfg.L)
    d, k = tree.query(y % cfg.L, k=1)
    i_near = others[k]
    rad = radii[i_near]
    inside = d < rad
    for kappa in np.unique(rad[inside]):
        m = inside & (rad == kappa)
        W[m] = 1.0 - table.tau(kappa, d[m])
    return W


def eval_W_reference(cfg: ParticleConfig, nbrs: NeighborStructure, table: TauTable, j: int, y) -> np.ndarray:
    """Literal sum over i != j, for testing the nearest-ball shortcut."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    W = np.ones(y.shape[0])
    for i in range(cfg.N):
        if i == j:
            continue
        d = torus_dist(cfg.x[i], y, cfg.L)
        if nbrs.F[i, j]:
            W -= table.tau(nbrs.l0, d)
        elif nbrs.G[i, j]:
            W -= table.tau(table.quantize(nbrs.t[i, j]), d)
    return W


# ---------------------------------------------------------------- boxes


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ConfigError("zero-volume box")

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.hi) - np.asarray(self.lo))

    @classmethod
    def cube(cls, corner, side):
        c = tuple(float(v) for v in corner)
        return cls(c, tuple(v + side for v in c))

    def contains(self, p, L: float | None = None) -> np.ndarray:
        p = np.atleast_2d(p)
        rel = p - self.center
        if L is not None:
            rel = min_image(rel, L)
        return np.all(np.abs(rel) <= self.half, axis=-1) & np.all(rel < self.half, axis=-1)

    def face_distance(self, p, L: float | None = None) -> np.ndarray:
        """Distance to the boundary for points inside (negative outside)."""
        rel = np.atleast_2d(p) - self.center
        if L is not None:
            rel = min_image(rel, L)
        return np.min(self.half - np.abs(rel), axis=-1)


def _fib_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


_DIRS = _fib_sphere(1024)


@lru_cache(maxsize=8)
def _gauss(nodes: int):
    return np.polynomial.legendre.leggauss(nodes)


def _partial_ball_deficit(table: TauTable, kappa: float, rel_center: np.ndarray, box: Box,
                          nodes: int = 48) -> float:
    """int over ball(kappa) cut by the box of (1 - W^2), ball centred at rel_center (box frame)."""
    sol = table.solution(kappa)
    R0 = table.pot.support_radius
    total = 0.0
    for a, b in ((0.0, R0), (R0, kappa)):
        x, w = _gauss(nodes)
        r = 0.5 * (b - a) * x + 0.5 * (b + a)
        w = 0.5 * (b - a) * w
        pts = rel_center[None, None, :] + r[:, None, None] * _DIRS[None, :, :]
        frac = np.mean(np.all(np.abs(pts) < box.half, axis=-1), axis=1)
        g = 4.0 * math.pi * r * r * (1.0 - sol.phi(r) ** 2)
        total += float(np.sum(w * g * frac))
    return total


@dataclass
class WIntegral:
    estimate: float
    stderr: float
    volume: float
    deficit_inside: float
    deficit_boundary: float
    n_inside: int
    method: str

    @property
    def deficit(self) -> float:
        return self.volume - self.estimate


def integrate_W_squared(cfg: ParticleConfig, nbrs: NeighborStructure, table: TauTable, j: int,
                        box: Box, method: str = "ball", samples: int = 0, rng=None,
                        strata: int = 4) -> WIntegral:
    """Integral of |W_j|^2 over an axis-aligned box (x_j integrated).

    ``method='ball'`` sums radial integrals over the disjoint supports;
    ``method='mc'`` is stratified Monte Carlo with ``samples`` points.
    """
    vol = box.volume
    radii = ball_radii(nbrs, table, j)
    rel = min_image(cfg.x - box.center, cfg.L)
    inside_mask = np.all(np.abs(rel) < box.half, axis=1)
    inside_mask[j] = False
    n_inside = int(inside_mask.sum()) + 1
    if method == "mc":
        if rng is None or samples <= 0:
            raise ConfigError("Monte Carlo integration needs a positive budget and an rng")
        per = max(1, samples // strata**3)
        side = 2.0 * box.half / strata
        grid = np.stack(np.meshgrid(*[np.arange(strata)] * 3, indexing="ij"), -1).reshape(-1, 3)
        lo = np.asarray(box.lo)[None, :] + grid * side
        pts = lo[:, None, :] + rng.uniform(size=(grid.shape[0], per, 3)) * side
        w2 = eval_W(cfg, nbrs, table, j, pts.reshape(-1, 3) % cfg.L).reshape(grid.shape[0], per) ** 2
        vh = vol / grid.shape[0]
        est = float(np.sum(vh * w2.mean(axis=1)))
        var = float(np.sum(vh**2 * w2.var(axis=1, ddof=1) / per)) if per > 1 else 0.0
        return WIntegral(est, math.sqrt(var), vol, math.nan, math.nan, n_inside, "mc")
    if method != "ball":
        raise ConfigError(f"unknown integration method {method!r}")
    d_in = d_bd = 0.0
    for i in np.nonzero(radii > 0.0)[0]:
        kappa = float(radii[i])
        r = rel[i]
        if np.any(np.abs(r) > box.half + kappa):
            continue  # ball misses the box
        fd = float(np.min(box.half - np.abs(r)))
        if fd >= kappa:
            val = table.ball_deficit(kappa)
        else:
            val = _partial_ball_deficit(table, kappa, r, box)
        if inside_mask[i]:
            d_in += val
        else:
            d_bd += val
    return WIntegral(vol - d_in - d_bd, 0.0, vol, d_in, d_bd, n_inside, "ball")


# ------------------------------------------------------- soft potentials


def eval_soft_potential(cfg: ParticleConfig, nbrs: NeighborStructure, table: TauTable,
                        i: int, j: int, y) -> np.ndarray:
    """q_ij with x_j = y; zero outside the ball of radius l0 or quantised t_ij."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = torus_dist(cfg.x[i], y, cfg.L)
    if nbrs.F[i, j]:
        kappa = nbrs.l0
    elif nbrs.G[i, j]:
        kappa = table.quantize(nbrs.t[i, j])
    else:
        return np.zeros(y.shape[0])
    return np.where(d <= kappa, table.e0(kappa), 0.0)


@dataclass(frozen=True)
class GridDecomposition:
    """Cells u + lambda + [0, l1)^3 for lambda in l1 Z^3 on a torus of side L."""

    L: float
    l1: float
    l0: float
    u: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        m = self.L / self.l1
        if abs(m - round(m)) > 1e-9 or round(m) < 1:
            raise ConfigError("torus side must be a positive multiple of the cell side")
        if any(not (-self.l1 / 2 <= c < self.l1 / 2) for c in self.u):
            raise ConfigError("grid origin must lie in [-l1/2, l1/2)^3")

    @property
    def cells_per_axis(self) -> int:
        return int(round(self.L / self.l1))

    def cell_index(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        m = self.cells_per_axis
        return np.floor(((x - np.asarray(self.u)) % self.L) / self.l1).astype(int) % m

    def inner(self, x) -> np.ndarray:
        """chi~: inside its cell and at least 2 l0 away from the cell boundary."""
        x = np.atleast_2d(x)
        off = ((x - np.asarray(self.u)) % self.L) % self.l1
        m = 2.0 * self.l0
        return np.all((off >= m) & (off <= self.l1 - m), axis=-1)

    def membership(self, x) -> np.ndarray:
        """Indicator matrix (points x cells) of 1(x in Lambda_{u lambda})."""
        x = np.atleast_2d(x)
        m = self.cells_per_axis
        idx = self.cell_index(x)
        flat = (idx[:, 0] * m + idx[:, 1]) * m + idx[:, 2]
        out = np.zeros((x.shape[0], m**3), dtype=int)
        out[np.arange(x.shape[0]), flat] = 1
        return out

    def inner_fraction(self) -> float:
        return ((self.l1 - 4.0 * self.l0) / self.l1) ** 3


def eval_truncated_soft_potential(grid: GridDecomposition, cfg: ParticleConfig, nbrs: NeighborStructure,
                                  table: TauTable, i: int, j: int, y) -> np.ndarray:
    q = eval_soft_potential(cfg, nbrs, table, i, j, y)
    return q * float(grid.inner(cfg.x[i])[0])


def grid_average(x, L: float, l1: float, l0: float, origins: int, rng) -> tuple:
    """Mean and standard error over uniform origins u of sum_lambda chi~_{u lambda}(x)."""
    u = rng.uniform(-l1 / 2, l1 / 2, size=(origins, 3))
    off = ((np.asarray(x)[None, :] - u) % L) % l1
    hits = np.all((off >= 2 * l0) & (off <= l1 - 2 * l0), axis=1).astype(float)
    return float(hits.mean()), float(hits.std(ddof=1) / math.sqrt(origins))


# --------------------------------------------------- expectation split


@dataclass
class SplitResult:
    mean_W: float
    mean_1: float
    gap: float
    realized_C: float
    p_A: float


def expectation_split(cfg: ParticleConfig, nbrs: NeighborStructure, table: TauTable, j: int,
                      boxA: Box, boxB: Box, hA: float, hB: float, method: str = "ball",
                      samples: int = 0, rng=None) -> SplitResult:
    """<h>_W versus <h>_1 for h constant on each box of a pair."""
    if abs(boxA.volume - boxB.volume) > 1e-9 * boxA.volume:
        raise ConfigError("box pair must be congruent")
    IA = integrate_W_squared(cfg, nbrs, table, j, boxA, method, samples, rng)
    IB = integrate_W_squared(cfg, nbrs, table, j, boxB, method, samples, rng)
    mean_1 = 0.5 * (hA + hB)
    if hA == hB:
        return SplitResult(hA, mean_1, 0.0, 0.0, 0.5)
    pA = IA.estimate / (IA.estimate + IB.estimate)
    mean_W = pA * hA + (1.0 - pA) * hB
    gap = abs(mean_W - mean_1)
    rho = cfg.N / (boxA.volume + boxB.volume)
    hmax = max(abs(hA), abs(hB))
    C = gap / (rho * table.scales.l0**2 * hmax) if hmax > 0 else 0.0
    return SplitResult(mean_W, mean_1, gap, C, pA)
