"""Temple's inequality and the small-cell lower-bound pipeline.

The unperturbed operator of each pair problem is the weighted kinetic
energy T_j/(4(n-1)), whose ground state is W_j itself with eigenvalue 0.
Because of that, <H^2> in Temple's formula reduces to <q~^2>_W and the
whole pair bound needs only the two soft-potential moments.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

from .configspace import (Box, NeighborStructure, ParticleConfig, TauTable, build_neighbors,
                          check_hierarchy, eval_W, integrate_W_squared, min_image)
from .doubling import small_cell_f
from .errors import BudgetError, ConfigError
from .rng import stream
from .scales import ScaleSet, cell_error_terms

MARGINAL_RATIO = 10.0
CUBE_POINCARE = 1.0 / math.pi**2


# ----------------------------------------------------------------- Temple


@dataclass(frozen=True)
class TempleInput:
    mean: float
    second: float
    e1_lower: float

    def __post_init__(self):
        # tolerate round-off in <H^2> - <H>^2
        if self.second < self.mean**2 * (1.0 - 1e-12) - 1e-300:
            raise ConfigError("second moment below squared mean")

    @property
    def variance(self) -> float:
        return max(self.second - self.mean**2, 0.0)


@dataclass(frozen=True)
class TempleResult:
    applicable: bool
    bound: float | None
    ratio: float
    reason: str = ""

    @property
    def marginal(self) -> bool:
        return self.applicable and self.ratio < MARGINAL_RATIO


def temple_lower_bound(t: TempleInput) -> TempleResult:
    """<H> - var/(E1^- - <H>), or an inapplicable result when <H> >= E1^-."""
    ratio = t.e1_lower / t.mean if t.mean > 0 else math.inf
    if not t.mean < t.e1_lower:
        return TempleResult(False, None, ratio,
                            f"<H> = {t.mean:.6g} is not below E1^- = {t.e1_lower:.6g}")
    return TempleResult(True, t.mean - t.variance / (t.e1_lower - t.mean), ratio)


def poincare_gap(ell: float, c0: float, C_P: float = CUBE_POINCARE) -> float:
    """(1 - c0^2)/(C_P ell^2); c0 is sup tau, so W_j >= 1 - c0."""
    if not ell > 0:
        raise ConfigError("box side must be positive")
    if not 0.0 <= c0 < 1.0:
        raise ConfigError(f"c0 must lie in [0, 1), got {c0}")
    return (1.0 - c0 * c0) / (C_P * ell * ell)


# --------------------------------------------------------- exclusion sets


class ExclusionSets:
    """S_-1, S_0 and B~ for a box and the particles other than i and j."""

    def __init__(self, box: Box, env: np.ndarray, L: float, l_m1: float, l0: float):
        self.box, self.L, self.l_m1, self.l0 = box, L, l_m1, l0
        env = np.asarray(env, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(env % L, boxsize=L) if len(env) else None

    @classmethod
    def for_pair(cls, cfg: ParticleConfig, box: Box, scales: ScaleSet, i: int, j: int):
        keep = np.ones(cfg.N, bool)
        keep[[i, j]] = False
        return cls(box, cfg.x[keep], cfg.L, scales.l_m1, scales.l0)

    def _nearest(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self._tree is None:
            return np.full(x.shape[0], np.inf)
        return self._tree.query(x % self.L, k=1)[0]

    def in_S_m1(self, x) -> np.ndarray:
        return self.box.contains(x, self.L) & (self._nearest(x) > 2 * self.l_m1)

    def in_S0(self, x) -> np.ndarray:
        return self.box.contains(x, self.L) & (self._nearest(x) > 2 * self.l0)

    def in_B_tilde(self, x) -> np.ndarray:
        return self.box.contains(x, self.L) & (self.box.face_distance(x, self.L) >= 2 * self.l0)

    def tag(self, x) -> str:
        if not self.in_B_tilde(x)[0]:
            return "neither"
        if self.in_S0(x)[0]:
            return "S0"
        return "S_m1_minus_S0" if self.in_S_m1(x)[0] else "neither"


# ------------------------------------------------------------ q~ moments


@dataclass
class SoftMoments:
    mean: float
    second: float
    stderr_mean: float
    stderr_second: float
    tag: str
    kappa: float
    realized_c_mean: float
    realized_c_second: float
    method: str


def _truncated_kappa(cfg, nbrs, scales, box, i, j):
    """Ball radius of q~_ij (0 when q~ vanishes) and the membership tag."""
    ex = ExclusionSets.for_pair(cfg, box, scales, i, j)
    tag = ex.tag(cfg.x[i])
    if tag == "neither":
        return 0.0, tag
    return (scales.l0 if nbrs.F[i, j] else float(nbrs.t[i, j])), tag


def soft_potential_moments(cfg: ParticleConfig, nbrs: NeighborStructure, table: TauTable,
                           i: int, j: int, box: Box, a: float, method: str = "quadrature",
                           samples: int = 0, rng=None, w_norm: float | None = None) -> SoftMoments:
    """<q~_ij>_W and <q~_ij^2>_W with x_i fixed and x_j running over the box.

    ``method='quadrature'`` uses the disjoint-ball structure: the only ball
    of W_j meeting the support of q~_ij is particle i's, of the same radius.
    """
    s = table.scales
    kappa, tag = _truncated_kappa(cfg, nbrs, s, box, i, j)
    if kappa > 0 and not nbrs.F[i, j]:
        kappa = float(table.quantize(kappa))
    if kappa == 0.0:
        return SoftMoments(0.0, 0.0, 0.0, 0.0, tag, 0.0, 0.0, 0.0, method)
    e0 = table.e0(kappa)
    if method == "quadrature":
        norm = w_norm if w_norm is not None else integrate_W_squared(cfg, nbrs, table, j, box).estimate
        ball_w2 = 4.0 / 3.0 * math.pi * kappa**3 - table.ball_deficit(kappa)
        m1, m2 = e0 * ball_w2 / norm, e0 * e0 * ball_w2 / norm
        se1 = se2 = 0.0
    elif method == "mc":
        if rng is None or samples <= 0:
            raise ConfigError("Monte Carlo moments need a positive budget and an rng")
        y = np.asarray(box.lo) + rng.uniform(size=(samples, 3)) * (2 * box.half)
        w2 = eval_W(cfg, nbrs, table, j, y % cfg.L) ** 2
        d = np.sqrt(np.sum(min_image(y - cfg.x[i], cfg.L) ** 2, axis=1))
        q = np.where(d <= kappa, e0, 0.0)
        num1, num2, den = q * w2, q * q * w2, w2.mean()
        m1, m2 = num1.mean() / den, num2.mean() / den
        # delta-method stderr of a ratio of means
        se1 = float(np.std(num1 - m1 * w2, ddof=1) / (den * math.sqrt(samples)))
        se2 = float(np.std(num2 - m2 * w2, ddof=1) / (den * math.sqrt(samples)))
        if se1 > 0.1 * m1:
            raise BudgetError(f"stderr {se1:.3g} exceeds 10% of <q~>_W = {m1:.3g}; raise the sample budget")
    else:
        raise ConfigError(f"unknown moment method {method!r}")
    vol = box.volume
    c_mean = kappa * (1.0 - m1 * vol / (4.0 * math.pi * a))
    c_second = m2 * vol * kappa**3
    return SoftMoments(float(m1), float(m2), se1, se2, tag, kappa, c_mean, c_second, method)


# ---------------------------------------------------------- certificate


@dataclass
class PairBound:
    i: int
    j: int
    tag: str
    kappa: float
    mean: float
    second: float
    applicable: bool
    marginal: bool
    ratio: float
    bound: float


@dataclass
class SmallCellReport:
    regime: str
    n: int
    f_n: float
    rho_l1_cubed: float
    eps: float
    terms: dict
    dominant_term: str
    term_sum: float
    unit: float
    coefficient: float | None = None
    realized_coefficient: float | None = None
    target: float | None = None
    meets_unit_constant_form: bool | None = None
    kinetic_fraction_used: float | None = None
    pairs_total: int = 0
    pairs_active: int = 0
    pairs_inapplicable: int = 0
    pairs_marginal: int = 0
    min_applicability_ratio: float | None = None
    inner_fraction: float | None = None
    group_size: float | None = None
    group_count: int | None = None
    origin_averaged_coefficient: float | None = None
    coefficient_path: dict = field(default_factory=dict)
    pairs: list = field(default_factory=list)

    def to_json(self, include_pairs: bool = False) -> str:
        d = asdict(self)
        if not include_pairs:
            d.pop("pairs")
        return json.dumps(d, indent=2, sort_keys=True, default=float)


def _particles_in(cfg: ParticleConfig, box: Box) -> np.ndarray:
    return np.nonzero(box.contains(cfg.x, cfg.L))[0]


def small_cell_certificate(cfg: ParticleConfig, box: Box, table: TauTable, a: float,
                           C_LSSY: float = 1.0, method: str = "quadrature", samples: int = 0,
                           seed: int = 0, keep_pairs: bool = False) -> SmallCellReport:
    """Regime-dispatched small-cell certificate for the particles inside ``box``.

    Energies are reported in units of 4 pi a / l1^3 (the field ``unit``).
    """
    s = table.scales
    check_hierarchy(s, table.pot.support_radius)
    side = 2 * box.half
    if not np.allclose(side, s.l1, rtol=1e-9):
        raise ConfigError("small-cell box must be a cube of side l1")
    if s.l1 <= 4 * s.l0:
        raise ConfigError("small-cell pipeline needs l1 > 4 l0")
    idx = _particles_in(cfg, box)
    n = len(idx)
    P = s.n_cell
    f_n = float(small_cell_f(P)(n))
    terms = cell_error_terms(s, n)
    dom = max(terms, key=terms.get)
    unit = 4.0 * math.pi * a / s.l1**3
    rep = SmallCellReport("quadratic", n, f_n, P, s.eps, terms, dom, sum(terms.values()), unit)
    if n <= 1:
        rep.coefficient = rep.realized_coefficient = rep.target = 0.0
        rep.meets_unit_constant_form = True
        return rep
    if n <= 9 * P:
        _quadratic(rep, cfg, box, table, a, idx, method, samples, seed, keep_pairs)
    elif n <= 9 * P / s.eps:
        rep.regime = "grouped"
        p = 9 * P
        pi = max(int(math.floor(p)), 2)
        groups = n // pi
        gterms = {"n_lm1cu_over_l1cu": terms["n_lm1cu_over_l1cu"],
                  "p_l1sq_over_l0cu": p * s.l1**2 / s.l0**3,
                  "n_l0sq_over_l1cu": terms["n_l0sq_over_l1cu"],
                  "np_log_over_l1": n * p * s.log / s.l1}
        rep.terms.update({k: v for k, v in gterms.items() if k not in rep.terms})
        loss = sum(gterms.values())
        rep.group_size, rep.group_count = p, groups
        rep.coefficient_path = {
            "groups_times_pairs": groups * pi * (pi - 1) * (1 - loss),
            "half_n_p_minus_1_eight_ninths": n / 2 * (p - 1) * 8 / 9,
            "superadditive_4P_minus_1_n": (4 * P - 1) * n,
            "floor_n_over_p_ge_n_over_2p": groups >= n / (2 * p),
        }
        rep.coefficient = rep.coefficient_path["groups_times_pairs"]
        rep.target = (4 * P - 1) * n
    else:
        rep.regime = "dense"
        m = 9 * P / s.eps
        groups = int(n // m)
        dens = m / s.l1**3
        e_m = m * m * (1 - C_LSSY * (2 * dens) ** (1 / 17))
        rep.group_size, rep.group_count = m, groups
        rep.coefficient = groups * e_m
        rep.target = 4 * P * n * (1 - s.eps)
        rep.coefficient_path = {
            "E_m_over_unit": e_m,
            "groups": groups,
            "superadditive": rep.coefficient,
            "density_m_over_l1cu": dens,
            "side_condition_l1_over_density_pow": s.l1 / dens ** (-6 / 17),
            "eps_weight": s.eps,
        }
    rep.realized_coefficient = rep.coefficient / f_n if f_n > 0 else None
    if rep.meets_unit_constant_form is None:
        rep.meets_unit_constant_form = bool(rep.coefficient >= rep.target * (1 - rep.term_sum))
    return rep


def _recentred_bound(cfg, nbrs, table, a, i, j, K3, e1) -> float:
    """Pair bound with the cell recentred on x_i, so that x_i lies in B~.

    Averaging the grid origin makes x_i inner with probability 1/K3; dividing
    this bound by K3 estimates the pair's origin-averaged contribution.  The
    normalisation of W_j is taken over the recentred cell.
    """
    half = table.scales.l1 / 2
    box = Box(tuple(cfg.x[i] - half), tuple(cfg.x[i] + half))
    mom = soft_potential_moments(cfg, nbrs, table, i, j, box, a)
    tr = temple_lower_bound(TempleInput(K3 * mom.mean, K3 * K3 * mom.second, e1))
    return max(tr.bound, 0.0) if tr.applicable else 0.0


def _quadratic(rep, cfg, box, table, a, idx, method, samples, seed, keep_pairs):
    s = table.scales
    n = rep.n
    K3 = (s.l1 / (s.l1 - 4 * s.l0)) ** 3
    c0 = 1.0 - table.w_floor
    e1 = poincare_gap(s.l1, c0) / (4 * (n - 1))
    # t_ij, S_-1 and S_0 see every particle, including those outside the cell
    nbrs = build_neighbors(cfg, s)
    norms = {}
    coeff = avg = 0.0
    kinetic = {int(l): Fraction(0) for l in idx}
    ratios = []
    pairs = []
    k = 0
    for i in idx:
        for j in idx:
            if i == j:
                continue
            kinetic[int(i)] += Fraction(1, 4 * (n - 1))
            kinetic[int(j)] += Fraction(1, 4 * (n - 1))
            rng = stream(seed, "cellbound", k) if method == "mc" else None
            k += 1
            if method == "quadrature" and nbrs.G[i, j]:
                avg += _recentred_bound(cfg, nbrs, table, a, int(i), int(j), K3, e1) / K3
            kappa, tag = _truncated_kappa(cfg, nbrs, s, box, i, j)
            if kappa == 0.0:
                pairs.append(PairBound(int(i), int(j), tag, 0.0, 0.0, 0.0, True, False, math.inf, 0.0))
                continue
            if j not in norms and method == "quadrature":
                norms[j] = integrate_W_squared(cfg, nbrs, table, int(j), box).estimate
            mom = soft_potential_moments(cfg, nbrs, table, int(i), int(j), box, a, method,
                                         samples, rng, norms.get(j))
            tr = temple_lower_bound(TempleInput(K3 * mom.mean, K3 * K3 * mom.second, e1))
            # H >= 0 always, so an inapplicable pair still contributes 0
            b = max(tr.bound, 0.0) if tr.applicable else 0.0
            coeff += b
            ratios.append(tr.ratio)
            pairs.append(PairBound(int(i), int(j), tag, mom.kappa, mom.mean, mom.second,
                                   tr.applicable, tr.marginal, tr.ratio, b))
    rep.coefficient = coeff / rep.unit
    rep.target = float(n * (n - 1))
    if method == "quadrature":
        rep.origin_averaged_coefficient = avg / rep.unit
        rep.coefficient_path = {"origin_averaged_ratio": rep.origin_averaged_coefficient / rep.target}
    rep.kinetic_fraction_used = float(max(kinetic.values()))
    rep.pairs_total = len(pairs)
    rep.pairs_active = sum(1 for p in pairs if p.kappa > 0)
    rep.pairs_inapplicable = sum(1 for p in pairs if not p.applicable)
    rep.pairs_marginal = sum(1 for p in pairs if p.marginal)
    rep.min_applicability_ratio = min(ratios) if ratios else None
    rep.inner_fraction = 1.0 / K3
    if keep_pairs:
        rep.pairs = pairs
