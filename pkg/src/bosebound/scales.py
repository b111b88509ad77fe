"""Length-scale schedule, error budget and headline bound.

All logarithms are natural: ``L = |ln rho|``.  Each scale is a power law in
rho times a power of L times a configurable prefactor (default 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from scipy.optimize import brentq

from .errors import ConfigError, ScaleHierarchyError

# (rho exponent, log exponent; eta is added to l1's log exponent)
EXPONENTS = {
    "l_m1": (-2.0 / 9.0, 2.0 / 3.0),
    "l0": (-1.0 / 3.0, -1.0 / 3.0),
    "l1": (-1.0 / 3.0, 1.0 / 3.0),
    "l2": (-4.0 / 9.0, -2.0 / 3.0),
}
DEFAULT_PREFACTORS = {"l_m1": 1.0, "l0": 1.0, "l1": 1.0, "l2": 1.0}
LEE_YANG = 128.0 / (15.0 * math.sqrt(math.pi))
CELL_TERMS = ("n_lm1cu_over_l1cu", "n_l1sq_over_l0cu", "n_l0sq_over_l1cu", "nsq_log_over_l1")


@dataclass(frozen=True)
class ScaleSet:
    rho: float
    eta: float
    log: float
    l_m1: float
    l0: float
    l1: float
    l2: float
    eps: float
    h: int
    R0: float = 1.0
    h_prime: float | None = None
    l2_adjust: float = 1.0
    prefactors: tuple = tuple(sorted(DEFAULT_PREFACTORS.items()))
    violations: tuple = ()

    @property
    def ratios(self) -> dict:
        return {
            "l_m1/R0": self.l_m1 / self.R0,
            "l0/l_m1": self.l0 / self.l_m1,
            "l1/l0": self.l1 / self.l0,
            "l2/l1": self.l2 / self.l1,
            "l1/(4 l0)": self.l1 / (4.0 * self.l0),
        }

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def n_cell(self) -> float:
        """Expected particle number rho*l1^3 in one small cell."""
        return self.rho * self.l1**3

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("rho", "eta", "log", "l_m1", "l0", "l1", "l2", "eps", "h", "R0", "h_prime", "l2_adjust")}
        d["prefactors"] = dict(self.prefactors)
        d["ratios"] = self.ratios
        d["violations"] = list(self.violations)
        return d

    @classmethod
    def explicit(cls, rho, l_m1, l0, l1, l2=None, eta=0.05, R0=1.0, h=None):
        """Desk-scale set with lengths given directly instead of from rho.

        Used where the asymptotic formulas give numbers too large to simulate.
        ``log`` is still |ln rho| so that formulas involving it stay defined.
        """
        if l2 is None:
            h = 1 if h is None else h
            l2 = l1 * 2**h
        elif h is None:
            h = int(round(math.log2(l2 / l1)))
        log = abs(math.log(rho))
        s = cls(rho, eta, log, l_m1, l0, l1, l2, rho ** (1 / 3) * log**3, h, R0)
        return replace(s, violations=tuple(_violations(s)))


def _violations(s: ScaleSet) -> list:
    out = [f"{name} = {v:.4g} <= 1" for name, v in s.ratios.items() if not v > 1.0]
    if s.h < 1:
        out.append(f"h = {s.h} < 1 (l2 does not exceed l1 by a power of two)")
    return out


def _check_rho_eta(rho, eta):
    if not (0.0 < rho < math.exp(-1.0)):
        raise ConfigError(f"rho must lie in (0, 1/e), got {rho}")
    if not (0.0 < eta < 1.0 / 15.0):
        raise ConfigError(f"eta must lie in the open interval (0, 1/15), got {eta}")


def build_scales(rho: float, eta: float = 0.05, prefactors: dict | None = None, R0: float = 1.0,
                 strict: bool = True, box_side: float | None = None) -> ScaleSet:
    """Scale schedule at density rho.

    ``strict`` raises :class:`ScaleHierarchyError` when the hierarchy
    R0 << l_-1 << l0 << l1 << l2 is broken; otherwise the violations are
    recorded on the returned object.
    """
    _check_rho_eta(rho, eta)
    pf = dict(DEFAULT_PREFACTORS)
    if prefactors:
        unknown = set(prefactors) - set(pf)
        if unknown:
            raise ConfigError(f"unknown prefactor keys {sorted(unknown)}")
        pf.update({k: float(v) for k, v in prefactors.items()})
    L = abs(math.log(rho))
    lengths = {}
    for name, (pr, pl) in EXPONENTS.items():
        if name == "l1":
            pl += eta
        lengths[name] = pf[name] * rho**pr * L**pl
    raw_l2 = lengths["l2"]
    h = int(round(math.log2(raw_l2 / lengths["l1"])))
    l2 = lengths["l1"] * 2.0**h
    h_prime = None if box_side is None else box_side / l2
    s = ScaleSet(rho, eta, L, lengths["l_m1"], lengths["l0"], lengths["l1"], l2,
                 rho ** (1.0 / 3.0) * L**3, h, R0, h_prime, l2 / raw_l2,
                 tuple(sorted(pf.items())))
    s = replace(s, violations=tuple(_violations(s)))
    if strict and s.violations:
        raise ScaleHierarchyError(
            f"rho={rho:g} is not small enough: " + "; ".join(s.violations), s.violations)
    return s


# ------------------------------------------------------------ error budget


def cell_error_terms(s: ScaleSet, n: float | None = None) -> dict:
    """The four small-cell error magnitudes at particle number n."""
    n = s.n_cell if n is None else float(n)
    return {
        "n_lm1cu_over_l1cu": n * s.l_m1**3 / s.l1**3,
        "n_l1sq_over_l0cu": n * s.l1**2 / s.l0**3,
        "n_l0sq_over_l1cu": n * s.l0**2 / s.l1**3,
        "nsq_log_over_l1": n * n * s.log / s.l1,
    }


def doubling_error_terms(s: ScaleSet, ell: float | None = None) -> dict:
    """Relative magnitudes entering the box-doubling step at box side ell.

    ``n = rho*ell^3``.  Entries:
    ``temple_gap_ratio`` is (n ell^-3)/(ell^-2 L^-1) = nL/ell, which must be small;
    ``M_var_ratio`` is the item-(4) quantity n^4 L^3 ell^-6 over n rho^(1/3) ell^-3;
    ``step_loss`` is rho^(1/3), the per-step factor;
    ``total_loss`` is 3h rho^(1/3), accumulated over all steps;
    ``jensen_loss`` is rho^(1/3) L^2 from the final averaging.
    """
    ell = s.l1 if ell is None else ell
    n = s.rho * ell**3
    r13 = s.rho ** (1.0 / 3.0)
    return {
        "temple_gap_ratio": n * s.log / ell,
        "M_var_ratio": n**3 * s.log**3 / (ell**3 * r13),
        "step_loss": r13,
        "total_loss": 3 * max(s.h, 0) * r13,
        "jensen_loss": r13 * s.log**2,
    }


def error_budget(s: ScaleSet, n_per_cell: float | None = None) -> dict:
    cell = cell_error_terms(s, n_per_cell)
    return {
        "cell": cell,
        "cell_over_eps": {k: v / s.eps for k, v in cell.items()},
        "doubling_l1": doubling_error_terms(s, s.l1),
        "doubling_l2": doubling_error_terms(s, s.l2),
        "eps": s.eps,
    }


def temple_applicability_ratio(s: ScaleSet, e0_l0: float | None = None, a: float = 1.0) -> float:
    """(n^-1 l1^-2) / e0(l0) with n = rho l1^3; uses 3a/l0^3 when e0 is not given."""
    e0 = 3.0 * a / s.l0**3 if e0_l0 is None else e0_l0
    return (1.0 / (s.n_cell * s.l1**2)) / e0


# ---------------------------------------------------------------- headline


def lee_yang_factor(rho_a3: float) -> float:
    return 1.0 + LEE_YANG * math.sqrt(rho_a3)


def headline_bound(s: ScaleSet, a: float, C0: float = 1.0) -> dict:
    if not a > 0.0:
        raise ConfigError("headline bound needs a > 0")
    lead = 4.0 * math.pi * a * s.rho
    factor = 1.0 - C0 * s.eps
    bound = lead * factor
    ly = lee_yang_factor(s.rho * a**3)
    return {
        "bound": bound,
        "leading": lead,
        "ratio_to_leading": factor,
        "ratio_to_lee_yang": factor / ly,
        "lee_yang_factor": ly,
        "vacuous": factor <= 0.0,
    }


def previous_best_crossover(C_old: float = 1.0, C0: float = 1.0) -> float:
    """Largest rho where C0 rho^(1/3) L^3 equals C_old rho^(1/17).

    Below it the new error term is the smaller one.  Solved in x = |ln rho|.
    """
    def g(x):
        return math.log(C0) - x / 3.0 + 3.0 * math.log(x) - math.log(C_old) + x / 17.0

    hi = 10.0
    while g(hi) > 0.0:
        hi *= 2.0
        if hi > 1e9:
            raise ConfigError("no crossover found")
    lo = hi / 2.0
    while g(lo) <= 0.0 and lo > 1.0 + 1e-9:
        lo = max(lo / 2.0, 1.0 + 1e-9)
    x = brentq(g, lo, hi, xtol=1e-12)
    return math.exp(-x)


# ------------------------------------------------------------------ scans


@dataclass
class ScanRow:
    k: int
    rho: float
    eps: float
    ratios: dict
    cell_over_eps: dict
    violations: list = field(default_factory=list)


def scan(ks=range(6, 31), eta: float = 0.05, prefactors: dict | None = None, R0: float = 1.0):
    rows = []
    for k in ks:
        s = build_scales(10.0 ** (-k), eta, prefactors, R0, strict=False)
        rows.append(ScanRow(k, s.rho, s.eps, s.ratios,
                            {t: v / s.eps for t, v in cell_error_terms(s).items()},
                            list(s.violations)))
    return rows


def crossover_k(rows) -> int | None:
    """Smallest k from which every cell term/eps stays <= 1 to the end of the scan."""
    best = None
    for row in reversed(rows):
        if max(row.cell_over_eps.values()) <= 1.0:
            best = row.k
        else:
            break
    return best


def first_valid_k(rows) -> int | None:
    for row in rows:
        if not row.violations:
            return row.k
    return None


def first_eps_below_one(rows) -> int | None:
    for row in rows:
        if row.eps < 1.0:
            return row.k
    return None


def asymptotic_crossover_log(eta: float = 0.05, prefactors: dict | None = None) -> float:
    """|ln rho| beyond which every cell term/eps is <= 1, from the exact power laws.

    Each ratio is c * L^p with p < 0, so the threshold is max over terms of
    c^(-1/p).
    """
    pf = dict(DEFAULT_PREFACTORS)
    pf.update(prefactors or {})
    p1, p0, pm = pf["l1"], pf["l0"], pf["l_m1"]
    terms = [  # (constant, log exponent) of term/eps at n = rho l1^3
        (pm**3, -1.0),
        (p1**5 / p0**3, -1.0 / 3.0 + 5.0 * eta),
        (p0**2, -11.0 / 3.0),
        (p1**5, -1.0 / 3.0 + 5.0 * eta),
    ]
    L = 1.0
    for c, p in terms:
        if c > 1.0:
            L = max(L, c ** (-1.0 / p))
    return L
