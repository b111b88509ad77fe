"""Box-doubling combinatorics.

Quantities are kept in two arithmetic modes.  Float mode uses log-space
binomial weights and scales to k ~ 1e4.  Exact mode runs on
:class:`fractions.Fraction` with integer binomials; the knee K is taken as the
exact rational value of its float, so "exact" means exact for that K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BudgetError, ConfigError
from .scales import ScaleSet

MAX_K = 10_000


@dataclass(frozen=True)
class PiecewiseQuadratic:
    """t(t-1) up to the knee K, then the tangent-continuing line (2K-1)t - K^2."""

    K: float | Fraction

    def __call__(self, t):
        K = self.K
        if isinstance(t, np.ndarray):
            K = float(K)
            return np.where(t <= K, t * (t - 1.0), (2.0 * K - 1.0) * t - K * K)
        if isinstance(t, Fraction) or isinstance(K, Fraction):
            K = Fraction(K)
            t = Fraction(t)
            return t * (t - 1) if t <= K else (2 * K - 1) * t - K * K
        return t * (t - 1) if t <= K else (2 * K - 1) * t - K * K

    def exact(self) -> "PiecewiseQuadratic":
        return PiecewiseQuadratic(Fraction(self.K))


def small_cell_f(rho_l1_cubed: float) -> PiecewiseQuadratic:
    return PiecewiseQuadratic(2.0 * rho_l1_cubed)


def large_cell_f(rho_l2_cubed: float) -> PiecewiseQuadratic:
    return PiecewiseQuadratic(rho_l2_cubed)


# ----------------------------------------------------------------- schedule


def _gap_status(ratio: float) -> str:
    if ratio >= 10.0:
        return "satisfied"
    if ratio >= 2.0:
        return "marginal"
    return "violated"


@dataclass(frozen=True)
class DoublingSchedule:
    """Knee sequence K_1..K_{3h+1} with the box geometry of every step."""

    rho: float
    eta: float
    log: float
    l1: float
    h: int
    K: tuple  # K[0] is K_1

    @classmethod
    def example(cls, scales: ScaleSet, h: int | None = None) -> "DoublingSchedule":
        """K_s = (2 - (1 - 2^{-(s-1)/2}) L^{-eta}) 2^{s-1} rho l1^3.

        ``h`` overrides the number of doubling rounds; needed at desk densities
        where the scale formulas give l2 <= l1.
        """
        h = scales.h if h is None else int(h)
        if h < 1:
            raise ConfigError(f"doubling needs h >= 1, got {h}; pass an explicit h")
        P = scales.rho * scales.l1**3
        Lm = scales.log ** (-scales.eta)
        K = tuple((2.0 - (1.0 - 2.0 ** (-(s - 1) / 2.0)) * Lm) * 2.0 ** (s - 1) * P
                  for s in range(1, 3 * h + 2))
        return cls(scales.rho, scales.eta, scales.log, scales.l1, h, K)

    @classmethod
    def from_knees(cls, knees, rho=1e-4, eta=0.05, l1=1.0):
        knees = tuple(float(k) for k in knees)
        h = max(1, (len(knees) - 1) // 3)
        return cls(rho, eta, abs(math.log(rho)), l1, h, knees)

    @property
    def P(self) -> float:
        return self.rho * self.l1**3

    @property
    def s_max(self) -> int:
        return min(3 * self.h, len(self.K) - 1)

    def knee(self, s: int) -> float:
        return self.K[s - 1]

    def f(self, s: int) -> PiecewiseQuadratic:
        return PiecewiseQuadratic(self.K[s - 1])

    def ell(self, s: int) -> float:
        return 2.0 ** ((s - 1) // 3) * self.l1

    def volume_A(self, s: int) -> float:
        return 2.0 ** (s - 1) * self.l1**3

    def box_A_dims(self, s: int) -> tuple:
        ell = self.ell(s)
        return ((ell, ell, ell), (2 * ell, ell, ell), (2 * ell, 2 * ell, ell))[(s - 1) % 3]

    def checks(self) -> list:
        """Per-step schedule conditions; the gap ratio is reported, not asserted."""
        out = []
        for s in range(1, self.s_max + 1):
            Ks, Kn = self.K[s - 1], self.K[s]
            gap = 2.0 * Ks - Kn
            ratio = gap / (math.sqrt(self.log) * math.sqrt(Kn))
            out.append({
                "s": s, "K_s": Ks, "K_next": Kn, "gap": gap,
                "gap_ratio": ratio, "gap_status": _gap_status(ratio),
                "quarter_log_target": self.log ** 0.25,
                "K_above_density": Ks > 2.0 ** (s - 1) * self.P,
                "gap_positive": gap > 0.0,
            })
        return out

    def final_knee_ok(self) -> bool:
        return self.K[3 * self.h] > 2.0 ** (3 * self.h) * self.P


# ---------------------------------------------------------------- F_s values


def _log_binom_weights(k: int) -> np.ndarray:
    m = np.arange(k, dtype=float)
    steps = np.log(k - m) - np.log(m + 1.0)
    return np.concatenate([[0.0], np.cumsum(steps)]) - k * math.log(2.0)


def eval_F(f: PiecewiseQuadratic, volume, nA: int, nB: int, k: int, exact: bool = False):
    """<[f(nA + m) + f(nB + k - m)]> / volume with m ~ Bin(k, 1/2)."""
    if min(nA, nB, k) < 0:
        raise ConfigError("F arguments must be non-negative integers")
    if k > MAX_K:
        raise BudgetError(f"k={k} exceeds the exact-expectation budget {MAX_K}")
    if exact:
        fe = f.exact()
        tot = Fraction(0)
        c = 1
        for m in range(k + 1):
            tot += c * (fe(nA + m) + fe(nB + k - m))
            c = c * (k - m) // (m + 1)
        return tot / (Fraction(2) ** k * Fraction(volume))
    m = np.arange(k + 1, dtype=float)
    w = np.exp(_log_binom_weights(k))
    vals = f(nA + m) + f(nB + k - m)
    return float(np.dot(w, vals) / volume)


def eval_F_exact(sched: DoublingSchedule, s: int, nA: int, nB: int, k: int, exact: bool = False):
    return eval_F(sched.f(s), sched.volume_A(s), nA, nB, k, exact)


def eval_F_mc(f: PiecewiseQuadratic, volume, nA, nB, k, samples, rng):
    """Monte Carlo estimate and standard error of F, for cross-checking."""
    m = rng.binomial(k, 0.5, size=samples).astype(float)
    v = (f(nA + m) + f(nB + k - m)) / volume
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples))


# ------------------------------------------------------ atypical (large n)


@dataclass
class AtypicalReport:
    s: int
    K_s: float
    K_next: float
    n_lo: int
    n_hi: int
    checked: int = 0
    violations: list = field(default_factory=list)
    min_margin: float = math.inf
    min_margin_n: int | None = None
    argmin_not_central: list = field(default_factory=list)
    half_step_failures: list = field(default_factory=list)  # 2 f_s(n/2) >= f_{s+1}(n)/2
    slope_ok: bool = True  # 2K_s - 1 >= K_{s+1} - 1/2
    knee_ok: bool = True  # 2 f_s(K_s) > f_{s+1}(2 K_s)/2
    rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_atypical_knees(Ks: float, Kn: float, n_hi: int | None = None, s: int = 0,
                          keep_rows: bool = False) -> AtypicalReport:
    """Exhaustive check of 2 min_{mA+mB=n}[f_s(mA)+f_s(mB)] >= f_{s+1}(n).

    Both sides are multiplied by |Lambda_A|, so volumes drop out.
    """
    fs, fn = PiecewiseQuadratic(Ks), PiecewiseQuadratic(Kn)
    n_lo = math.ceil(Kn + 2.0 * math.sqrt(Kn))
    n_hi = int(math.floor(4.0 * Kn)) if n_hi is None else int(n_hi)
    rep = AtypicalReport(s, Ks, Kn, n_lo, n_hi)
    rep.slope_ok = 2.0 * Ks - 1.0 >= Kn - 0.5
    rep.knee_ok = 2.0 * fs(Ks) > 0.5 * fn(2.0 * Ks)
    fs_table = fs(np.arange(n_hi + 1, dtype=float))
    for n in range(n_lo, n_hi + 1):
        pair = fs_table[: n + 1] + fs_table[n::-1]
        i = int(np.argmin(pair))
        lhs = 2.0 * pair[i]
        rhs = float(fn(float(n)))
        margin = lhs - rhs
        rep.checked += 1
        if margin < 0.0:
            rep.violations.append({"n": n, "m_A": i, "lhs": lhs, "rhs": rhs})
        if margin < rep.min_margin:
            rep.min_margin, rep.min_margin_n = margin, n
        if pair[i] < pair[n // 2] - 1e-9 * abs(pair[n // 2]):
            rep.argmin_not_central.append(n)
        if 4.0 * fs(n / 2.0) < rhs:
            rep.half_step_failures.append(n)
        if keep_rows:
            rep.rows.append((s, n, margin))
    return rep


def verify_lemma_doubling_atypical(sched: DoublingSchedule, s: int, n_hi: int | None = None,
                                   keep_rows: bool = False) -> AtypicalReport:
    return verify_atypical_knees(sched.knee(s), sched.knee(s + 1), n_hi, s, keep_rows)


# ------------------------------------------------------------ F estimate


def _tail_moment_sums(K: Fraction, n_max: int):
    """For n = 0..n_max yield (n, T0, T1, T2) with Tj = sum_{m > K} C(n, m) m^j.

    Pascal's rule gives an O(1) big-integer update per n.
    """
    m0 = math.floor(K) + 1
    T0 = T1 = T2 = 0
    for n in range(n_max + 1):
        yield n, T0, T1, T2
        c = math.comb(n, m0 - 1) if m0 >= 1 else 0
        T0, T1, T2 = (2 * T0 + c,
                      2 * T1 + T0 + c * m0,
                      2 * T2 + 2 * T1 + T0 + c * m0 * m0)


@dataclass
class FEstimateReport:
    s: int
    K_s: float
    K_next: float
    rho: float
    n_max: int
    violations: list = field(default_factory=list)
    min_rel_margin: float = math.inf
    min_rel_margin_n: int | None = None
    rows: list = field(default_factory=list)
    chernoff_violations: list = field(default_factory=list)
    chernoff_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations and not self.chernoff_violations


def verify_F_estimate_knees(Ks: float, Kn: float, rho: float, s: int = 0,
                            keep_rows: bool = False) -> FEstimateReport:
    """Exact check of 4 <f_s(m)> >= (1 - rho) f_{s+1}(n), m ~ Bin(n, 1/2).

    The left side equals F_s(0,0,n) |Lambda_A u Lambda_B|.  It is evaluated as
    2^n (n^2 - n) - 4 sum_{m>K}(m-K)^2 C(n,m), all in exact rationals.
    """
    K = Fraction(Ks)
    fn = PiecewiseQuadratic(Fraction(Kn))
    one_minus_rho = 1 - Fraction(rho)
    n_max = math.ceil(Kn + 2.0 * math.sqrt(Kn)) - 1  # largest integer n < Kn + 2 sqrt(Kn)
    rep = FEstimateReport(s, Ks, Kn, rho, n_max)
    for n, T0, T1, T2 in _tail_moment_sums(K, n_max):
        tail = T2 - 2 * K * T1 + K * K * T0
        lhs = Fraction(2**n * (n * n - n)) - 4 * tail
        rhs = one_minus_rho * fn(n) * 2**n
        if n >= 2:
            rel = float((lhs - rhs) / (2**n * Fraction(n * n - n)))
            if rel < rep.min_rel_margin:
                rep.min_rel_margin, rep.min_rel_margin_n = rel, n
            if keep_rows:
                rep.rows.append((s, n, rel))
        if lhs < rhs:
            rep.violations.append({"n": n, "lhs": float(lhs / 2**n), "rhs": float(rhs / 2**n)})
    return rep


def verify_F_estimate(sched: DoublingSchedule, s: int, keep_rows: bool = False) -> FEstimateReport:
    return verify_F_estimate_knees(sched.knee(s), sched.knee(s + 1), sched.rho, s, keep_rows)


def check_chernoff(n_max: int = 2000) -> dict:
    """Exact binomial upper tails against exp(-2 zeta^2 / n) for every n <= n_max.

    P(m >= n/2 + zeta) is a step function of zeta while the bound decreases,
    so integer thresholds t >= n/2 (zeta = t - n/2) cover every real zeta >= 0.
    Comparison is done on logs of exact integer tail counts.
    """
    violations, checked, worst = [], 0, -math.inf
    row = [1]
    ln2 = math.log(2.0)
    for n in range(1, n_max + 1):
        row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
        t0 = (n + 1) // 2
        tail = 0
        logs = []
        for t in range(n, t0 - 1, -1):
            tail += row[t]
            logs.append((t, math.log(tail) - n * ln2))
        for t, lp in logs:
            zeta = t - n / 2.0
            bound = -2.0 * zeta * zeta / n
            checked += 1
            gap = lp - bound
            worst = max(worst, gap)
            if gap > 1e-12:
                violations.append({"n": n, "t": t, "log_tail": lp, "log_bound": bound})
    return {"n_max": n_max, "checked": checked, "violations": violations,
            "max_log_ratio": worst}


# --------------------------------------------- randomisation moments (g, M)


@dataclass(frozen=True)
class Moments:
    mean_g: object
    var_g: object
    mean_M: object
    var_M: object
    M_values: tuple
    g_values: tuple
    telescoping_ok: bool
    var_g_ok: bool
    mean_M_ok: bool
    var_M_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.telescoping_ok and self.var_g_ok and self.mean_M_ok and self.var_M_ok


def gk_Mk_moments(f: PiecewiseQuadratic, volume, nA: int, nB: int, k: int,
                  exact: bool = True) -> Moments:
    """Uniform-measure moments of g_k and M_k and the four identities.

    g and M take one value for x_k in Lambda_A and another for Lambda_B,
    each with probability 1/2.  F(nA, nB, k) on the right of the telescoping
    identity is computed directly from its binomial sum, not by recursion.
    """
    if k < 1:
        raise ConfigError("moments need k >= 1")
    F = lambda a, b, kk: eval_F(f, volume, a, b, kk, exact)  # noqa: E731
    base = F(nA, nB, k - 1)
    up_A, up_B = F(nA + 1, nB, k - 1), F(nA, nB + 1, k - 1)
    gA, gB = up_A - base, up_B - base
    half = Fraction(1, 2) if exact else 0.5
    mean_g = half * (gA + gB)
    var_g = half * (gA * gA + gB * gB) - mean_g * mean_g
    d = nA - nB
    MA, MB = (d + 1) ** 2 - d * d, (d - 1) ** 2 - d * d
    mean_M = half * (MA + MB)
    var_M = half * (MA * MA + MB * MB) - mean_M * mean_M
    target_var_g = (up_A - up_B) ** 2 / 4
    full = F(nA, nB, k)
    if exact:
        tel = base + mean_g == full
        vg = var_g == target_var_g
        mm, vm = mean_M == 1, var_M == 4 * d * d
    else:
        sc = max(abs(full), 1e-300)
        tel = abs(base + mean_g - full) <= 1e-12 * sc
        vg = abs(var_g - target_var_g) <= 1e-12 * max(abs(target_var_g), sc * sc)
        mm, vm = mean_M == 1.0, var_M == 4.0 * d * d
    return Moments(mean_g, var_g, mean_M, var_M, (MA, MB), (gA, gB), tel, vg, mm, vm)


# ---------------------------------------- randomisation step certificates


@dataclass
class StepCertificate:
    k: int
    nA: int
    nB: int
    terms: dict
    majorants: dict
    realized: dict
    F_full: float


def randomization_step_certificate(sched: DoublingSchedule, s: int, scales: ScaleSet,
                                   nA: int, nB: int, k: int, n: int,
                                   C_W: float = 1.0, C_prime: float = 1.0) -> StepCertificate:
    """Numerical size of the four Temple correction terms at one step.

    ``C_W`` is the realised constant of the W-versus-uniform expectation gap,
    |<h>_W - <h>_1| <= C_W rho l0^2 max|h|, as measured in configuration space.
    """
    if n >= sched.knee(s + 1) + 2.0 * math.sqrt(sched.knee(s + 1)):
        raise ConfigError("step certificate applies only below the atypical threshold")
    f, vol = sched.f(s), sched.volume_A(s)
    mom = gk_Mk_moments(f, vol, nA, nB, k, exact=True)
    ell, L, rho = sched.ell(s), scales.log, scales.rho
    w = C_W * rho * scales.l0**2
    g_inf = float(max(abs(mom.g_values[0]), abs(mom.g_values[1])))
    M_inf = float(max(abs(mom.M_values[0]), abs(mom.M_values[1])))
    gap = ell**-2 / L
    terms = {
        "g_shift": w * g_inf,
        "M_drift": C_prime * (k - 1) * (1.0 + w * M_inf) / (ell**4 / L),
        "g_var_over_gap": (float(mom.var_g) + 3.0 * w * g_inf**2) / gap,
        "M_var_over_gap": k * k * (float(mom.var_M) + 3.0 * w * M_inf**2) / (ell**8 / L**2) / gap,
    }
    base1 = n * rho ** (1.0 / 3.0) / ell**3
    base2 = (nA - nB) ** 2 * L / ell**4
    majorants = {"n_rho13_over_l3": base1, "d2_log_over_l4": base2}
    realized = {
        "g_shift": terms["g_shift"] / base1,
        "M_drift": terms["M_drift"] / base1,
        "g_var_over_gap": terms["g_var_over_gap"] / (base1 + base2),
        "M_var_over_gap": terms["M_var_over_gap"] / base1,
    }
    F_full = float(eval_F(f, vol, 0, 0, n, exact=False))
    return StepCertificate(k, nA, nB, terms, majorants, realized, F_full)


@dataclass
class PathCertificate:
    steps: list
    telescoping_exact: bool
    F_start: Fraction
    F_end: Fraction
    total_error: float
    realized_C_total: float
    final_drift_zero: bool


def randomization_path(sched: DoublingSchedule, s: int, scales: ScaleSet, sides,
                       C_W: float = 1.0, C_prime: float = 1.0) -> PathCertificate:
    """Randomise particles 1..n one at a time along a fixed assignment.

    ``sides`` lists 'A' or 'B' for x_1..x_n.  Verifies exactly that
    sum_k (g_k(x_k) - <g_k>_1) = F(a0, b0, 0) - F(0, 0, n).
    """
    sides = list(sides)
    n = len(sides)
    f, vol = sched.f(s), sched.volume_A(s)
    steps, tel = [], Fraction(0)
    for k in range(1, n + 1):
        rest = sides[k:]
        nA, nB = rest.count("A"), rest.count("B")
        cert = randomization_step_certificate(sched, s, scales, nA, nB, k, n, C_W, C_prime)
        steps.append(cert)
        mom = gk_Mk_moments(f, vol, nA, nB, k, exact=True)
        g_here = mom.g_values[0] if sides[k - 1] == "A" else mom.g_values[1]
        tel += g_here - mom.mean_g
    a0, b0 = sides.count("A"), sides.count("B")
    F_start = eval_F(f, vol, a0, b0, 0, exact=True)
    F_end = eval_F(f, vol, 0, 0, n, exact=True)
    total = sum(sum(c.terms.values()) for c in steps)
    ell = sched.ell(s)
    base = n * n * scales.rho ** (1.0 / 3.0) / ell**3 if n else 1.0
    last = steps[-1] if steps else None
    drift_zero = last is None or (last.nA == 0 and last.nB == 0)
    return PathCertificate(steps, tel == F_start - F_end, F_start, F_end, total,
                           total / base, drift_zero)


# --------------------------------------------------------------- Jensen


def jensen_floor(fbar: PiecewiseQuadratic, cell_count: int, N: int) -> float:
    if cell_count < 1:
        raise ConfigError("cell_count must be >= 1")
    return cell_count * float(fbar(N / cell_count))


def verify_jensen(fbar: PiecewiseQuadratic, cell_count: int, N: int, samples: int, rng) -> dict:
    """Compare the floor with sum_theta fbar(n_theta) over random compositions."""
    floor = jensen_floor(fbar, cell_count, N)
    occ = rng.multinomial(N, np.full(cell_count, 1.0 / cell_count), size=samples).astype(float)
    sums = fbar(occ).sum(axis=1)
    worst = float(sums.min())
    return {"floor": floor, "min_sum": worst, "violations": int(np.sum(sums < floor - 1e-9 * abs(floor))),
            "samples": samples}


def convexity_defects(f: PiecewiseQuadratic, t_max: int) -> list:
    t = np.arange(t_max + 1, dtype=float)
    v = f(t)
    d2 = v[2:] - 2.0 * v[1:-1] + v[:-2]
    return [int(i + 1) for i in np.nonzero(d2 < -1e-9 * np.maximum(1.0, np.abs(v[1:-1])))[0]]


def final_dominates_large_cell(sched: DoublingSchedule) -> list:
    """Integers t <= 4 rho l2^3 where f_{3h+1}(t) < f~(t); empty means the claim holds."""
    P2 = 2.0 ** (3 * sched.h) * sched.P
    ff, ft = sched.f(3 * sched.h + 1), large_cell_f(P2)
    t = np.arange(int(math.floor(4 * P2)) + 1, dtype=float)
    bad = ff(t) < ft(t) - 1e-9 * np.maximum(1.0, np.abs(ft(t)))
    return [int(x) for x in t[bad]]
