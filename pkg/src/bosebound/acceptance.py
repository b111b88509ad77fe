"""Acceptance checks with their time limits.

Every check returns a :class:`Criterion`.  The pytest suite and the
``report-all`` subcommand both call :func:`run_all`, so the two never drift
apart.  Wall-clock times are kept separate from the deterministic details.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .configspace import (Box, ParticleConfig, TauTable, build_neighbors, eval_W, grid_average,
                          integrate_W_squared)
from .doubling import (DoublingSchedule, check_chernoff, gk_Mk_moments,
                       verify_F_estimate, verify_lemma_doubling_atypical)
from .oracle import (DiscretizedHamiltonian, ground_state, identity_refinement,
                     periodic_pair_energy, radial_neumann_e0, temple_vs_exact)
from .cellbound import TempleInput, temple_lower_bound
from .rng import stream
from .scales import (CELL_TERMS, ScaleSet, asymptotic_crossover_log, build_scales, crossover_k, scan)
from .twobody import PotentialSpec, scattering_length, solve_neumann_mode

# Checks that fail for reasons analysed in the project notes.
EXPECTED_FAILURES = {"C5", "C11b"}
RHO_GRID = (1e-4, 1e-6, 1e-8)
DESK = dict(rho=8 / 128**3, l_m1=4.0, l0=16.0, l1=128.0)


@dataclass
class Criterion:
    cid: str
    name: str
    passed: bool
    limit_s: float
    details: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def within_time(self) -> bool:
        return self.elapsed <= self.limit_s

    @property
    def ok(self) -> bool:
        return self.passed and self.within_time

    def line(self) -> str:
        tag = "PASS" if self.ok else "FAIL"
        if not self.ok and self.cid in EXPECTED_FAILURES:
            tag = "FAIL (expected)"
        return f"{tag} {self.cid} {self.name} [{self.elapsed:.2f}s / {self.limit_s:g}s]"


def _timed(cid, name, limit, fn, *args) -> Criterion:
    t0 = time.perf_counter()
    passed, details = fn(*args)
    return Criterion(cid, name, bool(passed), limit, details, time.perf_counter() - t0)


# ------------------------------------------------------------------ C1, C2


def _c1():
    pot = PotentialSpec("square-barrier", 50.0, 1.0)
    a = scattering_length(pot)
    exact = 1.0 - math.tanh(5.0) / 5.0
    rel = abs(a / exact - 1.0)
    return rel <= 1e-6, {"a": a, "closed_form": exact, "rel_err": rel}


C2_POTENTIALS = (
    PotentialSpec("square-barrier", 50.0, 1.0),
    PotentialSpec("square-barrier", 5.0, 1.0),
    PotentialSpec("gaussian", 10.0, 0.5),
    PotentialSpec("smooth-bump", 50.0, 1.0),
)


def _c2():
    rows, ok = [], True
    for pot in C2_POTENTIALS:
        R0 = pot.support_radius
        a = scattering_length(pot)
        for m in (4, 8, 16, 32, 64):
            kappa = m * R0
            e0 = solve_neumann_mode(pot, kappa).eigenvalue
            lower = 3.0 * a / kappa**3
            excess = e0 / lower - 1.0
            good = e0 >= lower and excess <= 8.0 * R0 / kappa
            ok &= good
            rows.append({"potential": pot.describe(), "kappa": kappa, "e0": e0, "3a/k3": lower,
                         "excess": excess, "allowed": 8.0 * R0 / kappa, "ok": good})
    return ok, {"pairs": len(rows), "rows": rows}


# --------------------------------------------------------------------- C3


def _c3(seed):
    rng = stream(seed, "acceptance.temple", 0)
    applicable = violations = 0
    worst = -math.inf
    for _ in range(1000):
        G = rng.normal(size=(8, 8))
        A = 0.5 * (G + G.T)
        w, V = np.linalg.eigh(A)
        e1 = w[1] - rng.uniform(0.0, 0.5) * (w[1] - w[0])
        v = V[:, 0] + rng.uniform(0.0, 0.6) * rng.normal(size=8)
        v /= np.linalg.norm(v)
        Av = A @ v
        tr = temple_lower_bound(TempleInput(float(v @ Av), float(Av @ Av), float(e1)))
        if tr.applicable:
            applicable += 1
            worst = max(worst, tr.bound - w[0])
            violations += int(tr.bound > w[0] + 1e-12 * max(1.0, abs(w[0])))
    disc_app = disc_viol = 0
    disc_worst = -math.inf
    for t in range(50):
        r = stream(seed, "acceptance.temple", 1 + t)
        pot = PotentialSpec("gaussian", float(r.uniform(1.0, 20.0)), float(r.uniform(0.4, 0.8)))
        ham = DiscretizedHamiltonian(float(r.uniform(6.0, 10.0)), 10, "periodic", 2, pot, relative=True)
        eig = ground_state(ham, k=2)
        trial = eig.ground + r.uniform(0.0, 0.3) * r.normal(size=ham.dim) / math.sqrt(ham.dim)
        cmp = temple_vs_exact(ham, trial, eig)
        if cmp.result.applicable:
            disc_app += 1
            disc_worst = max(disc_worst, -cmp.slack)
            disc_viol += int(cmp.slack < -1e-10 * max(1.0, abs(cmp.E0)))
    ok = violations == 0 and disc_viol == 0 and applicable > 0 and disc_app > 0
    return ok, {"random_applicable": applicable, "random_violations": violations,
                "random_worst_excess": worst, "discretized_applicable": disc_app,
                "discretized_violations": disc_viol, "discretized_worst_excess": disc_worst}


# ---------------------------------------------------------------- C4..C6


def _schedules(h):
    out = []
    for rho in RHO_GRID:
        sc = build_scales(rho, 0.05, strict=False)
        out.append((rho, DoublingSchedule.example(sc, h=h)))
    return out


def _c4(h):
    rows, total = [], 0
    for rho, sched in _schedules(h):
        for s in range(1, sched.s_max + 1):
            rep = verify_lemma_doubling_atypical(sched, s)
            total += len(rep.violations)
            rows.append({"rho": rho, "s": s, "n_range": [rep.n_lo, rep.n_hi], "checked": rep.checked,
                         "violations": len(rep.violations), "min_margin": rep.min_margin,
                         "knee_ok": rep.knee_ok})
    return total == 0, {"violations": total, "rows": rows}


def _c5(h, n_max):
    rows, total = [], 0
    for rho, sched in _schedules(h):
        for s in range(1, sched.s_max + 1):
            rep = verify_F_estimate(sched, s)
            total += len(rep.violations)
            rows.append({"rho": rho, "s": s, "n_max": rep.n_max, "violations": len(rep.violations),
                         "min_rel_margin": rep.min_rel_margin, "at_n": rep.min_rel_margin_n})
    ch = check_chernoff(n_max)
    ok = total == 0 and not ch["violations"]
    return ok, {"F_violations": total, "rows": rows, "chernoff_checked": ch["checked"],
                "chernoff_violations": len(ch["violations"]), "chernoff_max_log_ratio": ch["max_log_ratio"]}


def _c6(seed, h):
    rng = stream(seed, "acceptance.moments", 0)
    scheds = _schedules(h)
    bad = 0
    for _ in range(500):
        _, sched = scheds[int(rng.integers(len(scheds)))]
        s = int(rng.integers(1, sched.s_max + 1))
        K = sched.knee(s)
        nA, nB = (int(v) for v in rng.integers(0, int(3 * K) + 2, size=2))
        k = int(rng.integers(1, 41))
        bad += not gk_Mk_moments(sched.f(s), sched.volume_A(s), nA, nB, k, exact=True).all_ok
    return bad == 0, {"states": 500, "failures": bad}


# ---------------------------------------------------------------- C7, C8


def _c7(seed):
    l1, l0, L = DESK["l1"], DESK["l0"], 2 * DESK["l1"]
    target = ((l1 - 4 * l0) / l1) ** 3
    sigma = math.sqrt(target * (1 - target) / 1e4)
    rng = stream(seed, "acceptance.grid", 0)
    probes = rng.uniform(0, L, size=(10, 3))
    rows, ok = [], True
    for p in probes:
        mean, _ = grid_average(p, L, l1, l0, 10_000, rng)
        z = (mean - target) / sigma
        ok &= abs(z) <= 3.0
        rows.append({"mean": mean, "z": z})
    return ok, {"target": target, "sigma": sigma, "rows": rows}


def desk_table(pot: PotentialSpec | None = None) -> TauTable:
    pot = pot or PotentialSpec("square-barrier", 50.0, 1.0)
    s = ScaleSet.explicit(DESK["rho"], DESK["l_m1"], DESK["l0"], DESK["l1"])
    return TauTable(pot, s)


def _c8(seed, configs=100):
    tab = desk_table()
    s = tab.scales
    floor = tab.w_floor
    L = 2 * s.l1
    N = int(round(s.rho * L**3))
    box = Box.cube((0.0, 0.0, 0.0), s.l1)
    Cn, Cl, minW, over = [], [], math.inf, 0
    for c in range(configs):
        rng = stream(seed, "acceptance.W", c)
        cfg = ParticleConfig.uniform(N, L, rng)
        nb = build_neighbors(cfg, s)
        I = integrate_W_squared(cfg, nb, tab, 0, box)
        over += I.estimate > I.volume
        Cn.append(I.deficit_inside / (I.n_inside * s.l0**2))
        Cl.append(I.deficit_boundary / s.l1**2)
        probes = np.concatenate([cfg.x, cfg.x + 3.0 * rng.normal(size=cfg.x.shape),
                                 rng.uniform(0, L, size=(500, 3))]) % L
        minW = min(minW, float(eval_W(cfg, nb, tab, 0, probes).min()))
    Cn, Cl = np.array(Cn), np.array(Cl)
    half = configs // 2

    def stable(v):
        full = v.max()
        return bool(np.isfinite(full) and full > 0 and all(
            abs(part.max() / full - 1.0) <= 0.5 for part in (v[:half], v[half:])))

    ok = minW >= floor - 1e-12 and over == 0 and stable(Cn) and stable(Cl)
    return ok, {"configs": configs, "N": N, "min_W": minW, "one_minus_c0": floor,
                "C_n": float(Cn.max()), "C_n_halves": [float(Cn[:half].max()), float(Cn[half:].max())],
                "C_l": float(Cl.max()), "C_l_halves": [float(Cl[:half].max()), float(Cl[half:].max())],
                "C_n_median": float(np.median(Cn)), "above_volume": over}


# ---------------------------------------------------------------- C9, C10


C9_POTENTIALS = (
    PotentialSpec("square-barrier", 50.0, 1.0),
    PotentialSpec("gaussian", 10.0, 0.5),
    PotentialSpec("smooth-bump", 50.0, 1.0),
)


def _c9(seed, points=64, coarse=32):
    rows, ok = [], True
    for idx, pot in enumerate(C9_POTENTIALS):
        kappa = 4.0 * pot.support_radius
        sol = solve_neumann_mode(pot, kappa)
        e_fd = radial_neumann_e0(pot, kappa, points)
        rel = abs(e_fd / sol.eigenvalue - 1.0)
        a, b, ratio = identity_refinement(sol, coarse, 20, lambda: stream(seed, "acceptance.identity", idx))
        good = rel <= 0.02 and ratio >= 2.0
        ok &= good
        rows.append({"potential": pot.describe(), "kappa": kappa, "e0_shooting": sol.eigenvalue,
                     "e0_fd": e_fd, "rel": rel, "residual_coarse": a.max_residual,
                     "residual_fine": b.max_residual, "ratio": ratio})
    return ok, {"rows": rows}


def _c10(points=48, L_over_a=20.0):
    pot = PotentialSpec("gaussian", 10.0, 0.5)
    a = scattering_length(pot)
    L = L_over_a * a
    E0, _, eig = periodic_pair_energy(pot, L, points)
    ref = 8 * math.pi * a / L**3
    ratio = E0 / ref
    return abs(ratio - 1.0) <= 0.25, {"a": a, "L": L, "points": points, "E0": E0, "8pia/L3": ref,
                                      "ratio": ratio, "residual": float(eig.residuals[0])}


# -------------------------------------------------------------------- C11


PERTURBATIONS = [(k, f) for k in ("l_m1", "l0", "l1", "l2") for f in (0.8, 1.2)] + \
    [("all", 0.8), ("all", 1.2)]


def _c11a():
    rows = scan(range(6, 31))
    mono = {t: all(rows[i + 1].cell_over_eps[t] <= rows[i].cell_over_eps[t] for i in range(len(rows) - 1))
            for t in CELL_TERMS}
    last = max(rows[-1].cell_over_eps.values())
    k = crossover_k(rows)
    ok = all(mono.values()) and last <= 1.0 and k is not None
    return ok, {"crossover_k": k, "nonincreasing": mono, "last_max_ratio": last,
                "table": [{"k": r.k, **r.cell_over_eps} for r in rows]}


def _c11b():
    base = crossover_k(scan(range(6, 31)))
    rows = []
    ok = base is not None
    for key, fac in PERTURBATIONS:
        pf = {n: fac for n in ("l_m1", "l0", "l1", "l2")} if key == "all" else {key: fac}
        k = crossover_k(scan(range(6, 31), prefactors=pf))
        good = k is not None and base is not None and abs(k - base) <= 2
        ok &= good
        rows.append({"prefactor": key, "factor": fac, "crossover_k": k,
                     "asymptotic_log_threshold": asymptotic_crossover_log(0.05, pf), "stable": good})
    return ok, {"base_crossover_k": base, "rows": rows}


# ---------------------------------------------------------------- driver


def run_all(seed: int = 0, h: int = 2, chernoff_n_max: int = 2000, only=None) -> list:
    plan = [
        ("C1", "scattering length of the square barrier", 1, _c1, ()),
        ("C2", "Neumann e0 bounds on twenty pairs", 30, _c2, ()),
        ("C3", "Temple bound never exceeds E0", 60, _c3, (seed,)),
        ("C4", "atypical-n doubling inequality, exhaustive", 120, _c4, (h,)),
        ("C5", "F estimate and Chernoff tail, exact", 120, _c5, (h, chernoff_n_max)),
        ("C6", "randomisation moment identities", 10, _c6, (seed, h)),
        ("C7", "grid-average identity", 10, _c7, (seed,)),
        ("C8", "W lower bound and integral deficit constants", 60, _c8, (seed,)),
        ("C9", "oracle radial e0 and identity refinement", 300, _c9, (seed,)),
        ("C10", "periodic pair energy near 8 pi a / L^3", 600, _c10, ()),
        ("C11a", "error-budget scan trend and crossover", 5, _c11a, ()),
        ("C11b", "crossover stability under 20% prefactor changes", 5, _c11b, ()),
    ]
    out = []
    for cid, name, limit, fn, args in plan:
        if only is not None and cid not in only:
            continue
        out.append(_timed(cid, name, limit, fn, *args))
    return out
