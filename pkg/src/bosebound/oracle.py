"""Brute-force finite-difference ground states for one to three particles.

Grids are cell centred.  The 1D second-difference matrix takes its boundary
rows from ghost points: mirror (Neumann), wrap-around (periodic) or
antisymmetric mirror (Dirichlet).  Multi-particle operators are Kronecker
sums of those, so everything stays a sparse symmetric matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, reduce
from itertools import permutations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .cellbound import TempleInput, TempleResult, temple_lower_bound
from .errors import ConfigError, NumericalError, ResolutionError
from .twobody import PotentialSpec, RadialSolution

BCS = ("neumann", "periodic", "dirichlet")
MAX_DIM = 10**7


def second_difference(M: int, h: float, bc: str) -> sp.csr_matrix:
    """1D discrete d^2/dx^2 with ghost-point boundary rows."""
    if bc not in BCS:
        raise ConfigError(f"unknown boundary condition {bc!r}; expected one of {BCS}")
    main = np.full(M, -2.0)
    off = np.ones(M - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if bc == "neumann":
        D[0, 0] = D[M - 1, M - 1] = -1.0
    elif bc == "dirichlet":
        D[0, 0] = D[M - 1, M - 1] = -3.0
    elif M > 1:
        D[0, M - 1] += 1.0
        D[M - 1, 0] += 1.0
    return (D.tocsr() / (h * h)).tocsr()


def laplacian(M: int, h: float, bc: str, dims: int) -> sp.csr_matrix:
    D = second_difference(M, h, bc)
    I = sp.identity(M, format="csr")
    terms = []
    for k in range(dims):
        ops = [I] * dims
        ops[k] = D
        terms.append(reduce(lambda A, B: sp.kron(A, B, format="csr"), ops))
    return sum(terms[1:], terms[0]).tocsr()


@dataclass(frozen=True)
class DiscretizedHamiltonian:
    """-sum_j Delta_j + sum_{i<j} V(x_i - x_j) on an M^3 grid per particle.

    ``relative=True`` (n=2, periodic only) uses the relative coordinate r:
    -2 Delta_r + V(r), which carries the whole spectrum of the zero total
    momentum sector.
    """

    side: float
    points: int
    bc: str
    n: int
    potential: PotentialSpec | None = None
    relative: bool = False
    penalty: float | None = None  # sigma for the bosonic projector penalty

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ConfigError("particle count must be 1, 2 or 3")
        if self.bc not in BCS:
            raise ConfigError(f"unknown boundary condition {self.bc!r}")
        if self.relative and (self.n != 2 or self.bc != "periodic"):
            raise ConfigError("relative-coordinate reduction needs n=2 on a periodic box")
        if self.points < 2 or not self.side > 0:
            raise ConfigError("grid needs >= 2 points and a positive side")
        if self.dim > MAX_DIM:
            raise ConfigError(f"dimension {self.dim} exceeds {MAX_DIM}")

    @property
    def h(self) -> float:
        return self.side / self.points

    @property
    def dim(self) -> int:
        return self.points ** (3 if self.relative else 3 * self.n)

    @cached_property
    def axis(self) -> np.ndarray:
        if self.relative:
            return (np.arange(self.points) + 0.5) * self.h - self.side / 2
        return (np.arange(self.points) + 0.5) * self.h

    def _pair_distance(self, ci: np.ndarray, cj: np.ndarray) -> np.ndarray:
        d = ci - cj
        if self.bc == "periodic":
            d = d - self.side * np.round(d / self.side)
        return np.sqrt(np.sum(d * d, axis=0))

    @cached_property
    def potential_diagonal(self) -> np.ndarray:
        if self.potential is None or self.n == 1:
            return np.zeros(self.dim)
        if self.relative:
            g = np.meshgrid(*[self.axis] * 3, indexing="ij")
            return self.potential(np.sqrt(sum(c * c for c in g)).ravel())
        M = self.points
        idx = np.indices((M,) * (3 * self.n)).reshape(3 * self.n, -1)
        coords = self.axis[idx].reshape(self.n, 3, -1)
        V = np.zeros(self.dim)
        for i in range(self.n):
            for j in range(i + 1, self.n):
                V += self.potential(self._pair_distance(coords[i], coords[j]))
        return V

    @cached_property
    def kinetic(self) -> sp.csr_matrix:
        if self.relative:
            return -2.0 * laplacian(self.points, self.h, self.bc, 3)
        return -laplacian(self.points, self.h, self.bc, 3 * self.n)

    @cached_property
    def swap_matrices(self) -> list:
        """Permutation matrices of the particle exchanges (identity excluded)."""
        if self.relative or self.n == 1:
            return []
        M, n = self.points, self.n
        base = np.arange(self.dim).reshape((M**3,) * n)
        out = []
        for perm in permutations(range(n)):
            if perm == tuple(range(n)):
                continue
            src = np.transpose(base, perm).ravel()
            out.append(sp.csr_matrix((np.ones(self.dim), (np.arange(self.dim), src)),
                                     shape=(self.dim, self.dim)))
        return out

    def symmetrize(self, v: np.ndarray) -> np.ndarray:
        mats = self.swap_matrices
        if not mats:
            return v
        return (v + sum(P @ v for P in mats)) / (len(mats) + 1)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        H = (self.kinetic + sp.diags(self.potential_diagonal)).tocsr()
        if self.penalty is not None and self.swap_matrices:
            k = len(self.swap_matrices) + 1
            Psym = (sp.identity(self.dim, format="csr") + sum(self.swap_matrices)) / k
            H = (H @ Psym + self.penalty * (sp.identity(self.dim) - Psym)).tocsr()
            H = (0.5 * (H + H.T)).tocsr()
        return H

    def sample(self, fn) -> np.ndarray:
        """Grid values of fn(x, y, z) (relative or one-particle grids)."""
        if not (self.relative or self.n == 1):
            raise ConfigError("sample() is for one-particle or relative grids")
        g = np.meshgrid(*[self.axis] * 3, indexing="ij")
        return np.asarray(fn(*g), dtype=float).ravel()


@dataclass
class Eigen:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray

    @property
    def E0(self) -> float:
        return float(self.values[0])

    @property
    def E1(self) -> float | None:
        return float(self.values[1]) if len(self.values) > 1 else None

    @property
    def ground(self) -> np.ndarray:
        return self.vectors[:, 0]


def ground_state(ham: DiscretizedHamiltonian, k: int = 1, tol: float = 1e-10,
                 maxiter: int | None = None, v0: np.ndarray | None = None) -> Eigen:
    """Lowest k eigenpairs (ARPACK Lanczos, deterministic start vector)."""
    H = ham.matrix
    if ham.dim <= 2000:
        w, V = np.linalg.eigh(H.toarray())
        w, V = w[:k], V[:, :k]
    else:
        start = np.ones(ham.dim) if v0 is None else v0
        try:
            w, V = eigsh(H, k=k, which="SA", v0=start, tol=tol, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            raise NumericalError(f"eigensolver did not converge within budget: {exc}") from exc
        o = np.argsort(w)
        w, V = w[o], V[:, o]
    res = np.array([np.linalg.norm(H @ V[:, i] - w[i] * V[:, i]) for i in range(V.shape[1])])
    return Eigen(w, V, res)


# ------------------------------------------------------ radial Neumann


def radial_neumann_e0(pot: PotentialSpec, kappa: float, points: int = 64) -> float:
    """Lowest eigenvalue of -u'' + V u / 2 on (0, kappa) with u(0)=0, u'(kappa)=u(kappa)/kappa.

    Cell-centred grid; the right ghost value is fixed by the Robin condition
    and V is cell-averaged with Gauss-Legendre nodes.
    """
    h = kappa / points
    x, w = np.polynomial.legendre.leggauss(8)
    edges = np.arange(points) * h
    V = np.array([0.5 * np.sum(w * pot(e + 0.5 * h * (x + 1))) for e in edges])
    diag = 2.0 / h**2 + 0.5 * V
    diag[0] += 1.0 / h**2  # u(-h/2) = -u(h/2)
    q = h / (2.0 * kappa)
    diag[-1] -= (1.0 + q) / (1.0 - q) / h**2
    off = np.full(points - 1, -1.0 / h**2)
    return float(eigh_tridiagonal(diag, off, select="i", select_range=(0, 0), eigvals_only=True)[0])


# ------------------------------------------------- substitution identity


def _edge_terms(f: np.ndarray, M: int, h: float):
    """Forward differences along each axis (Neumann: no edge across the boundary)."""
    g = f.reshape(M, M, M)
    return [np.diff(g, axis=ax) / h for ax in range(3)]


def _edge_avg(f: np.ndarray, M: int):
    g = f.reshape(M, M, M)
    return [0.5 * (np.take(g, range(M - 1), axis=ax) + np.take(g, range(1, M), axis=ax)) for ax in range(3)]


@dataclass
class IdentityCheck:
    points: int
    max_residual: float
    residuals: list
    w_self_residual: float


def substitution_identity_check(sol: RadialSolution, points: int, probes: int = 20,
                                rng=None, side: float | None = None) -> IdentityCheck:
    """Discrete check of the ground-state substitution Psi = W Phi for one pair.

    Relative coordinate in a Neumann box of side ``side`` (default 2.5 kappa)
    centred on the other particle; W = 1 - tau(kappa, .).  The left side is
    sum |grad Psi|^2 + 1/2 sum V Psi^2; the right side uses edge-averaged W^2
    for the weighted kinetic term plus W(-Delta_h + V/2)W Phi^2.
    """
    if rng is None:
        raise ConfigError("substitution check needs an rng for the probe functions")
    kappa = sol.kappa
    side = 2.5 * kappa if side is None else side
    M, h = points, side / points
    ax = (np.arange(M) + 0.5) * h - side / 2
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(X * X + Y * Y + Z * Z).ravel()
    W = np.where(r >= kappa, 1.0, 1.0 - sol.tau(r))
    V = sol.potential(r)
    lap = laplacian(M, h, "neumann", 3)
    dV = h**3
    WHW = W * (-(lap @ W) + 0.5 * V * W)

    def lhs(psi):
        return dV * (sum(np.sum(d * d) for d in _edge_terms(psi, M, h)) + 0.5 * np.sum(V * psi * psi))

    def rhs(psi):
        phi = psi / W
        w2 = _edge_avg(W * W, M)
        kin = sum(np.sum(a * d * d) for a, d in zip(w2, _edge_terms(phi, M, h)))
        return dV * (kin + np.sum(WHW * phi * phi))

    res = []
    L = side
    for _ in range(probes):
        c = rng.normal(size=(4, 4, 4)) / (1.0 + np.arange(4)[:, None, None] ** 2
                                          + np.arange(4)[None, :, None] ** 2 + np.arange(4)[None, None, :] ** 2)
        kx = [np.cos(k * math.pi * (X + L / 2) / L) for k in range(4)]
        ky = [np.cos(k * math.pi * (Y + L / 2) / L) for k in range(4)]
        kz = [np.cos(k * math.pi * (Z + L / 2) / L) for k in range(4)]
        smooth = sum(c[a, b, d] * kx[a] * ky[b] * kz[d] for a in range(4) for b in range(4) for d in range(4))
        psi = (W * (2.0 + smooth.ravel() / (1e-12 + np.abs(smooth).max()))).ravel()
        l, rr = lhs(psi), rhs(psi)
        res.append(abs(l - rr) / abs(l))
    lw = lhs(W)
    self_res = abs(lw - rhs(W)) / (abs(lw) or 1.0)  # W = 1 gives zero energy
    return IdentityCheck(points, max(res), res, self_res)


def identity_refinement(sol: RadialSolution, coarse: int = 32, probes: int = 20, seed_rng=None):
    """Residuals at ``coarse`` and 2*coarse points with the same probe draws."""
    if seed_rng is None:
        raise ConfigError("refinement study needs an rng factory")
    a = substitution_identity_check(sol, coarse, probes, seed_rng())
    b = substitution_identity_check(sol, 2 * coarse, probes, seed_rng())
    ratio = a.max_residual / b.max_residual if b.max_residual > 0 else math.inf
    if not ratio > 1.0:
        raise ResolutionError(
            f"identity residual does not decrease under refinement ({a.max_residual:.3g} -> {b.max_residual:.3g})")
    return a, b, ratio


# ------------------------------------------------------- Temple vs exact


@dataclass
class TempleComparison:
    result: TempleResult
    E0: float
    E1: float
    e1_lower: float
    mean: float
    slack: float | None


def temple_vs_exact(ham: DiscretizedHamiltonian, trial: np.ndarray, eig: Eigen | None = None,
                    deflate: float = 10.0) -> TempleComparison:
    """Temple bound for ``trial`` with E1^- = E1 - deflate*residual(E1)."""
    eig = ground_state(ham, k=2) if eig is None else eig
    if eig.E1 is None:
        raise NumericalError("first excited level not available")
    v = np.asarray(trial, dtype=float)
    v = v / np.linalg.norm(v)
    Hv = ham.matrix @ v
    mean = float(v @ Hv)
    second = float(Hv @ Hv)
    e1_lower = eig.E1 - deflate * float(eig.residuals[1])
    tr = temple_lower_bound(TempleInput(mean, max(second, mean * mean), e1_lower))
    slack = eig.E0 - tr.bound if tr.applicable else None
    return TempleComparison(tr, eig.E0, eig.E1, e1_lower, mean, slack)


def periodic_pair_energy(pot: PotentialSpec, L: float, points: int = 48) -> tuple:
    """Ground energy of two particles on a periodic box of side L, with the operator and eigenpairs."""
    ham = DiscretizedHamiltonian(L, points, "periodic", 2, pot, relative=True)
    eig = ground_state(ham)
    return eig.E0, ham, eig
