"""Radial two-body problem: zero-energy scattering and the Neumann ball mode.

Everything is phrased for u(r) = r*phi(r), which turns the s-wave equation
(-Delta + V/2) phi = e phi into the regular ODE

    u'' = (V(r)/2 - e) u,   u(0) = 0.

The interior [0, R0] is integrated with fixed-step RK4.  Because the ODE is
linear, each RK4 step is a 2x2 matrix; endpoint shooting multiplies them with a
batched tree reduction, which is what makes repeated eigenvalue solves cheap.
Outside R0 the potential vanishes and the solution is continued in closed form.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, ConfigError, ModelError, ResolutionError, VerificationError

SHAPES = ("square-barrier", "gaussian", "smooth-bump")


@dataclass(frozen=True)
class PotentialSpec:
    """Repulsive, radially symmetric, compactly supported pair potential.

    ``width`` is the barrier radius for the square barrier, the standard
    deviation for the gaussian and the support radius for the smooth bump.
    The gaussian is cut at the smallest radius where V has dropped below
    ``truncation * amplitude``.
    """

    shape: str
    amplitude: float
    width: float = 1.0
    truncation: float = 1e-12

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown potential shape {self.shape!r}; expected one of {SHAPES}")
        if not (self.amplitude >= 0.0 and math.isfinite(self.amplitude)):
            raise ModelError(f"amplitude must be finite and non-negative, got {self.amplitude}")
        if not self.width > 0.0:
            raise ConfigError(f"width must be positive, got {self.width}")
        if not 0.0 < self.truncation < 1.0:
            raise ConfigError("truncation must lie in (0, 1)")

    @property
    def support_radius(self) -> float:
        if self.shape == "gaussian":
            return self.width * math.sqrt(2.0 * math.log(1.0 / self.truncation))
        return self.width

    @property
    def is_free(self) -> bool:
        return self.amplitude == 0.0

    def __call__(self, r):
        """V(r); zero for r > R0.  The square barrier includes r = R0."""
        r = np.abs(np.asarray(r, dtype=float))
        R0 = self.support_radius
        inside = r <= R0
        if self.shape == "square-barrier":
            v = np.where(inside, self.amplitude, 0.0)
        elif self.shape == "gaussian":
            v = np.where(inside, self.amplitude * np.exp(-0.5 * (r / self.width) ** 2), 0.0)
        else:
            gap = 1.0 - np.minimum((r / self.width) ** 2, 1.0)
            safe = np.where(gap > 0.0, gap, 1.0)
            v = np.where(gap > 0.0, self.amplitude * np.exp(1.0 - 1.0 / safe), 0.0)
        return v if v.ndim else float(v)

    def describe(self) -> str:
        return f"{self.shape}(V0={self.amplitude:g},w={self.width:g},R0={self.support_radius:.6g})"


@dataclass(frozen=True)
class GridSpec:
    """Resolution parameters for the radial solver."""

    steps_per_R0: int = 2000
    margin_factor: float = 4.0
    points_per_kappa: int = 10_000
    exterior_points: int = 400

    def __post_init__(self):
        if self.steps_per_R0 < 16:
            raise ResolutionError("steps_per_R0 must be at least 16")
        if self.margin_factor < 4.0:
            raise ConfigError("grid must extend at least 4*R0 beyond the support")


@dataclass(frozen=True)
class RadialSolution:
    """Sampled profile u(r) = r*phi(r) plus the derived scalar.

    For ``kind == "zero-energy"`` the scalar is the scattering length and phi
    tends to 1 at infinity.  For ``kind == "neumann-mode"`` the scalar is
    e0(kappa) and phi is normalised so that phi(kappa) = 1.
    """

    kind: str
    potential: PotentialSpec
    r: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    du: np.ndarray = field(repr=False)
    scattering_length: float
    eigenvalue: float = 0.0
    kappa: float = math.inf
    # exterior closed form: u(r) = A cos(k(r-R0)) + B sin(k(r-R0))/k, k = sqrt(e)
    ext_u0: float = 0.0
    ext_du0: float = 0.0
    norm: float = 1.0

    @property
    def phi_grid(self) -> np.ndarray:
        phi = np.empty_like(self.u)
        phi[1:] = self.u[1:] / self.r[1:]
        phi[0] = self.du[0]
        return phi / self.norm

    @property
    def c0(self) -> float:
        """phi at the origin, which is its minimum for a repulsive potential."""
        return float(self.du[0] / self.norm)

    def _exterior_u(self, r):
        s = r - self.potential.support_radius
        e = self.eigenvalue
        if e == 0.0:
            return self.ext_u0 + self.ext_du0 * s
        k = math.sqrt(e)
        return self.ext_u0 * np.cos(k * s) + self.ext_du0 * np.sin(k * s) / k

    def phi(self, r):
        """phi(r) for arbitrary r >= 0 (beyond kappa the constant 1)."""
        r = np.abs(np.asarray(r, dtype=float))
        R0 = self.potential.support_radius
        out = np.ones_like(r)
        inner = r <= R0
        if np.any(inner):
            out[inner] = np.interp(r[inner], self.r, self.phi_grid)
        outer = (~inner) & (r < self.kappa)
        if np.any(outer):
            ro = r[outer]
            out[outer] = self._exterior_u(ro) / (ro * self.norm)
        return out if out.ndim else float(out)

    def tau(self, r):
        """1 - phi, cut to zero at and beyond kappa."""
        t = 1.0 - np.asarray(self.phi(r))
        if np.isfinite(self.kappa):
            t = np.where(np.abs(np.asarray(r, dtype=float)) >= self.kappa, 0.0, t)
        return t if np.ndim(t) else float(t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(
            f"# kind={self.kind} potential={self.potential.describe()} "
            f"a={self.scattering_length:.12g} e0={self.eigenvalue:.12g} kappa={self.kappa:.12g}\n"
        )
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["r", "phi"])
        for ri, pi in zip(self.r, self.phi_grid):
            w.writerow([f"{ri:.12g}", f"{pi:.12g}"])
        return buf.getvalue()


# ---------------------------------------------------------------- integrator


def _rk4_step_matrices(pot: PotentialSpec, e: float, n_steps: int):
    """RK4 transfer matrices for u'' = (V/2 - e) u on [0, R0], shape (n, 2, 2)."""
    R0 = pot.support_radius
    h = R0 / n_steps
    r = np.linspace(0.0, R0, n_steps + 1)
    w0 = 0.5 * pot(r[:-1]) - e
    wm = 0.5 * pot(r[:-1] + 0.5 * h) - e
    w1 = 0.5 * pot(r[1:]) - e
    if pot.shape == "square-barrier":
        # left limits: the whole interior sits under the barrier
        w1 = np.full_like(w1, 0.5 * pot.amplitude - e)
    n = n_steps
    A0 = np.zeros((n, 2, 2)); A0[:, 0, 1] = 1.0; A0[:, 1, 0] = w0
    Am = np.zeros((n, 2, 2)); Am[:, 0, 1] = 1.0; Am[:, 1, 0] = wm
    A1 = np.zeros((n, 2, 2)); A1[:, 0, 1] = 1.0; A1[:, 1, 0] = w1
    eye = np.eye(2)
    K1 = A0
    K2 = Am @ (eye + 0.5 * h * K1)
    K3 = Am @ (eye + 0.5 * h * K2)
    K4 = A1 @ (eye + h * K3)
    return r, eye + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def _tree_product(M: np.ndarray) -> np.ndarray:
    """M[n-1] @ ... @ M[0] by pairwise reduction."""
    while M.shape[0] > 1:
        if M.shape[0] % 2:
            M = np.concatenate([M, np.eye(2)[None]], axis=0)
        M = M[1::2] @ M[0::2]
    return M[0]


def _series_start(pot: PotentialSpec, e: float, h: float):
    w0 = 0.5 * float(pot(0.0)) - e
    return np.array([h * (1.0 + w0 * h * h / 6.0), 1.0 + 0.5 * w0 * h * h])


def _interior_endpoint(pot: PotentialSpec, e: float, n_steps: int) -> np.ndarray:
    """(u, u') at R0 for the regular solution with u'(0) = 1."""
    r, M = _rk4_step_matrices(pot, e, n_steps)
    y1 = _series_start(pot, e, r[1])
    return _tree_product(M[1:]) @ y1 if n_steps > 1 else y1


def _interior_profile(pot: PotentialSpec, e: float, n_steps: int):
    r, M = _rk4_step_matrices(pot, e, n_steps)
    y = np.empty((n_steps + 1, 2))
    y[0] = (0.0, 1.0)
    y[1] = _series_start(pot, e, r[1])
    m = M.tolist()
    u, du = y[1]
    for i in range(1, n_steps):
        (a, b), (c, d) = m[i]
        u, du = a * u + b * du, c * u + d * du
        y[i + 1, 0] = u
        y[i + 1, 1] = du
    return r, y


# ------------------------------------------------------------- zero energy


@lru_cache(maxsize=256)
def solve_zero_energy(pot: PotentialSpec, grid: GridSpec = GridSpec()) -> RadialSolution:
    """Zero-energy scattering solution and its scattering length."""
    R0 = pot.support_radius
    if pot.is_free:
        r = np.linspace(0.0, (1.0 + grid.margin_factor) * R0, grid.exterior_points)
        return RadialSolution("zero-energy", pot, r, r.copy(), np.ones_like(r), 0.0,
                              ext_u0=R0, ext_du0=1.0)
    r_in, y = _interior_profile(pot, 0.0, grid.steps_per_R0)
    if not np.all(np.isfinite(y)):
        raise ResolutionError("zero-energy integration overflowed; increase steps_per_R0")
    u0, du0 = y[-1]
    r_out = np.linspace(R0, R0 * (1.0 + grid.margin_factor), grid.exterior_points + 1)[1:]
    u_out = u0 + du0 * (r_out - R0)
    # least-squares affine fit u = c (r - a) on the outer half of the free region
    sel = r_out >= R0 * (1.0 + 0.5 * grid.margin_factor)
    c, b = np.polyfit(r_out[sel], u_out[sel], 1)
    a = -b / c
    if a < -1e-9 * R0:
        raise ModelError(f"fitted scattering length {a:.3g} < 0: potential is not repulsive")
    if a > R0 * (1.0 + 1e-9):
        raise ResolutionError(f"fitted scattering length {a:.6g} exceeds R0={R0:.6g}")
    r = np.concatenate([r_in, r_out])
    u = np.concatenate([y[:, 0], u_out])
    du = np.concatenate([y[:, 1], np.full_like(r_out, du0)])
    return RadialSolution("zero-energy", pot, r, u, du, float(max(a, 0.0)),
                          ext_u0=float(u0), ext_du0=float(du0), norm=float(c))


def scattering_length(pot: PotentialSpec, grid: GridSpec = GridSpec()) -> float:
    return solve_zero_energy(pot, grid).scattering_length


def residual_zero_energy(sol: RadialSolution) -> float:
    """max |-u'' + V u/2| on the interior grid relative to max |V u/2|."""
    R0 = sol.potential.support_radius
    m = sol.r <= R0
    r, u = sol.r[m], sol.u[m]
    h = r[1] - r[0]
    upp = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    vu = 0.5 * sol.potential(r[1:-1]) * u[1:-1]
    if sol.potential.shape == "square-barrier":
        upp, vu = upp[:-1], vu[:-1]  # skip the kink at R0
    scale = float(np.max(np.abs(vu))) or 1.0
    return float(np.max(np.abs(-upp + vu))) / scale


# ---------------------------------------------------------------- Neumann


def _mismatch(pot: PotentialSpec, kappa: float, e: float, n_steps: int) -> float:
    R0 = pot.support_radius
    u0, du0 = _interior_endpoint(pot, e, n_steps)
    s = kappa - R0
    if e <= 0.0:
        u, du = u0 + du0 * s, du0
    else:
        k = math.sqrt(e)
        cs, sn = math.cos(k * s), math.sin(k * s)
        u, du = u0 * cs + du0 * sn / k, -u0 * k * sn + du0 * cs
    # scale-free form of u'(kappa) - u(kappa)/kappa
    return (du - u / kappa) / math.hypot(u0, du0)


@lru_cache(maxsize=4096)
def solve_neumann_mode(pot: PotentialSpec, kappa: float, grid: GridSpec = GridSpec(),
                       rtol: float = 1e-10) -> RadialSolution:
    """Lowest Neumann eigenpair of -Delta + V/2 on the ball of radius kappa."""
    R0 = pot.support_radius
    kappa = float(kappa)
    if kappa < 4.0 * R0:
        raise ConfigError(f"kappa={kappa:g} must be at least 4*R0={4 * R0:g}")
    if pot.is_free:
        r = np.linspace(0.0, kappa, grid.points_per_kappa)
        return RadialSolution("neumann-mode", pot, r, r.copy(), np.ones_like(r), 0.0, 0.0,
                              kappa, ext_u0=R0, ext_du0=1.0)
    a = scattering_length(pot, grid)
    n = grid.steps_per_R0
    lo_guess = 3.0 * a / kappa**3
    hi = 2.0 * lo_guess * (1.0 + 8.0 * R0 / kappa)
    g0 = _mismatch(pot, kappa, 0.0, n)
    if g0 <= 0.0:
        raise BracketError("mismatch is not positive at e=0; potential or grid inconsistent")
    g_hi = _mismatch(pot, kappa, hi, n)
    widen = 0
    while g_hi > 0.0:
        widen += 1
        if widen > 60:
            raise BracketError(f"no sign change up to e={hi:.3g}; kappa too small or grid too coarse")
        hi *= 2.0
        g_hi = _mismatch(pot, kappa, hi, n)
    e0 = brentq(lambda e: _mismatch(pot, kappa, e, n), 0.0, hi,
                xtol=1e-3 * rtol * lo_guess, rtol=max(rtol, 4.5e-16), maxiter=500)

    r_in, y = _interior_profile(pot, e0, n)
    u0, du0 = y[-1]
    k = math.sqrt(e0)
    n_out = max(grid.points_per_kappa - n, 200)
    r_out = np.linspace(R0, kappa, n_out + 1)[1:]
    s = r_out - R0
    u_out = u0 * np.cos(k * s) + du0 * np.sin(k * s) / k
    du_out = -u0 * k * np.sin(k * s) + du0 * np.cos(k * s)
    r = np.concatenate([r_in, r_out])
    u = np.concatenate([y[:, 0], u_out])
    du = np.concatenate([y[:, 1], du_out])
    if np.any(u[1:] <= 0.0):
        raise ResolutionError("Neumann profile has a node: not the ground state")
    norm = float(u[-1] / kappa)
    return RadialSolution("neumann-mode", pot, r, u, du, a, float(e0), kappa,
                          ext_u0=float(u0), ext_du0=float(du0), norm=norm)


@dataclass(frozen=True)
class ProfileBounds:
    c0: float
    phi_max: float
    c1: float
    kappa: float
    lower_bound_ratio: float  # e0 kappa^3 / (3a)
    realized_C: float  # kappa (e0 kappa^3/(3a) - 1)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def check_profile_bounds(sol: RadialSolution, tol: float = 1e-9) -> ProfileBounds:
    """Realised c0 = min phi, c1 = max r*tau, and the e0 sandwich constants."""
    if sol.kind != "neumann-mode":
        raise ConfigError("check_profile_bounds expects a neumann-mode solution")
    phi = sol.phi_grid
    c0, pmax = float(phi.min()), float(phi.max())
    c1 = float(np.max(sol.r * (1.0 - phi)))
    if pmax > 1.0 + tol or c0 <= 0.0:
        raise VerificationError(f"profile bounds violated: min phi={c0}, max phi={pmax}")
    a = sol.scattering_length
    if a > 0.0:
        ratio = sol.eigenvalue * sol.kappa**3 / (3.0 * a)
        C = sol.kappa * (ratio - 1.0)
    else:
        ratio, C = 1.0, 0.0
    return ProfileBounds(c0, pmax, max(c1, 0.0), sol.kappa, ratio, C)
