import math

import numpy as np
import pytest

from bosebound.errors import ConfigError
from bosebound.oracle import (
    DiscretizedHamiltonian,
    ground_state,
    identity_refinement,
    periodic_pair_energy,
    radial_neumann_e0,
    second_difference,
    substitution_identity_check,
    temple_vs_exact,
)
from bosebound.rng import stream
from bosebound.twobody import PotentialSpec, scattering_length, solve_neumann_mode

GAUSS = PotentialSpec("gaussian", 10.0, 0.5)
BUMP = PotentialSpec("smooth-bump", 20.0, 1.0)


def test_operator_symmetric():
    ham = DiscretizedHamiltonian(3.0, 5, "neumann", 2, BUMP)
    H = ham.matrix
    assert abs(H - H.T).max() < 1e-12


@pytest.mark.parametrize("bc", ["neumann", "periodic", "dirichlet"])
def test_second_difference_spectrum(bc):
    M, h = 12, 0.3
    w = np.sort(np.linalg.eigvalsh(-second_difference(M, h, bc).toarray()))
    k = np.arange(M)
    exact = {
        "neumann": 4 / h**2 * np.sin(math.pi * k / (2 * M)) ** 2,
        "periodic": 4 / h**2 * np.sin(math.pi * k / M) ** 2,
        "dirichlet": 4 / h**2 * np.sin(math.pi * (k + 1) / (2 * M)) ** 2,
    }[bc]
    np.testing.assert_allclose(w, np.sort(exact), atol=1e-10)


def test_free_neumann_cube():
    ell, M = 2.0, 12
    eig = ground_state(DiscretizedHamiltonian(ell, M, "neumann", 1), k=2)
    assert abs(eig.E0) < 1e-10
    h = ell / M
    assert eig.E1 == pytest.approx(4 / h**2 * math.sin(math.pi / (2 * M)) ** 2, rel=1e-10)
    assert eig.E1 == pytest.approx(math.pi**2 / ell**2, rel=0.01)


def test_bad_inputs():
    with pytest.raises(ConfigError):
        DiscretizedHamiltonian(1.0, 4, "neumann", 4)
    with pytest.raises(ConfigError):
        DiscretizedHamiltonian(1.0, 4, "neumann", 2, relative=True)


def test_radial_fd_matches_shooting():
    for pot in (PotentialSpec("square-barrier", 50.0, 1.0), BUMP):
        kappa = 4 * pot.support_radius
        fd = radial_neumann_e0(pot, kappa, 256)
        assert fd == pytest.approx(solve_neumann_mode(pot, kappa).eigenvalue, rel=5e-3)


def test_radial_fd_free_is_zero():
    assert abs(radial_neumann_e0(PotentialSpec("gaussian", 0.0, 1.0), 30.0)) < 1e-10


def test_periodic_pair_energy_scale():
    a = scattering_length(GAUSS)
    L = 20 * a
    E0, ham, eig = periodic_pair_energy(GAUSS, L, points=32)
    ratio = E0 / (8 * math.pi * a / L**3)
    assert 0.75 <= ratio <= 1.25
    assert eig.residuals[0] <= 1e-6


def test_grid_convergence_second_order():
    # three grids on a wide gaussian: successive differences fall by ~4
    pot = PotentialSpec("gaussian", 2.0, 1.0, 1e-8)
    E = [ground_state(DiscretizedHamiltonian(12.0, M, "periodic", 2, pot, relative=True)).E0
         for M in (12, 24, 48)]
    rate = (E[0] - E[1]) / (E[1] - E[2])
    assert 3.0 < rate < 5.0


def test_bosonic_ground_state_symmetric():
    ham = DiscretizedHamiltonian(3.0, 5, "neumann", 2, BUMP)
    eig = ground_state(ham)
    v = eig.ground
    for P in ham.swap_matrices:
        assert np.max(np.abs(P @ v - v)) < 1e-8 or np.max(np.abs(P @ v + v)) < 1e-8
    v = v * np.sign(v.sum())
    np.testing.assert_allclose(ham.symmetrize(v), v, atol=1e-8)


def test_three_particle_symmetry():
    ham = DiscretizedHamiltonian(3.0, 4, "periodic", 3, BUMP)
    assert len(ham.swap_matrices) == 5
    v = ground_state(ham).ground
    v = v * np.sign(v.sum())
    np.testing.assert_allclose(ham.symmetrize(v), v, atol=1e-8)


def test_boundary_condition_ordering():
    E = {bc: ground_state(DiscretizedHamiltonian(3.0, 5, bc, 2, BUMP)).E0
         for bc in ("neumann", "periodic", "dirichlet")}
    assert E["neumann"] <= E["periodic"] <= E["dirichlet"]


def test_penalty_projects_onto_bosons():
    ham = DiscretizedHamiltonian(3.0, 4, "neumann", 2, BUMP, penalty=1e3)
    v = ground_state(ham).ground
    v = v * np.sign(v.sum())
    np.testing.assert_allclose(ham.symmetrize(v), v, atol=1e-8)


def test_identity_psi_equals_W():
    sol = solve_neumann_mode(GAUSS, 4 * GAUSS.support_radius)
    chk = substitution_identity_check(sol, 24, probes=3, rng=stream(0, "tests", 20))
    assert chk.w_self_residual < 1e-10


def test_identity_free_is_exact():
    sol = solve_neumann_mode(PotentialSpec("smooth-bump", 0.0, 1.0), 8.0)
    chk = substitution_identity_check(sol, 16, probes=5, rng=stream(0, "tests", 21))
    assert chk.max_residual < 1e-12


def test_identity_refinement():
    sol = solve_neumann_mode(BUMP, 4.0)
    a, b, ratio = identity_refinement(sol, 16, probes=20, seed_rng=lambda: stream(1, "tests", 22))
    assert ratio >= 2.0 and len(a.residuals) == 20


def _pair_instance():
    ham = DiscretizedHamiltonian(6.0, 12, "periodic", 2, BUMP, relative=True)
    return ham, ground_state(ham, k=2)


def test_temple_exact_ground_vector():
    ham, eig = _pair_instance()
    cmp = temple_vs_exact(ham, eig.ground, eig)
    assert cmp.result.applicable
    assert abs(cmp.slack) < 1e-8
    assert cmp.result.bound <= cmp.E0 + 1e-10


def test_temple_random_trials():
    ham, eig = _pair_instance()
    rng = stream(2, "tests", 23)
    g = eig.ground * np.sign(eig.ground.sum())
    for _ in range(50):
        trial = g + rng.uniform(0, 0.3) * rng.normal(size=ham.dim) / math.sqrt(ham.dim)
        cmp = temple_vs_exact(ham, trial, eig)
        assert cmp.mean >= cmp.E0 - 1e-12
        if cmp.result.applicable:
            assert cmp.result.bound <= cmp.E0 + 1e-12


def test_temple_W_ansatz_scale():
    # L = 30a keeps the finite-size shift of E0 (about 1 + 2.84 a/L) inside the band
    a = scattering_length(BUMP)
    L = 30 * a
    E0, ham, _ = periodic_pair_energy(BUMP, L, points=36)
    eig = ground_state(ham, k=2)
    sol = solve_neumann_mode(BUMP, 4 * BUMP.support_radius)
    r = np.sqrt(sum(c * c for c in np.meshgrid(*[ham.axis] * 3, indexing="ij"))).ravel()
    trial = 1 - sol.tau(r)
    cmp = temple_vs_exact(ham, trial, eig)
    assert cmp.result.applicable and cmp.slack > 0
    assert 0.5 <= cmp.result.bound / (8 * math.pi * a / L**3) <= 1.1
