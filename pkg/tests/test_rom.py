import numpy as np
import pytest
from conftest import NU, smooth_warp
from hypothesis import given
from hypothesis import strategies as st

from ftrom.conslaw import BurgersConfig
from ftrom.errors import InvalidArgumentError, RomFailureError, SingularMappingError
from ftrom.hdm import residual, solve_hdm
from ftrom.mesh import MappingDofs, build_rect_mesh
from ftrom.rom import (
    LspgProblem,
    RomBases,
    SnapshotRecord,
    SnapshotSet,
    align_snapshot,
    aligned_state,
    build_fixed_mesh_bases,
    build_mesh_basis,
    build_rom_bases,
    build_theta,
    interpolate_training_coordinates,
    levenberg_marquardt,
    mesh_training_coordinates,
    pod,
    relative_l2_error,
    solve_fixed_mesh,
    solve_rom,
    weighted_norm,
)


@pytest.fixture(scope="module")
def toy():
    """Small mesh, two snapshots, a synthetic warp for the second one."""
    m = build_rect_mesh(20, 10)
    Q1 = solve_hdm(m, BurgersConfig(NU, 0.5))
    Q2 = solve_hdm(m, BurgersConfig(NU, 1.0))
    dofs = smooth_warp(m, amplitude=0.3, seed=2)
    Q2a = aligned_state(Q2, dofs, m, BurgersConfig(NU, 1.0))
    snaps = SnapshotSet(m, (SnapshotRecord(0.5, Q1, m.identity_dofs(), Q1), SnapshotRecord(1.0, Q2, dofs, Q2a)), 0)
    return m, snaps


# --------------------------------------------------------------------------- bases


@given(st.integers(1, 6), st.integers(0, 1000))
def test_pod_is_orthonormal(n_q, seed):
    A = np.random.default_rng(seed).standard_normal((50, 6))
    Phi = pod(A, n_q).Phi
    assert np.max(np.abs(Phi.T @ Phi - np.eye(n_q))) < 1e-12


def test_pod_spectrum_and_bounds():
    A = np.outer(np.arange(5.0), [1.0, 2.0])
    b = pod(A, 1)
    assert b.singular_values[1] < 1e-12 * b.singular_values[0]
    assert pod(A, 0).Phi.shape == (5, 0)
    with pytest.raises(InvalidArgumentError):
        pod(A, 3)
    with pytest.raises(InvalidArgumentError):
        pod(np.ones(3), 1)


def test_snapshot_set_requires_single_identity_reference(toy):
    m, snaps = toy
    e0, e1 = snaps.entries
    with pytest.raises(InvalidArgumentError):
        SnapshotSet(m, (e0, e1), 1)
    with pytest.raises(InvalidArgumentError):
        SnapshotSet(m, (e0, e0), 0)
    with pytest.raises(InvalidArgumentError):
        SnapshotSet(m, (), 0)


def test_mesh_basis_and_training_coordinates(toy):
    m, snaps = toy
    Psi = build_mesh_basis(snaps)
    assert Psi.shape == (m.ref_nodes.size, 1)
    assert np.array_equal(Psi[:, 0], snaps.entries[1].dofs.flat - m.ref_nodes.reshape(-1))
    Y = mesh_training_coordinates(snaps)
    assert np.array_equal(Y, [[0.0], [1.0]])
    # each training warp is reproduced exactly by its coordinates
    for e, y in zip(snaps.entries, Y):
        assert np.array_equal(m.ref_nodes.reshape(-1) + Psi @ y, e.dofs.flat)


def test_interpolation_of_training_coordinates():
    mus, Y = [0.5, 1.0], np.array([[0.0], [1.0]])
    assert interpolate_training_coordinates(0.75, mus, Y) == pytest.approx([0.5])
    assert interpolate_training_coordinates(2.0, mus, Y) == pytest.approx([3.0])
    assert interpolate_training_coordinates(0.0, mus, Y) == pytest.approx([-1.0])
    assert interpolate_training_coordinates(0.7, [0.5], [[0.2]]) == pytest.approx([0.2])
    # unsorted training parameters
    assert interpolate_training_coordinates(0.75, [1.0, 0.5], [[1.0], [0.0]]) == pytest.approx([0.5])


# --------------------------------------------------------------------------- weights


def test_theta_with_synthetic_masks():
    m = build_rect_mesh(6, 4)
    mask = np.zeros(m.n_cells, dtype=bool)
    mask[[3, 7, 11]] = True
    theta = build_theta(m, mask, omega=9.0)
    assert np.array_equal(np.flatnonzero(theta != 1.0), [3, 7, 11]) and np.all(theta[mask] == 3.0)
    assert np.array_equal(build_theta(m, [3, 7, 11], 9.0), theta)
    R = np.ones(m.n_cells)
    # squared weighted norm = sum over cells of omega_i R_i^2
    assert weighted_norm(R, theta) ** 2 == pytest.approx(m.n_cells - 3 + 3 * 9.0)
    assert weighted_norm(R) == pytest.approx(np.sqrt(m.n_cells))
    assert np.array_equal(build_theta(m), np.ones(m.n_cells))
    with pytest.raises(InvalidArgumentError):
        build_theta(m, mask, omega=0.0)


@given(st.floats(0.1, 100.0), st.integers(0, 1000))
def test_weighted_norm_emphasizes_flagged_cells(omega, seed):
    rng = np.random.default_rng(seed)
    m = build_rect_mesh(5, 5)
    mask = rng.random(m.n_cells) < 0.3
    R = rng.standard_normal(m.n_cells)
    theta = build_theta(m, mask, omega)
    expected = np.sqrt(np.sum(np.where(mask, omega, 1.0) * R**2))
    assert weighted_norm(R, theta) == pytest.approx(expected, rel=1e-12)


def test_rom_bases_validation(toy):
    m, _ = toy
    with pytest.raises(InvalidArgumentError):
        RomBases(np.ones((m.n_cells, 1)), np.zeros(3), np.zeros((0, 0)), np.ones(3))
    with pytest.raises(InvalidArgumentError):
        RomBases(np.ones((3, 1)), np.zeros(3), np.zeros((0, 0)), np.array([1.0, 0.0, 1.0]))


# --------------------------------------------------------------------------- alignment and errors


def test_align_snapshot_identity_and_invalid(toy):
    m, snaps = toy
    Q = snaps.entries[1].Q
    assert np.allclose(align_snapshot(Q, m.identity_dofs(), m), Q, atol=1e-14)
    nodes = m.ref_nodes.copy()
    nodes[int(m.node_index(5, 5)), 0] += 3 * m.hx
    with pytest.raises(SingularMappingError):
        align_snapshot(Q, MappingDofs(nodes), m)


def test_aligned_state_is_discrete_solution_on_warp(toy):
    m, snaps = toy
    e = snaps.entries[1]
    R = residual(e.Q_aligned, m, e.dofs, BurgersConfig(NU, 1.0))
    assert np.linalg.norm(R) < 1e-8


def test_relative_l2_error_zero_for_truth(toy):
    m, snaps = toy
    Q = snaps.entries[0].Q
    assert relative_l2_error(Q, None, Q, m) == pytest.approx(0.0, abs=1e-14)
    assert relative_l2_error(2 * Q, None, Q, m) == pytest.approx(1.0)


# --------------------------------------------------------------------------- LSPG


def test_lspg_gradient_matches_finite_differences(toy):
    m, snaps = toy
    bases = build_rom_bases(snaps, 2, theta=build_theta(m, np.arange(m.n_cells) % 3 == 0, 4.0))
    prob = LspgProblem(bases, m, BurgersConfig(NU, 0.75))
    z = np.concatenate([bases.a_train.mean(axis=0), [0.4]])
    g = prob.gradient(z)
    g_fd = np.empty_like(z)
    for k in range(z.size):
        h = 1e-6 * max(1.0, abs(z[k]))
        e = np.zeros_like(z)
        e[k] = h
        g_fd[k] = (prob.objective(z + e) - prob.objective(z - e)) / (2 * h)
    assert np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd) < 1e-5


class _Quadratic:
    """``f = 1/2 |A z - b|^2`` in the LspgProblem interface."""

    def __init__(self, A, b, valid=lambda z: True):
        self.A, self.b, self._valid = A, b, valid

    def valid(self, z):
        return self._valid(z)

    def residual(self, z):
        return self.A @ z - self.b

    def jacobian(self, z):
        return self.A

    def objective(self, z):
        r = self.residual(z)
        return 0.5 * r @ r


def test_levenberg_marquardt_solves_least_squares():
    rng = np.random.default_rng(0)
    A, b = rng.standard_normal((20, 3)), rng.standard_normal(20)
    z, _, converged, _, _, trace = levenberg_marquardt(_Quadratic(A, b), np.zeros(3))
    assert converged
    assert np.allclose(z, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-6)
    assert all(b2 <= a2 for a2, b2 in zip(trace.objectives, trace.objectives[1:]))


def test_levenberg_marquardt_invalid_region_handling():
    A, b = np.eye(2), np.array([5.0, 0.0])
    with pytest.raises(RomFailureError):
        levenberg_marquardt(_Quadratic(A, b, valid=lambda z: z[0] < 1.0), np.array([2.0, 0.0]))
    # a wall between start and optimum: repeated invalid trials end in a failure
    with pytest.raises(RomFailureError):
        levenberg_marquardt(_Quadratic(A, b, valid=lambda z: z[0] < 1.0), np.zeros(2), lam0=0.0)
    # a partially blocked path converges to the constrained side
    z, *_ = levenberg_marquardt(_Quadratic(A, b, valid=lambda z: z[0] < 1.0), np.zeros(2))
    assert z[0] < 1.0


def test_rom_reproduces_training_snapshots(toy):
    m, snaps = toy
    bases = build_rom_bases(snaps, 2)
    for e in snaps.entries:
        sol = solve_rom(e.mu, bases, m, BurgersConfig(NU, e.mu))
        assert np.linalg.norm(sol.Q_hat - e.Q_aligned) / np.linalg.norm(e.Q_aligned) < 1e-6
        assert np.allclose(sol.x_hat, e.dofs.flat, atol=1e-8)


def test_rom_recovers_training_snapshot_from_perturbed_start(toy):
    m, snaps = toy
    bases = build_rom_bases(snaps, 2)
    e = snaps.entries[1]
    a0 = bases.a_train[1] * 1.05
    sol = solve_rom(1.0, bases, m, BurgersConfig(NU, 1.0), init=(a0, np.array([0.9])))
    assert sol.converged
    assert np.linalg.norm(sol.Q_hat - e.Q_aligned) / np.linalg.norm(e.Q_aligned) < 1e-5
    assert sol.objective < 1e-12


def test_fixed_mesh_rom_reproduces_unaligned_snapshots(toy):
    m, snaps = toy
    fb = build_fixed_mesh_bases(snaps.matrix(aligned=False), snaps.mus, 2)
    for e in snaps.entries:
        sol = solve_fixed_mesh(e.mu, fb, m, BurgersConfig(NU, e.mu))
        assert sol.y.size == 0 and np.array_equal(sol.x_hat, m.ref_nodes.reshape(-1))
        assert np.linalg.norm(sol.Q_hat - e.Q) / np.linalg.norm(e.Q) < 1e-6


def test_rom_objective_not_above_start(toy):
    m, snaps = toy
    bases = build_rom_bases(snaps, 1, state_snapshots=[0])
    sol = solve_rom(0.75, bases, m, BurgersConfig(NU, 0.75))
    assert sol.trace.objectives[-1] <= sol.trace.objectives[0]
    assert sol.weighted_norm == pytest.approx(np.sqrt(2 * sol.objective))
