"""Reduced bases and the joint (state, mesh) minimum-residual ROM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ftrom.conslaw import BurgersConfig
from ftrom.errors import InvalidArgumentError, RomFailureError, SingularMappingError
from ftrom.hdm import (
    residual,
    residual_mesh_jacobian,
    residual_state_jacobian,
    solve_hdm,
)
from ftrom.mesh import MappingDofs, StructuredQuadMesh, check_mapping_validity

logger = logging.getLogger(__name__)

MAX_INVALID_REJECTIONS = 10


# --------------------------------------------------------------------------- snapshots


def align_snapshot(Q, warp_dofs: MappingDofs, mesh: StructuredQuadMesh) -> np.ndarray:
    """Evaluate the fixed-mesh field at the warped cell centers.

    The field is reconstructed bilinearly from the cell averages on the grid of
    reference cell centers; points outside that grid clamp to its edge.
    """
    ok, bad = check_mapping_validity(mesh, warp_dofs)
    if not ok:
        raise SingularMappingError(f"warp inverts {len(bad)} cells")
    C0 = mesh.cell_centers().reshape(mesh.nt, mesh.nx, 2)
    xc, tc = C0[0, :, 0], C0[:, 0, 1]
    interp = RegularGridInterpolator((tc, xc), mesh.grid(np.asarray(Q, dtype=float)), method="linear")
    C = mesh.cell_centers(warp_dofs)
    pts = np.stack([np.clip(C[:, 1], tc[0], tc[-1]), np.clip(C[:, 0], xc[0], xc[-1])], axis=1)
    return interp(pts)


@dataclass(frozen=True)
class SnapshotRecord:
    mu: float
    Q: np.ndarray  # HDM state on the fixed mesh X_h
    dofs: MappingDofs  # x_h(mu) from registration
    Q_aligned: np.ndarray  # state on the reference domain after alignment


@dataclass(frozen=True)
class SnapshotSet:
    mesh: StructuredQuadMesh
    entries: tuple[SnapshotRecord, ...]
    reference_index: int = 0

    def __post_init__(self):
        if not self.entries:
            raise InvalidArgumentError("snapshot set is empty")
        if not 0 <= self.reference_index < len(self.entries):
            raise InvalidArgumentError("reference index out of range")
        identity = [np.array_equal(e.dofs.phys_nodes, self.mesh.ref_nodes) for e in self.entries]
        if not identity[self.reference_index] or sum(identity) != 1:
            raise InvalidArgumentError("exactly one snapshot, the reference, must have x_h = X_h")

    @property
    def mus(self) -> np.ndarray:
        return np.array([e.mu for e in self.entries])

    @property
    def reference(self) -> SnapshotRecord:
        return self.entries[self.reference_index]

    def matrix(self, aligned: bool = True) -> np.ndarray:
        return np.stack([e.Q_aligned if aligned else e.Q for e in self.entries], axis=1)


def aligned_state(Q, dofs: MappingDofs, mesh, cfg: BurgersConfig, resolve: bool = True) -> np.ndarray:
    """Aligned snapshot: interpolated onto the warped mesh, optionally re-converged there.

    Re-converging makes the aligned snapshot an exact discrete solution on
    ``x_h(mu)``, so the ROM residual vanishes at training parameters.
    """
    if np.array_equal(dofs.phys_nodes, mesh.ref_nodes):
        return np.array(Q, dtype=float)
    Q_int = align_snapshot(Q, dofs, mesh)
    return solve_hdm(mesh, cfg, dofs=dofs, Q0=Q_int) if resolve else Q_int


# --------------------------------------------------------------------------- bases


@dataclass(frozen=True)
class PodBasis:
    Phi: np.ndarray
    singular_values: np.ndarray


def pod(matrix, n_q: int) -> PodBasis:
    """Leading ``n_q`` left singular vectors of ``matrix`` and its full spectrum."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2:
        raise InvalidArgumentError("snapshot matrix must be 2-D")
    if not 0 <= n_q <= A.shape[1]:
        raise InvalidArgumentError(f"n_q={n_q} must lie in [0, {A.shape[1]}]")
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    return PodBasis(U[:, :n_q].copy(), s)


def build_pod(snapshots: SnapshotSet, Qr, n_q: int, aligned: bool = True) -> PodBasis:
    """POD of the perturbations ``Q_i - Qr`` (aligned states by default)."""
    A = snapshots.matrix(aligned) - np.asarray(Qr, dtype=float)[:, None]
    return pod(A, n_q)


def build_mesh_basis(snapshots: SnapshotSet) -> np.ndarray:
    """Columns ``x_h(mu_i) - X_h`` of all non-reference snapshots, unorthogonalized."""
    X = snapshots.mesh.ref_nodes.reshape(-1)
    cols = [e.dofs.flat - X for k, e in enumerate(snapshots.entries) if k != snapshots.reference_index]
    if not cols:
        return np.zeros((X.size, 0))
    return np.stack(cols, axis=1)


def mesh_training_coordinates(snapshots: SnapshotSet) -> np.ndarray:
    """Coordinates of each training warp in the mesh basis (reference at the origin)."""
    n = len(snapshots.entries)
    Y = np.zeros((n, n - 1))
    col = 0
    for k in range(n):
        if k != snapshots.reference_index:
            Y[k, col] = 1.0
            col += 1
    return Y


def build_theta(mesh: StructuredQuadMesh, weight_set=None, omega: float = 1.0) -> np.ndarray:
    """Diagonal residual weights: ``sqrt(omega)`` on the flagged cells, 1 elsewhere.

    The weighted norm is ``||theta * R||``, so flagged entries enter the squared
    norm with weight ``omega``.
    """
    if not omega > 0:
        raise InvalidArgumentError("omega must be positive")
    theta = np.ones(mesh.n_cells)
    if weight_set is not None:
        idx = np.asarray(weight_set)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        theta[idx] = np.sqrt(omega)
    return theta


def weighted_norm(R, theta=None) -> float:
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R if theta is None else np.asarray(theta) * R))


@dataclass(frozen=True)
class RomBases:
    Phi: np.ndarray  # (N, n_q)
    Qr: np.ndarray  # (N,)
    Psi: np.ndarray  # (N_x, n_x)
    Theta: np.ndarray  # (N,) diagonal weights
    mu_train: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_train: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    a_train: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # Phi^T (Q_i - Qr) per snapshot

    def __post_init__(self):
        if self.Phi.ndim != 2 or self.Psi.ndim != 2:
            raise InvalidArgumentError("bases must be 2-D")
        if self.Phi.shape[0] != self.Qr.size or self.Theta.size != self.Qr.size:
            raise InvalidArgumentError("state basis, reference state and weights differ in length")
        if np.any(self.Theta <= 0):
            raise InvalidArgumentError("weights must be positive")

    @property
    def n_q(self) -> int:
        return self.Phi.shape[1]

    @property
    def n_x(self) -> int:
        return self.Psi.shape[1]


def build_rom_bases(
    snapshots: SnapshotSet,
    n_q: int,
    state_snapshots: list[int] | None = None,
    Qr=None,
    theta=None,
) -> RomBases:
    """State POD over ``state_snapshots`` (all by default) and the full mesh basis."""
    mesh = snapshots.mesh
    Qr = np.zeros(mesh.n_cells) if Qr is None else np.asarray(Qr, dtype=float)
    sub = snapshots.entries if state_snapshots is None else [snapshots.entries[i] for i in state_snapshots]
    A = np.stack([e.Q_aligned for e in sub], axis=1) - Qr[:, None]
    basis = pod(A, n_q)
    return RomBases(
        Phi=basis.Phi,
        Qr=Qr,
        Psi=build_mesh_basis(snapshots),
        Theta=np.ones(mesh.n_cells) if theta is None else np.asarray(theta, dtype=float),
        mu_train=snapshots.mus,
        y_train=mesh_training_coordinates(snapshots),
        singular_values=basis.singular_values,
        a_train=(snapshots.matrix(aligned=True) - Qr[:, None]).T @ basis.Phi,
    )


def interpolate_training_coordinates(mu: float, mu_train, y_train) -> np.ndarray:
    """Piecewise-linear interpolation of per-snapshot coordinates in ``mu``, linear beyond the ends."""
    mu_train = np.asarray(mu_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float).reshape(len(mu_train), -1)
    if y_train.shape[1] == 0:
        return np.zeros(0)
    if len(mu_train) == 1:
        return y_train[0].copy()
    order = np.argsort(mu_train, kind="stable")
    m, Y = mu_train[order], y_train[order]
    if mu <= m[0]:
        k = 0
    elif mu >= m[-1]:
        k = len(m) - 2
    else:
        k = int(np.searchsorted(m, mu, side="right")) - 1
    w = (mu - m[k]) / (m[k + 1] - m[k])
    return (1.0 - w) * Y[k] + w * Y[k + 1]


interpolate_mesh_coordinates = interpolate_training_coordinates


def _state_start(mu, bases: RomBases) -> np.ndarray:
    if bases.a_train.shape == (len(bases.mu_train), bases.n_q) and len(bases.mu_train):
        return interpolate_training_coordinates(mu, bases.mu_train, bases.a_train)
    return np.zeros(bases.n_q)


# --------------------------------------------------------------------------- online solve


@dataclass
class LmTrace:
    objectives: list = field(default_factory=list)  # accepted iterates
    lambdas: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)


@dataclass(frozen=True)
class RomSolution:
    mu: float
    a: np.ndarray
    y: np.ndarray
    Q_hat: np.ndarray
    x_hat: np.ndarray
    objective: float
    weighted_norm: float
    converged: bool
    n_iter: int
    reason: str
    trace: LmTrace

    @property
    def dofs(self) -> MappingDofs:
        return MappingDofs.from_flat(self.x_hat)


class LspgProblem:
    """``f(a, y) = 1/2 ||Theta * R(Qr + Phi a; X_h + Psi y, mu)||^2`` and its derivatives."""

    def __init__(self, bases: RomBases, mesh: StructuredQuadMesh, cfg: BurgersConfig, x_base=None):
        if bases.Phi.shape[0] != mesh.n_cells or bases.Psi.shape[0] != mesh.ref_nodes.size:
            raise InvalidArgumentError("bases are inconsistent with the mesh")
        self.bases, self.mesh, self.cfg = bases, mesh, cfg
        self.n_q, self.n_x = bases.n_q, bases.n_x
        # mesh dofs are x_base + Psi y; x_base defaults to the reference nodes
        self.x_base = mesh.ref_nodes.reshape(-1) if x_base is None else np.asarray(x_base, dtype=float)

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[: self.n_q], z[self.n_q :]

    def state(self, a) -> np.ndarray:
        return self.bases.Qr + self.bases.Phi @ a

    def dofs(self, y) -> MappingDofs:
        return MappingDofs.from_flat(self.x_base + self.bases.Psi @ y)

    def valid(self, z) -> bool:
        _, y = self.split(z)
        return check_mapping_validity(self.mesh, self.dofs(y))[0]

    def residual(self, z) -> np.ndarray:
        a, y = self.split(z)
        return self.bases.Theta * residual(self.state(a), self.mesh, self.dofs(y), self.cfg)

    def objective(self, z) -> float:
        r = self.residual(z)
        return 0.5 * float(r @ r)

    def jacobian(self, z) -> np.ndarray:
        a, y = self.split(z)
        Q, dofs = self.state(a), self.dofs(y)
        cols = []
        if self.n_q:
            cols.append(residual_state_jacobian(Q, self.mesh, dofs, self.cfg) @ self.bases.Phi)
        if self.n_x:
            cols.append(residual_mesh_jacobian(Q, self.mesh, dofs, self.cfg, basis=self.bases.Psi))
        if not cols:
            return np.zeros((self.mesh.n_cells, 0))
        return self.bases.Theta[:, None] * np.concatenate(cols, axis=1)

    def gradient(self, z) -> np.ndarray:
        return self.jacobian(z).T @ self.residual(z)


def levenberg_marquardt(
    problem: LspgProblem,
    z0,
    lam0: float = 1e-4,
    max_iter: int = 100,
    ftol: float = 1e-8,
    gtol: float = 1e-8,
    xtol: float = 1e-10,
):
    """Damped Gauss-Newton with Marquardt diagonal scaling.

    Returns ``(z, objective, converged, n_iter, reason, trace)``.  Trial points
    whose mesh is invalid count as rejected steps.
    """
    z = np.array(z0, dtype=float)
    trace = LmTrace()
    if not problem.valid(z):
        raise RomFailureError("initial mesh coordinates give an invalid mapping")
    r = problem.residual(z)
    f = 0.5 * float(r @ r)
    trace.objectives.append(f)
    if z.size == 0:
        return z, f, True, 0, "no unknowns", trace
    lam = lam0
    g0 = None
    invalid_run = 0
    J = None
    for it in range(1, max_iter + 1):
        if J is None:
            J = problem.jacobian(z)
            grad = J.T @ r
            JtJ = J.T @ J
        gnorm = float(np.max(np.abs(grad)))
        trace.grad_norms.append(gnorm)
        if g0 is None:
            g0 = gnorm
        if gnorm < gtol * max(1.0, g0):
            return z, f, True, it - 1, "gradient", trace
        d = np.diag(JtJ).copy()
        d[d <= 0.0] = 1.0
        step = np.linalg.solve(JtJ + lam * np.diag(d), -grad)
        if float(np.linalg.norm(step)) < xtol:
            return z, f, True, it - 1, "step", trace
        z_trial = z + step
        trace.lambdas.append(lam)
        if not problem.valid(z_trial):
            invalid_run += 1
            trace.accepted.append(False)
            lam *= 4.0
            if invalid_run >= MAX_INVALID_REJECTIONS:
                raise RomFailureError(f"{invalid_run} consecutive trial steps produced an invalid mapping")
            continue
        invalid_run = 0
        r_trial = problem.residual(z_trial)
        f_trial = 0.5 * float(r_trial @ r_trial)
        if np.isfinite(f_trial) and f_trial < f:
            trace.accepted.append(True)
            decrease = (f - f_trial) / f
            z, r, f = z_trial, r_trial, f_trial
            trace.objectives.append(f)
            lam *= 0.25
            J = None
            if decrease < ftol:
                return z, f, True, it, "objective", trace
        else:
            trace.accepted.append(False)
            lam *= 4.0
    return z, f, False, max_iter, "iteration cap", trace


def _frozen_mesh_start(bases: RomBases, mesh, cfg, a0, y0, **lm) -> np.ndarray:
    """State coefficients fitted with the mesh held at ``y0`` (same solver, no mesh unknowns)."""
    frozen = RomBases(bases.Phi, bases.Qr, np.zeros((bases.Psi.shape[0], 0)), bases.Theta)
    x_base = mesh.ref_nodes.reshape(-1) + bases.Psi @ y0
    a, *_ = levenberg_marquardt(LspgProblem(frozen, mesh, cfg, x_base=x_base), a0, **lm)
    return a


def _solve(mu, bases: RomBases, mesh, cfg: BurgersConfig, a0, y0, warm_start=False, **lm) -> RomSolution:
    cfg = BurgersConfig(cfg.nu, mu)
    problem = LspgProblem(bases, mesh, cfg)
    a0 = np.asarray(a0, dtype=float).reshape(-1)
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if warm_start and bases.n_x and bases.n_q:
        a0 = _frozen_mesh_start(bases, mesh, cfg, a0, y0, **lm)
    z0 = np.concatenate([a0, y0])
    z, f, converged, n_iter, reason, trace = levenberg_marquardt(problem, z0, **lm)
    if not converged:
        logger.warning("ROM at mu=%g stopped at the iteration cap (objective %.3e)", mu, f)
    a, y = problem.split(z)
    return RomSolution(
        mu=float(mu),
        a=a,
        y=y,
        Q_hat=problem.state(a),
        x_hat=problem.dofs(y).flat.copy(),
        objective=f,
        weighted_norm=float(np.sqrt(2.0 * f)),
        converged=converged,
        n_iter=n_iter,
        reason=reason,
        trace=trace,
    )


def _pull_back_to_valid(problem: LspgProblem, y0, anchor, n_bisect: int = 30) -> np.ndarray:
    """Largest fraction of the segment ``anchor -> y0`` whose end gives a valid mesh."""
    a = np.zeros(problem.n_q)
    if problem.valid(np.concatenate([a, y0])):
        return y0
    lo, hi = 0.0, 1.0
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if problem.valid(np.concatenate([a, anchor + mid * (y0 - anchor)])):
            lo = mid
        else:
            hi = mid
    # keep a margin from the first inverted cell
    lo *= 0.95
    logger.info("interpolated mesh start invalid; pulled back to fraction %.4f", lo)
    return anchor + lo * (y0 - anchor)


def solve_rom(mu: float, bases: RomBases, mesh: StructuredQuadMesh, cfg: BurgersConfig, init=None, **lm) -> RomSolution:
    """Minimize the weighted residual jointly over state and mesh coefficients.

    Default start: ``y`` interpolated from the training mesh coordinates in
    ``mu`` and ``a`` fitted from zero with the mesh frozen there; the joint
    solve then starts from that pair.  An extrapolated ``y`` that inverts cells
    is pulled back toward the nearest training coordinate until the mesh is valid.
    """
    if init is None:
        a0 = _state_start(mu, bases)
        if bases.n_x and len(bases.mu_train):
            y0 = interpolate_mesh_coordinates(mu, bases.mu_train, bases.y_train)
            nearest = bases.y_train[int(np.argmin(np.abs(bases.mu_train - mu)))]
            y0 = _pull_back_to_valid(LspgProblem(bases, mesh, cfg), y0, nearest)
        else:
            y0 = np.zeros(bases.n_x)
        return _solve(mu, bases, mesh, cfg, a0, y0, warm_start=True, **lm)
    a0, y0 = init
    return _solve(mu, bases, mesh, cfg, a0, y0, **lm)


def build_fixed_mesh_bases(Q_train, mus, n_q: int, Qr=None, theta=None) -> RomBases:
    """POD of unaligned snapshots (columns of ``Q_train``) with no mesh unknowns."""
    Q_train = np.asarray(Q_train, dtype=float)
    Qr = np.zeros(Q_train.shape[0]) if Qr is None else np.asarray(Qr, dtype=float)
    basis = pod(Q_train - Qr[:, None], n_q)
    return RomBases(
        Phi=basis.Phi,
        Qr=Qr,
        Psi=np.zeros((0, 0)),
        Theta=np.ones(Qr.size) if theta is None else np.asarray(theta, dtype=float),
        mu_train=np.asarray(mus, dtype=float),
        y_train=np.zeros((len(mus), 0)),
        singular_values=basis.singular_values,
        a_train=(Q_train - Qr[:, None]).T @ basis.Phi,
    )


def fixed_mesh_rom(
    mu: float, Phi, Qr, mesh: StructuredQuadMesh, cfg: BurgersConfig, theta=None, mu_train=None, a_train=None, **lm
) -> RomSolution:
    """The same solver with the mesh frozen at ``X_h``.

    With training coefficients given, ``a`` starts from their interpolation
    in ``mu``; otherwise from zero.
    """
    Phi = np.asarray(Phi, dtype=float).reshape(mesh.n_cells, -1)
    mu_train = np.zeros(0) if mu_train is None else np.asarray(mu_train, dtype=float)
    bases = RomBases(
        Phi=Phi,
        Qr=np.asarray(Qr, dtype=float),
        Psi=np.zeros((mesh.ref_nodes.size, 0)),
        Theta=np.ones(mesh.n_cells) if theta is None else np.asarray(theta, dtype=float),
        mu_train=mu_train,
        a_train=np.zeros((0, 0)) if a_train is None else np.asarray(a_train, dtype=float).reshape(len(mu_train), -1),
    )
    return _solve(mu, bases, mesh, cfg, _state_start(mu, bases), np.zeros(0), **lm)


def solve_fixed_mesh(mu: float, bases: RomBases, mesh: StructuredQuadMesh, cfg: BurgersConfig, **lm) -> RomSolution:
    return fixed_mesh_rom(mu, bases.Phi, bases.Qr, mesh, cfg, bases.Theta, bases.mu_train, bases.a_train, **lm)


# --------------------------------------------------------------------------- errors


def cell_areas(mesh: StructuredQuadMesh, dofs: MappingDofs | None = None) -> np.ndarray:
    nodes = mesh.ref_nodes if dofs is None else dofs.phys_nodes
    p = nodes[mesh.cells]
    x, y = p[..., 0], p[..., 1]
    return 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1))


def relative_l2_error(Q, dofs: MappingDofs | None, Q_truth, mesh: StructuredQuadMesh) -> float:
    """Area-weighted relative L2 error against a fixed-mesh truth field.

    The truth is evaluated at the physical cell centers of ``(Q, dofs)`` by the
    same bilinear reconstruction used for alignment.
    """
    dofs = mesh.identity_dofs() if dofs is None else dofs
    truth = align_snapshot(Q_truth, dofs, mesh)
    w = cell_areas(mesh, dofs)
    return float(np.sqrt(np.sum(w * (Q - truth) ** 2) / np.sum(w * truth**2)))
