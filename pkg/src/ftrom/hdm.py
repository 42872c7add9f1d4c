"""First-order finite-volume discretization of space-time Burgers on a warped mesh.

Every cell of the (possibly warped) quadrilateral mesh is a control volume in
the ``(x, t)`` plane.  The residual of a cell is the sum over its four faces of
the outward numerical flux times face length:

* inviscid part: Rusanov flux of ``(q^2/2, q)`` with the wave speed taken along
  the face normal, ``max(|n_x q_L + n_t|, |n_x q_R + n_t|)``.  On an unwarped
  mesh this is ``max(|q_L|, |q_R|)`` on x-faces and pure upwinding in ``+t`` on
  t-faces.
* viscous part: ``nu q_x n_x`` with ``q_x`` from a two-point difference between
  neighbouring cell centers (no cross-diffusion correction on skewed cells).

Boundary closure: Dirichlet ``q = mu`` on the left column of faces, Dirichlet
initial data on the bottom row, copy-out ghosts on the right and top.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ftrom.conslaw import (
    BurgersConfig,
    initial_average,
    pullback_gradient,
    transform_flux,
)
from ftrom.errors import (
    InvalidArgumentError,
    NotFoundError,
    SingularMappingError,
    SolverFailureError,
)
from ftrom.mesh import (
    MappingDofs,
    MappingJacobian,
    StructuredQuadMesh,
    cell_jacobians,
    check_mapping_validity,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FaceGeometry:
    """Per-face area vectors and viscous coefficients.

    x-faces are indexed ``(j, i)`` with ``i = 0..nx`` (``i = 0`` is the left
    boundary); t-faces are indexed ``(j, i)`` with ``j = 0..nt``.  ``n`` is the
    normal scaled by face length, pointing from the lower-index cell to the
    higher one.  ``c`` maps a state jump across the face to ``q_x``.
    """

    n_x: np.ndarray  # (nt, nx+1, 2)
    c_x: np.ndarray  # (nt, nx+1)
    n_t: np.ndarray  # (nt+1, nx, 2)
    c_t: np.ndarray  # (nt+1, nx)
    bottom_x: np.ndarray  # (nx + 1,) x-coordinates of the bottom-boundary nodes


@dataclass
class ResidualReport:
    residual: np.ndarray
    norm: float
    weighted_norm: float | None = None


@dataclass
class NewtonTrace:
    norms: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    accepted: list = field(default_factory=list)


def _node_grid(mesh: StructuredQuadMesh, dofs: MappingDofs) -> np.ndarray:
    if dofs.phys_nodes.shape != mesh.ref_nodes.shape:
        raise InvalidArgumentError("dofs do not match the mesh")
    return dofs.phys_nodes.reshape(mesh.nt + 1, mesh.nx + 1, 2)


def _two_point_coeff(d: np.ndarray) -> np.ndarray:
    return d[..., 0] / (d[..., 0] ** 2 + d[..., 1] ** 2)


def _center_differences(P: np.ndarray):
    C = 0.25 * (P[:-1, :-1] + P[:-1, 1:] + P[1:, 1:] + P[1:, :-1])
    mid_x = 0.5 * (P[:-1, :] + P[1:, :])  # (nt, nx+1, 2)
    mid_t = 0.5 * (P[:, :-1] + P[:, 1:])  # (nt+1, nx, 2)
    d_x = np.empty_like(mid_x)
    d_x[:, 1:-1] = C[:, 1:] - C[:, :-1]
    d_x[:, 0] = C[:, 0] - mid_x[:, 0]
    d_x[:, -1] = mid_x[:, -1] - C[:, -1]
    d_t = np.empty_like(mid_t)
    d_t[1:-1] = C[1:] - C[:-1]
    d_t[0] = C[0] - mid_t[0]
    d_t[-1] = mid_t[-1] - C[-1]
    return d_x, d_t, mid_t


def face_geometry(mesh: StructuredQuadMesh, dofs: MappingDofs) -> FaceGeometry:
    """Geometry assembled directly on the physical (warped) cells."""
    P = _node_grid(mesh, dofs)
    e_x = P[1:, :] - P[:-1, :]
    n_x = np.stack([e_x[..., 1], -e_x[..., 0]], axis=-1)
    e_t = P[:, 1:] - P[:, :-1]
    n_t = np.stack([-e_t[..., 1], e_t[..., 0]], axis=-1)
    d_x, d_t, _ = _center_differences(P)
    return FaceGeometry(n_x, _two_point_coeff(d_x), n_t, _two_point_coeff(d_t), P[0, :, 0].copy())


def face_geometry_reference(mesh: StructuredQuadMesh, dofs: MappingDofs) -> FaceGeometry:
    """Same geometry obtained by transforming reference-domain quantities.

    Face fluxes are evaluated as ``F . N`` with ``F = g f G^{-T}`` and the
    viscous gradient is pulled back from a reference two-point difference.
    Area vectors agree with :func:`face_geometry` to rounding on any bilinear
    map (Nanson's relation holds exactly on straight faces).  Viscous
    coefficients coincide on the identity map only: on skewed cells the
    pulled-back reference difference and the physical two-point difference
    are different consistent approximations of ``q_x``.
    """
    P = _node_grid(mesh, dofs)
    nx, nt = mesh.nx, mesh.nt
    R = mesh.ref_nodes.reshape(nt + 1, nx + 1, 2)
    d_x_ref, d_t_ref, _ = _center_differences(R)

    # Jacobians at face midpoints, from the cell on the high side when it exists
    G_w = cell_jacobians(mesh, dofs, 0.0, 0.5).reshape(nt, nx, 2, 2)
    G_e = cell_jacobians(mesh, dofs, 1.0, 0.5).reshape(nt, nx, 2, 2)
    G_s = cell_jacobians(mesh, dofs, 0.5, 0.0).reshape(nt, nx, 2, 2)
    G_n = cell_jacobians(mesh, dofs, 0.5, 1.0).reshape(nt, nx, 2, 2)
    Gx = np.concatenate([G_w, G_e[:, -1:]], axis=1)
    Gt = np.concatenate([G_s, G_n[-1:]], axis=0)

    def jac(G):
        return MappingJacobian(G, G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0])

    Jx, Jt = jac(Gx), jac(Gt)
    # F . N for the unit fluxes e_x, e_t gives the effective physical area vector
    unit = np.eye(2)
    E_x = R[1:, :] - R[:-1, :]
    N_x = np.stack([E_x[..., 1], -E_x[..., 0]], axis=-1)
    E_t = R[:, 1:] - R[:, :-1]
    N_t = np.stack([-E_t[..., 1], E_t[..., 0]], axis=-1)
    n_x = np.einsum("...kl,...l->...k", transform_flux(np.broadcast_to(unit, Gx.shape), Jx), N_x)
    n_t = np.einsum("...kl,...l->...k", transform_flux(np.broadcast_to(unit, Gt.shape), Jt), N_t)

    def coeff(d_ref, J):
        grad_ref = d_ref / (d_ref[..., 0] ** 2 + d_ref[..., 1] ** 2)[..., None]
        return pullback_gradient(grad_ref, J)[..., 0]

    return FaceGeometry(n_x, coeff(d_x_ref, Jx), n_t, coeff(d_t_ref, Jt), P[0, :, 0].copy())


def _face_flux(qL, qR, n, c, nu, derivatives=False):
    nxv, ntv = n[..., 0], n[..., 1]
    lamL = nxv * qL + ntv
    lamR = nxv * qR + ntv
    left_wins = np.abs(lamL) >= np.abs(lamR)
    alpha = np.where(left_wins, np.abs(lamL), np.abs(lamR))
    jump = qR - qL
    visc = nu * nxv * c
    F = 0.5 * ((0.5 * nxv * qL + ntv) * qL + (0.5 * nxv * qR + ntv) * qR) - 0.5 * alpha * jump - visc * jump
    if not derivatives:
        return F
    da_L = np.where(left_wins, np.sign(lamL) * nxv, 0.0)
    da_R = np.where(left_wins, 0.0, np.sign(lamR) * nxv)
    dL = 0.5 * lamL + 0.5 * alpha - 0.5 * jump * da_L + visc
    dR = 0.5 * lamR - 0.5 * alpha - 0.5 * jump * da_R - visc
    return F, dL, dR


def _face_states(Q2, geo: FaceGeometry, cfg: BurgersConfig):
    nt, nx = Q2.shape
    qL_x = np.empty((nt, nx + 1))
    qR_x = np.empty((nt, nx + 1))
    qL_x[:, 1:] = Q2
    qL_x[:, 0] = cfg.mu
    qR_x[:, :-1] = Q2
    qR_x[:, -1] = Q2[:, -1]
    qL_t = np.empty((nt + 1, nx))
    qR_t = np.empty((nt + 1, nx))
    qL_t[1:] = Q2
    # exact face averages keep the residual continuous in the node positions
    qL_t[0] = initial_average(geo.bottom_x[:-1], geo.bottom_x[1:], cfg)
    qR_t[:-1] = Q2
    qR_t[-1] = Q2[-1]
    return qL_x, qR_x, qL_t, qR_t


def _check_state(Q, mesh):
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (mesh.n_cells,):
        raise InvalidArgumentError(f"state has shape {Q.shape}, expected ({mesh.n_cells},)")
    return Q


def residual_from_geometry(Q, mesh: StructuredQuadMesh, geo: FaceGeometry, cfg: BurgersConfig) -> np.ndarray:
    Q = _check_state(Q, mesh)
    Q2 = Q.reshape(mesh.nt, mesh.nx)
    qL_x, qR_x, qL_t, qR_t = _face_states(Q2, geo, cfg)
    Fx = _face_flux(qL_x, qR_x, geo.n_x, geo.c_x, cfg.nu)
    Ft = _face_flux(qL_t, qR_t, geo.n_t, geo.c_t, cfg.nu)
    R = (Fx[:, 1:] - Fx[:, :-1]) + (Ft[1:] - Ft[:-1])
    return R.reshape(-1)


def _valid_geometry(mesh, dofs, pathway):
    ok, bad = check_mapping_validity(mesh, dofs)
    if not ok:
        raise SingularMappingError(f"invalid mapping: {len(bad)} inverted cells, first {bad[:5]}")
    if pathway == "physical":
        return face_geometry(mesh, dofs)
    if pathway == "reference":
        return face_geometry_reference(mesh, dofs)
    raise InvalidArgumentError(f"unknown pathway {pathway!r}")


def residual(Q, mesh, dofs, cfg, pathway="physical") -> np.ndarray:
    return residual_from_geometry(Q, mesh, _valid_geometry(mesh, dofs, pathway), cfg)


def assemble_residual(Q, mesh, dofs, cfg, theta=None, pathway="physical") -> ResidualReport:
    """Residual ``R(Q; x_h, mu)`` with its 2-norm and optional weighted norm.

    ``theta`` holds the diagonal weights applied to the residual entries, so
    the weighted norm is ``||theta * R||_2``.
    """
    R = residual(Q, mesh, dofs, cfg, pathway)
    weighted = None if theta is None else float(np.linalg.norm(np.asarray(theta) * R))
    return ResidualReport(R, float(np.linalg.norm(R)), weighted)


def state_jacobian_from_geometry(Q, mesh, geo: FaceGeometry, cfg) -> sp.csr_matrix:
    Q = _check_state(Q, mesh)
    nx, nt = mesh.nx, mesh.nt
    Q2 = Q.reshape(nt, nx)
    qL_x, qR_x, qL_t, qR_t = _face_states(Q2, geo, cfg)
    _, dLx, dRx = _face_flux(qL_x, qR_x, geo.n_x, geo.c_x, cfg.nu, derivatives=True)
    _, dLt, dRt = _face_flux(qL_t, qR_t, geo.n_t, geo.c_t, cfg.nu, derivatives=True)
    cid = np.arange(mesh.n_cells).reshape(nt, nx)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    # interior x-faces: face i separates cells i-1 (L) and i (R)
    L, Rc = cid[:, :-1], cid[:, 1:]
    add(L, L, dLx[:, 1:-1])
    add(L, Rc, dRx[:, 1:-1])
    add(Rc, L, -dLx[:, 1:-1])
    add(Rc, Rc, -dRx[:, 1:-1])
    # left Dirichlet face enters cell 0 with a minus sign; right copy face leaves the last cell
    add(cid[:, 0], cid[:, 0], -dRx[:, 0])
    add(cid[:, -1], cid[:, -1], dLx[:, -1] + dRx[:, -1])
    # interior t-faces
    L, Rc = cid[:-1], cid[1:]
    add(L, L, dLt[1:-1])
    add(L, Rc, dRt[1:-1])
    add(Rc, L, -dLt[1:-1])
    add(Rc, Rc, -dRt[1:-1])
    add(cid[0], cid[0], -dRt[0])
    add(cid[-1], cid[-1], dLt[-1] + dRt[-1])
    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_cells, mesh.n_cells),
    )
    return J.tocsr()


def residual_state_jacobian(Q, mesh, dofs, cfg) -> sp.csr_matrix:
    """Analytic ``dR/dQ`` (five-point stencil) as a CSR matrix."""
    return state_jacobian_from_geometry(Q, mesh, _valid_geometry(mesh, dofs, "physical"), cfg)


def _fd_step(x: np.ndarray, direction: np.ndarray) -> float:
    scale = float(np.max(np.abs(direction)))
    if scale == 0.0:
        return 0.0
    return 1e-7 * (1.0 + float(np.max(np.abs(x)))) / scale


def mesh_directional_derivative(Q, mesh, dofs: MappingDofs, cfg, direction, R0=None) -> np.ndarray:
    """Forward difference of ``R`` along a nodal displacement ``direction`` (length N_x).

    Falls back to a backward difference when the forward step would invert a cell.
    """
    direction = np.asarray(direction, dtype=float).reshape(-1)
    if direction.size != dofs.flat.size:
        raise InvalidArgumentError("direction length must equal the number of mapping dofs")
    eps = _fd_step(dofs.flat, direction)
    if eps == 0.0:
        return np.zeros(mesh.n_cells)
    if R0 is None:
        R0 = residual(Q, mesh, dofs, cfg)
    moved = MappingDofs.from_flat(dofs.flat + eps * direction)
    if not check_mapping_validity(mesh, moved)[0]:
        # at the edge of the valid set: difference backward instead
        eps = -eps
        moved = MappingDofs.from_flat(dofs.flat + eps * direction)
    return (residual(Q, mesh, moved, cfg) - R0) / eps


def residual_mesh_jacobian(Q, mesh, dofs, cfg, basis=None) -> np.ndarray:
    """``dR/dx_h`` applied to the columns of ``basis`` (all unit directions if None).

    Returns an ``(N, n_cols)`` matrix of forward-difference directional
    derivatives, so a reduced mesh basis costs only one residual evaluation per
    column.
    """
    n_dofs = dofs.flat.size
    if basis is None:
        basis = np.eye(n_dofs)
    basis = np.asarray(basis, dtype=float).reshape(n_dofs, -1)
    R0 = residual(Q, mesh, dofs, cfg)
    out = np.empty((mesh.n_cells, basis.shape[1]))
    for k in range(basis.shape[1]):
        out[:, k] = mesh_directional_derivative(Q, mesh, dofs, cfg, basis[:, k], R0=R0)
    return out


def initial_guess(mesh: StructuredQuadMesh, cfg: BurgersConfig, dofs: MappingDofs | None = None) -> np.ndarray:
    """Cell averages of the initial data, extruded in time (reference cell columns)."""
    x_lo = mesh.bounds[0]
    edges = x_lo + np.arange(mesh.nx + 1) * mesh.hx
    if dofs is not None:
        edges = dofs.phys_nodes[: mesh.nx + 1, 0]
    return np.tile(initial_average(edges[:-1], edges[1:], cfg), mesh.nt)


def solve_hdm(
    mesh: StructuredQuadMesh,
    cfg: BurgersConfig,
    dofs: MappingDofs | None = None,
    Q0=None,
    rtol: float = 1e-10,
    max_iter: int = 200,
    lam0: float = 1.0,
    max_backtracks: int = 4,
    trace: NewtonTrace | None = None,
) -> np.ndarray:
    """Solve ``R(Q; x_h, mu) = 0`` by Newton with pseudo-transient damping.

    The damping ``lam * I`` shrinks by 5x after every accepted step and grows
    by 5x after a rejected one.  Each damped Newton direction is tried with
    step lengths 1, 1/2, ... (``max_backtracks`` halvings); a step is accepted
    only if it decreases ``||R||``.
    """
    if dofs is None:
        dofs = mesh.identity_dofs()
    geo = _valid_geometry(mesh, dofs, "physical")
    Q = initial_guess(mesh, cfg, dofs) if Q0 is None else np.array(Q0, dtype=float)
    R = residual_from_geometry(Q, mesh, geo, cfg)
    norm = float(np.linalg.norm(R))
    tol = rtol * max(1.0, norm)
    lam = lam0
    eye = sp.identity(mesh.n_cells, format="csr")
    for it in range(max_iter):
        if trace is not None:
            trace.norms.append(norm)
        if norm <= tol:
            logger.debug("newton converged in %d iterations, |R| = %.3e", it, norm)
            return Q
        J = state_jacobian_from_geometry(Q, mesh, geo, cfg) + lam * eye
        dQ = spla.spsolve(J.tocsc(), -R)
        accepted = False
        step = 1.0
        for _ in range(max_backtracks + 1):
            Q_trial = Q + step * dQ
            R_trial = residual_from_geometry(Q_trial, mesh, geo, cfg)
            norm_trial = float(np.linalg.norm(R_trial))
            if np.isfinite(norm_trial) and norm_trial < norm:
                accepted = True
                break
            step *= 0.5
        if trace is not None:
            trace.lambdas.append(lam)
            trace.accepted.append(accepted)
        if accepted:
            Q, R, norm = Q_trial, R_trial, norm_trial
            lam *= 0.2
        else:
            lam *= 5.0
    if norm <= tol:
        return Q
    raise SolverFailureError(
        f"Newton did not converge in {max_iter} iterations (mu={cfg.mu}, |R|={norm:.3e})", residual_norm=norm
    )


def slice_profile(Q, mesh: StructuredQuadMesh, dofs: MappingDofs | None, t_slice: float):
    """Cell-center profile ``(x, q)`` at time ``t_slice`` in physical coordinates.

    Each column of cells is interpolated linearly in time; times beyond the
    first/last row of centers clamp to that row.
    """
    _, _, t_lo, t_hi = mesh.bounds
    if not t_lo <= t_slice <= t_hi:
        raise InvalidArgumentError(f"t_slice={t_slice} outside [{t_lo}, {t_hi}]")
    Q = _check_state(Q, mesh)
    C = mesh.cell_centers(dofs).reshape(mesh.nt, mesh.nx, 2)
    Q2 = Q.reshape(mesh.nt, mesh.nx)
    if dofs is None or np.array_equal(dofs.phys_nodes, mesh.ref_nodes):
        tc = C[:, 0, 1]
        xs = C[0, :, 0]
        qs = np.array([np.interp(t_slice, tc, Q2[:, i]) for i in range(mesh.nx)])
        return xs, qs
    xs = np.empty(mesh.nx)
    qs = np.empty(mesh.nx)
    for i in range(mesh.nx):
        tc = C[:, i, 1]
        order = np.argsort(tc, kind="stable")
        xs[i] = np.interp(t_slice, tc[order], C[order, i, 0])
        qs[i] = np.interp(t_slice, tc[order], Q2[order, i])
    return xs, qs


def shock_position(Q, mesh, dofs=None, t_slice=1.0, level=None, mu=None) -> float:
    """Rightmost crossing of ``level`` by the time-``t_slice`` profile.

    ``level`` defaults to ``mu / 2`` when ``mu`` is given, otherwise to the
    midpoint of the slice's range.
    """
    xs, qs = slice_profile(Q, mesh, dofs, t_slice)
    if level is None:
        level = 0.5 * mu if mu is not None else 0.5 * (qs.min() + qs.max())
    if not qs.min() < level < qs.max():
        raise NotFoundError(f"level {level} not strictly inside slice range [{qs.min()}, {qs.max()}]")
    s = qs - level
    hits = np.flatnonzero((s[:-1] * s[1:] <= 0.0) & ~((s[:-1] == 0.0) & (s[1:] == 0.0)))
    if hits.size == 0:
        raise NotFoundError(f"no crossing of level {level} at t={t_slice}")
    k = hits[-1]
    if s[k + 1] == 0.0:
        return float(xs[k + 1])
    w = s[k] / (s[k] - s[k + 1])
    return float(xs[k] + w * (xs[k + 1] - xs[k]))
