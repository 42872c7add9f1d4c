"""Structured space-time quadrilateral meshes and the piecewise-bilinear domain map.

Nodes are ordered lexicographically with the first coordinate running fastest:
node ``(i, j)`` has index ``j * (nx + 1) + i`` and cell ``(i, j)`` has index
``j * nx + i``.  Cell corners are listed counterclockwise starting at the
lower-left node.  Local cell coordinates ``(xi, eta)`` live on ``[0, 1]^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ftrom.errors import InvalidArgumentError

# corner offsets (di, dj) in counterclockwise order, and their local coordinates
_CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))


@dataclass(frozen=True)
class StructuredQuadMesh:
    nx: int
    nt: int
    bounds: tuple[float, float, float, float]  # (x_lo, x_hi, t_lo, t_hi)
    ref_nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.nt + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.nt

    @property
    def hx(self) -> float:
        return (self.bounds[1] - self.bounds[0]) / self.nx

    @property
    def ht(self) -> float:
        return (self.bounds[3] - self.bounds[2]) / self.nt

    @property
    def diameter(self) -> float:
        x_lo, x_hi, t_lo, t_hi = self.bounds
        return float(np.hypot(x_hi - x_lo, t_hi - t_lo))

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def cell_index(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    @cached_property
    def cells(self) -> np.ndarray:
        """Connectivity as an ``(n_cells, 4)`` integer array (counterclockwise)."""
        j, i = np.divmod(np.arange(self.n_cells), self.nx)
        return np.stack([self.node_index(i + di, j + dj) for di, dj in _CORNERS], axis=1)

    def identity_dofs(self) -> MappingDofs:
        return MappingDofs(self.ref_nodes.copy())

    def cell_centers(self, dofs: MappingDofs | None = None) -> np.ndarray:
        """Image of each cell's local center, i.e. the mean of its four nodes."""
        nodes = self.ref_nodes if dofs is None else dofs.phys_nodes
        return nodes[self.cells].mean(axis=1)

    def ref_center_axes(self) -> tuple[np.ndarray, np.ndarray]:
        x_lo, _, t_lo, _ = self.bounds
        xc = x_lo + (np.arange(self.nx) + 0.5) * self.hx
        tc = t_lo + (np.arange(self.nt) + 0.5) * self.ht
        return xc, tc

    def grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-cell vector to ``(nt, nx)``."""
        return np.asarray(values).reshape(self.nt, self.nx)


@dataclass(frozen=True)
class MappingDofs:
    """Physical node positions ``x_h``; same ordering as ``ref_nodes``."""

    phys_nodes: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.phys_nodes.reshape(-1)

    @classmethod
    def from_flat(cls, x: np.ndarray) -> MappingDofs:
        return cls(np.asarray(x, dtype=float).reshape(-1, 2))


@dataclass(frozen=True)
class MappingJacobian:
    G: np.ndarray
    g: float


def build_rect_mesh(nx: int, nt: int, bounds=(-1.0, 1.0, 0.0, 1.0)) -> StructuredQuadMesh:
    if int(nx) != nx or int(nt) != nt or nx < 2 or nt < 2:
        raise InvalidArgumentError(f"need integer nx, nt >= 2, got nx={nx}, nt={nt}")
    x_lo, x_hi, t_lo, t_hi = (float(b) for b in bounds)
    if not (np.isfinite([x_lo, x_hi, t_lo, t_hi]).all() and x_hi > x_lo and t_hi > t_lo):
        raise InvalidArgumentError(f"degenerate bounds {bounds}")
    nx, nt = int(nx), int(nt)
    xs = np.linspace(x_lo, x_hi, nx + 1)
    ts = np.linspace(t_lo, t_hi, nt + 1)
    X, T = np.meshgrid(xs, ts)  # shape (nt+1, nx+1), first coordinate fastest
    nodes = np.stack([X.ravel(), T.ravel()], axis=1)
    nodes.setflags(write=False)
    return StructuredQuadMesh(nx, nt, (x_lo, x_hi, t_lo, t_hi), nodes)


def _check_dofs(mesh: StructuredQuadMesh, dofs: MappingDofs) -> None:
    if dofs.phys_nodes.shape != mesh.ref_nodes.shape:
        raise InvalidArgumentError(
            f"dofs shape {dofs.phys_nodes.shape} does not match mesh {mesh.ref_nodes.shape}"
        )


def cell_jacobians(mesh: StructuredQuadMesh, dofs: MappingDofs, xi, eta) -> np.ndarray:
    return cell_jacobians_at(mesh, dofs, slice(None), xi, eta)


def cell_jacobians_at(mesh: StructuredQuadMesh, dofs: MappingDofs, cells, xi, eta) -> np.ndarray:
    """Jacobians ``G = d(x, t)/d(X, T)`` of every cell at local point ``(xi, eta)``.

    Returns an array of shape ``(n_cells, 2, 2)``; rows index physical
    components, columns reference directions.
    """
    _check_dofs(mesh, dofs)
    # differentiate the displacement so that the identity map gives G = I exactly
    u = (dofs.phys_nodes - mesh.ref_nodes)[mesh.cells[cells]]  # (n, 4, 2)
    # bilinear shape-function derivatives for corners ordered (00, 10, 11, 01)
    dxi = np.array([-(1 - eta), (1 - eta), eta, -eta])
    deta = np.array([-(1 - xi), -xi, xi, (1 - xi)])
    G = np.empty((u.shape[0], 2, 2))
    G[:, :, 0] = np.einsum("a,cak->ck", dxi, u) / mesh.hx
    G[:, :, 1] = np.einsum("a,cak->ck", deta, u) / mesh.ht
    G[:, 0, 0] += 1.0
    G[:, 1, 1] += 1.0
    return G


def mapping_jacobian(mesh: StructuredQuadMesh, dofs: MappingDofs, cell: int, local=(0.5, 0.5)) -> MappingJacobian:
    if not 0 <= cell < mesh.n_cells:
        raise InvalidArgumentError(f"cell index {cell} out of range")
    xi, eta = local
    if not (0.0 <= xi <= 1.0 and 0.0 <= eta <= 1.0):
        raise InvalidArgumentError(f"local coordinates {local} outside [0,1]^2")
    G = cell_jacobians_at(mesh, dofs, np.array([cell]), xi, eta)[0]
    return MappingJacobian(G, float(G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]))


def map_points(mesh: StructuredQuadMesh, dofs: MappingDofs, cell, local) -> np.ndarray:
    """Evaluate the bilinear map at local coordinates of the given cells."""
    cell = np.atleast_1d(cell)
    local = np.atleast_2d(local)
    xi, eta = local[:, 0], local[:, 1]
    w = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
    p = dofs.phys_nodes[mesh.cells[cell]]
    return np.einsum("ca,cak->ck", w, p)


def corner_determinants(mesh: StructuredQuadMesh, dofs: MappingDofs) -> np.ndarray:
    """det G at the four corners and the center of every cell, shape ``(n_cells, 5)``."""
    locals_ = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)]
    out = np.empty((mesh.n_cells, len(locals_)))
    for k, (xi, eta) in enumerate(locals_):
        G = cell_jacobians(mesh, dofs, xi, eta)
        out[:, k] = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    return out


def check_mapping_validity(mesh: StructuredQuadMesh, dofs: MappingDofs) -> tuple[bool, list[int]]:
    """Positivity of det G at every cell corner (plus the center, as a cheap proxy)."""
    det = corner_determinants(mesh, dofs)
    bad = np.flatnonzero((det <= 0.0).any(axis=1))
    return bad.size == 0, bad.tolist()
