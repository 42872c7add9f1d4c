"""Gradient-based edge sensor on cell-averaged fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftrom.mesh import MappingDofs, StructuredQuadMesh


@dataclass(frozen=True)
class SensorField:
    values: np.ndarray  # one non-negative value per cell
    mesh: StructuredQuadMesh
    dofs: MappingDofs | None = None

    @property
    def max(self) -> float:
        return float(self.values.max())


def _index_derivative(A: np.ndarray, axis: int) -> np.ndarray:
    """Central difference along ``axis`` in index space, one-sided at the ends."""
    return np.gradient(A, axis=axis, edge_order=1)


def physical_gradient(Q, mesh: StructuredQuadMesh, dofs: MappingDofs | None = None) -> np.ndarray:
    """Per-cell ``(dq/dx, dq/dt)`` reconstructed from neighbouring cell averages.

    Differences are taken in index space for both the field and the cell
    centers, and the chain rule is inverted cell by cell, so the same code
    handles warped meshes.
    """
    Q2 = mesh.grid(Q)
    C = mesh.cell_centers(dofs).reshape(mesh.nt, mesh.nx, 2)
    dq_di = _index_derivative(Q2, 1)
    dq_dj = _index_derivative(Q2, 0)
    dc_di = _index_derivative(C, 1)
    dc_dj = _index_derivative(C, 0)
    # [dq_di, dq_dj] = grad . [dc_di | dc_dj]
    a, b = dc_di[..., 0], dc_dj[..., 0]
    c, d = dc_di[..., 1], dc_dj[..., 1]
    det = a * d - b * c
    gx = (dq_di * d - dq_dj * c) / det
    gt = (dq_dj * a - dq_di * b) / det
    return np.stack([gx.ravel(), gt.ravel()], axis=1)


def edge_sensor(Q, mesh: StructuredQuadMesh, dofs: MappingDofs | None = None) -> SensorField:
    """Squared Frobenius norm of the physical gradient in every cell."""
    g = physical_gradient(Q, mesh, dofs)
    return SensorField(np.einsum("ck,ck->c", g, g), mesh, dofs)
