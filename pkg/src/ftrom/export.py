"""Plain-text exports: CSV tables and legacy-VTK structured grids."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ftrom.errors import InvalidArgumentError, StorageError
from ftrom.mesh import MappingDofs, StructuredQuadMesh


def fmt(v) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(v), ".17g")


def write_csv(path, header, columns) -> None:
    cols = [np.asarray(c).reshape(-1) for c in columns]
    if len(header) != len(cols) or len({c.size for c in cols}) > 1:
        raise InvalidArgumentError("CSV header and columns disagree")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    except OSError as exc:
        raise StorageError(f"{path}: cannot write CSV: {exc}") from exc


def write_rows(path, header, rows) -> None:
    """Rows of mixed strings and numbers."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    except OSError as exc:
        raise StorageError(f"{path}: cannot write CSV: {exc}") from exc


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def export_state_csv(path, mesh: StructuredQuadMesh, Q, dofs: MappingDofs | None = None) -> None:
    """One row ``(x, t, q)`` per cell at its physical center."""
    C = mesh.cell_centers(dofs)
    write_csv(path, ["x", "t", "q"], [C[:, 0], C[:, 1], Q])


def export_state_vtk(path, mesh: StructuredQuadMesh, Q, dofs: MappingDofs | None = None, title="ftrom state") -> None:
    nodes = mesh.ref_nodes if dofs is None else dofs.phys_nodes
    Q = np.asarray(Q, dtype=float).reshape(-1)
    if Q.size != mesh.n_cells:
        raise InvalidArgumentError(f"state has {Q.size} entries, mesh has {mesh.n_cells} cells")
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {mesh.nx + 1} {mesh.nt + 1} 1",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines += [f"{fmt(x)} {fmt(t)} 0" for x, t in nodes]
    lines += [f"CELL_DATA {mesh.n_cells}", "SCALARS q double 1", "LOOKUP_TABLE default"]
    lines += [fmt(q) for q in Q]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise StorageError(f"{path}: cannot write VTK file: {exc}") from exc
