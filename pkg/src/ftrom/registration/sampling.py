"""Rejection sampling of points where an edge sensor is concentrated.

The proposal is uniform over the support ``{s >= threshold * max(s)}`` and a
proposal at ``x`` is accepted when ``u <= s(x) / C`` with ``C = safety * max(s)``.
The sensor is piecewise constant over cells, so a proposal picks a support
cell with probability proportional to its area and then a uniform point in it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftrom.errors import EmptySupportError, InvalidArgumentError
from ftrom.mesh import map_points
from ftrom.registration.sensor import SensorField


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray  # (n_accepted, 2)
    cells: np.ndarray  # cell of each accepted point
    seed: object
    n_proposed: int

    @property
    def n_accepted(self) -> int:
        return len(self.points)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed


def support_cells(sensor: SensorField, threshold: float) -> np.ndarray:
    smax = sensor.max
    if not smax > 0:
        raise EmptySupportError("sensor has no positive values")
    return np.flatnonzero(sensor.values >= threshold * smax)


def _cell_areas(sensor: SensorField, cells: np.ndarray) -> np.ndarray:
    mesh = sensor.mesh
    nodes = mesh.ref_nodes if sensor.dofs is None else sensor.dofs.phys_nodes
    p = nodes[mesh.cells[cells]]
    x, y = p[..., 0], p[..., 1]
    return 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1))


def rejection_sample(
    sensor: SensorField,
    n_proposals: int = 5000,
    threshold: float = 1e-8,
    safety: float = 1.0,
    seed=0,
) -> SampleSet:
    if n_proposals < 1:
        raise InvalidArgumentError("need at least one proposal")
    if safety < 1.0:
        raise InvalidArgumentError(f"safety factor must be >= 1, got {safety}")
    cells = support_cells(sensor, threshold)
    C = safety * sensor.max
    rng = np.random.default_rng(seed)
    areas = _cell_areas(sensor, cells)
    # draw in a fixed order: cell choice, local coordinates, acceptance variate
    pick = rng.choice(cells.size, size=n_proposals, p=areas / areas.sum())
    local = rng.random((n_proposals, 2))
    u = rng.random(n_proposals)
    chosen = cells[pick]
    keep = u <= sensor.values[chosen] / C
    mesh = sensor.mesh
    dofs = sensor.dofs if sensor.dofs is not None else mesh.identity_dofs()
    pts = map_points(mesh, dofs, chosen[keep], local[keep])
    return SampleSet(pts, chosen[keep], seed, n_proposals)
