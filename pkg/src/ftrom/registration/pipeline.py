"""End-to-end landmark registration of one snapshot onto a reference snapshot."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftrom.errors import RegistrationFailureError
from ftrom.mesh import MappingDofs, StructuredQuadMesh, check_mapping_validity
from ftrom.registration.clustering import (
    LandmarkSet,
    boundary_landmarks,
    extract_endpoints,
    kmeans,
)
from ftrom.registration.correspondence import Correspondence, correspond
from ftrom.registration.rbf import RbfWarp, rbf_eval, rbf_fit
from ftrom.registration.sampling import SampleSet, rejection_sample
from ftrom.registration.sensor import edge_sensor


@dataclass(frozen=True)
class RegistrationParams:
    k: int = 5
    n_samples: int = 50000
    threshold: float = 1e-8
    safety: float = 1.0
    radius: float = 100.0
    count_per_edge: int = 10
    seed: int = 0


@dataclass(frozen=True)
class RegistrationResult:
    dofs: MappingDofs
    warp: RbfWarp
    reference: LandmarkSet
    moving: LandmarkSet
    pairs: dict[str, Correspondence]
    samples: tuple[SampleSet, SampleSet]  # (reference, moving)
    displacement: np.ndarray  # x_h - X_h per node

    @property
    def max_displacement(self) -> float:
        return float(np.max(np.linalg.norm(self.displacement, axis=1)))


def extract_landmarks(Q, mesh: StructuredQuadMesh, params: RegistrationParams, seed) -> tuple[LandmarkSet, SampleSet]:
    """Sensor, rejection sampling, k-means, endpoints and boundary anchors."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_seed, k_seed = ss.spawn(2)
    sensor = edge_sensor(Q, mesh)
    samples = rejection_sample(sensor, params.n_samples, params.threshold, params.safety, s_seed)
    km = kmeans(samples.points, params.k, seed=k_seed)
    # order centroids along the feature so that the landmark set is canonical
    centroids = km.centroids[np.lexsort((km.centroids[:, 0], km.centroids[:, 1]))]
    landmarks = LandmarkSet(centroids, extract_endpoints(samples.points), boundary_landmarks(mesh, params.count_per_edge))
    return landmarks, samples


def boundary_constraint_mask(points: np.ndarray, mesh: StructuredQuadMesh) -> np.ndarray:
    """Which displacement components a boundary point pins.

    A point on an ``x = const`` edge pins the x-component, a point on a
    ``t = const`` edge pins the t-component; corners pin both.  Tangential
    sliding stays free so features that end on the boundary can move along it.
    """
    x_lo, x_hi, t_lo, t_hi = mesh.bounds
    on_x = np.isclose(points[:, 0], x_lo) | np.isclose(points[:, 0], x_hi)
    on_t = np.isclose(points[:, 1], t_lo) | np.isclose(points[:, 1], t_hi)
    return np.stack([on_x, on_t], axis=1)


def snap_endpoint_pair(ref_pt, mov_pt, mesh: StructuredQuadMesh, tol: float | None = None):
    """Project a paired endpoint onto every domain edge that either partner lies near.

    A feature ending on the boundary yields sampled endpoints a fraction of a
    cell inside the domain; left alone, their small normal offsets against the
    pinned boundary fold the warp.  Snapped endpoints only slide along the edge.
    """
    tol = 2.0 * max(mesh.hx, mesh.ht) if tol is None else tol
    ref_pt = np.array(ref_pt, dtype=float)
    mov_pt = np.array(mov_pt, dtype=float)
    x_lo, x_hi, t_lo, t_hi = mesh.bounds
    for dim, value in ((0, x_lo), (0, x_hi), (1, t_lo), (1, t_hi)):
        if min(abs(ref_pt[dim] - value), abs(mov_pt[dim] - value)) <= tol:
            ref_pt[dim] = value
            mov_pt[dim] = value
    return ref_pt, mov_pt


def _partners(pairs: dict, name: str) -> np.ndarray:
    perm = pairs[name].perm
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))
    return inverse


def fit_alignment_warp(reference: LandmarkSet, moving: LandmarkSet, pairs, mesh, radius) -> RbfWarp:
    """RBF warp centered on the reference landmarks, displacing each toward its moving partner."""
    ref_c = reference.centroids
    mov_c = moving.centroids[_partners(pairs, "centroids")]
    snapped = [
        snap_endpoint_pair(r, v, mesh)
        for r, v in zip(reference.endpoints, moving.endpoints[_partners(pairs, "endpoints")])
    ]
    ref_e = np.array([r for r, _ in snapped]).reshape(-1, 2)
    mov_e = np.array([v for _, v in snapped]).reshape(-1, 2)
    bnd = reference.boundary
    # a snapped endpoint takes precedence over a boundary anchor at the same spot
    clash = np.zeros(len(bnd), dtype=bool)
    for e in ref_e:
        clash |= np.all(np.isclose(bnd, e, rtol=0.0, atol=1e-12), axis=1)
    bnd = bnd[~clash]
    centers = np.concatenate([ref_c, ref_e, bnd])
    targets = np.concatenate([mov_c - ref_c, mov_e - ref_e, np.zeros_like(bnd)])
    active = np.concatenate(
        [np.ones(ref_c.shape, dtype=bool), np.ones(ref_e.shape, dtype=bool), boundary_constraint_mask(bnd, mesh)]
    )
    return rbf_fit(centers, targets, radius, active)


def register_snapshot(Q_mov, Q_ref, mesh: StructuredQuadMesh, params: RegistrationParams = RegistrationParams()) -> RegistrationResult:
    """Mapping dofs ``x_h = X_h + dX(X_h)`` aligning ``Q_mov`` with ``Q_ref``."""
    ref_seed, mov_seed = np.random.SeedSequence(params.seed).spawn(2)
    ref_lm, ref_samples = extract_landmarks(Q_ref, mesh, params, ref_seed)
    mov_lm, mov_samples = extract_landmarks(Q_mov, mesh, params, mov_seed)
    pairs = correspond(mov_lm, ref_lm)
    warp = fit_alignment_warp(ref_lm, mov_lm, pairs, mesh, params.radius)
    displacement = rbf_eval(warp, mesh.ref_nodes)
    dofs = MappingDofs(mesh.ref_nodes + displacement)
    ok, bad = check_mapping_validity(mesh, dofs)
    if not ok:
        raise RegistrationFailureError(f"registration produced {len(bad)} inverted cells", bad)
    return RegistrationResult(dofs, warp, ref_lm, mov_lm, pairs, (ref_samples, mov_samples), displacement)
