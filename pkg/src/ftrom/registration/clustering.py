"""Landmark extraction: k-means centroids, edge endpoints and boundary anchors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ftrom.errors import DegenerateFeatureError, InvalidArgumentError
from ftrom.mesh import StructuredQuadMesh


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    n_iter: int = 0


@dataclass(frozen=True)
class LandmarkSet:
    """Control points in the fixed order ``[centroids; endpoints; boundary]``."""

    centroids: np.ndarray
    endpoints: np.ndarray
    boundary: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return np.concatenate([self.centroids, self.endpoints, self.boundary], axis=0)

    @property
    def classes(self) -> dict[str, np.ndarray]:
        return {"centroids": self.centroids, "endpoints": self.endpoints, "boundary": self.boundary}

    def __len__(self) -> int:
        return len(self.centroids) + len(self.endpoints) + len(self.boundary)


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every remaining point coincides with a chosen center
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(points, k: int, seed=0, max_iter: int = 100, tol: float = 1e-10) -> KMeansResult:
    """Lloyd iterations from a seeded k-means++ start.

    An empty cluster is reseeded at the point farthest from its assigned
    centroid.  The objective (sum of squared distances to the assigned
    centroid) is checked to be non-increasing after every iteration.
    """
    X = np.asarray(points, dtype=float)
    n = len(X)
    if k < 1 or n < k:
        raise InvalidArgumentError(f"need 1 <= k <= number of samples, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    labels = np.argmin(_sq_dists(X, C), axis=1)
    obj = float(((X - C[labels]) ** 2).sum())
    history = [obj]
    it = 0
    for it in range(1, max_iter + 1):
        C_new = C.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                C_new[j] = X[members].mean(axis=0)
        for j in range(k):
            if not (labels == j).any():
                far = int(np.argmax(((X - C_new[labels]) ** 2).sum(axis=1)))
                C_new[j] = X[far]
                labels[far] = j
        labels = np.argmin(_sq_dists(X, C_new), axis=1)
        new_obj = float(((X - C_new[labels]) ** 2).sum())
        # tolerance covers rounding in the recomputed sums
        assert new_obj <= obj * (1 + 1e-12) + 1e-300, "k-means objective increased"
        history.append(new_obj)
        shift = float(np.max(np.linalg.norm(C_new - C, axis=1)))
        C, obj = C_new, new_obj
        if shift < tol:
            break
    # final centroids are the means of their final clusters
    for j in range(k):
        if (labels == j).any():
            C[j] = X[labels == j].mean(axis=0)
    obj = float(((X - C[labels]) ** 2).sum())
    return KMeansResult(C, labels, obj, history, it)


def principal_axis(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    axis = Vt[0]
    # sign convention: largest-magnitude component positive
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return axis


def extract_endpoints(points) -> np.ndarray:
    """The two samples extremal along the first principal axis, low end first."""
    X = np.asarray(points, dtype=float)
    if len(X) < 2:
        raise InvalidArgumentError("need at least two samples")
    if np.all(X == X[0]):
        raise DegenerateFeatureError("all samples coincide")
    proj = (X - X.mean(axis=0)) @ principal_axis(X)

    def pick(values):
        # lexsort: last key is primary; ties broken by (x, t)
        return int(np.lexsort((X[:, 1], X[:, 0], values))[0])

    return np.array([X[pick(proj)], X[pick(-proj)]])


def boundary_landmarks(mesh: StructuredQuadMesh, count_per_edge: int = 10) -> np.ndarray:
    """Uniform points on the four edges, corners included once.

    Order: bottom edge left to right, right edge upward, top edge right to
    left, left edge downward.
    """
    if count_per_edge < 2:
        raise InvalidArgumentError("count_per_edge must be >= 2")
    x_lo, x_hi, t_lo, t_hi = mesh.bounds
    s = np.linspace(0.0, 1.0, count_per_edge)[:-1]
    xs = x_lo + s * (x_hi - x_lo)
    ts = t_lo + s * (t_hi - t_lo)
    bottom = np.stack([xs, np.full_like(s, t_lo)], axis=1)
    right = np.stack([np.full_like(s, x_hi), ts], axis=1)
    top = np.stack([x_hi - s * (x_hi - x_lo), np.full_like(s, t_hi)], axis=1)
    left = np.stack([np.full_like(s, x_lo), t_hi - s * (t_hi - t_lo)], axis=1)
    return np.concatenate([bottom, right, top, left], axis=0)
