"""Compactly supported RBF interpolation of landmark displacements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from ftrom.errors import FitFailureError, InvalidArgumentError

JITTER = 1e-12


def wendland_c2(eta):
    """Wendland C2 kernel ``(1 - eta)^4 (4 eta + 1)`` on ``[0, 1]``, zero beyond."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise InvalidArgumentError("scaled distance must be non-negative")
    out = np.where(eta < 1.0, (1.0 - eta) ** 4 * (4.0 * eta + 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RbfWarp:
    """Displacement field ``dX_i(X) = sum_j w[j, i] phi(|X - c_j| / r)``.

    Each displacement component may use its own subset of the centers;
    ``active[:, i]`` marks the centers carrying component ``i`` (inactive
    centers have zero weight in that component).
    """

    centers: np.ndarray  # (n_c, 2)
    radius: float
    weights: np.ndarray  # (n_c, 2)
    active: np.ndarray | None = None

    def __call__(self, X) -> np.ndarray:
        return rbf_eval(self, X)


def kernel_matrix(A, B, radius: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))
    return wendland_c2(d / radius)


def _solve_spd(M: np.ndarray, d: np.ndarray) -> np.ndarray:
    n = len(M)
    for jitter in (0.0, JITTER):
        try:
            factor = la.cho_factor(M + jitter * np.eye(n), lower=True)
        except la.LinAlgError:
            continue
        diag = np.diag(factor[0])
        # reciprocal condition estimate from the Cholesky diagonal
        if diag.min() ** 2 / diag.max() ** 2 < np.finfo(float).eps and jitter == 0.0:
            continue
        return la.cho_solve(factor, d)
    raise FitFailureError("RBF interpolation matrix is singular even after jitter")


def rbf_fit(centers, displacements, radius: float, active=None) -> RbfWarp:
    """Solve ``M w^i = d^i`` with ``M_ab = phi(|c_a - c_b| / r)`` per dimension."""
    C = np.asarray(centers, dtype=float).reshape(-1, 2)
    D = np.asarray(displacements, dtype=float).reshape(-1, 2)
    if len(C) < 1:
        raise InvalidArgumentError("need at least one center")
    if len(C) != len(D):
        raise InvalidArgumentError("centers and displacements differ in length")
    if not radius > 0:
        raise InvalidArgumentError("support radius must be positive")
    if len(np.unique(C, axis=0)) != len(C):
        raise InvalidArgumentError("duplicate RBF centers")
    if active is None:
        active = np.ones(C.shape, dtype=bool)
    active = np.asarray(active, dtype=bool).reshape(C.shape)
    W = np.zeros_like(D)
    for i in range(2):
        idx = np.flatnonzero(active[:, i])
        if idx.size == 0:
            continue
        M = kernel_matrix(C[idx], C[idx], radius)
        W[idx, i] = _solve_spd(M, D[idx, i])
    return RbfWarp(C, float(radius), W, active)


def rbf_eval(warp: RbfWarp, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Phi = kernel_matrix(np.atleast_2d(X), warp.centers, warp.radius)
    out = Phi @ warp.weights
    return out[0] if single else out
