"""Gaussian bumps, their analytic alignment map and the singular-value comparison."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ftrom.errors import InvalidArgumentError

DEFAULT_CENTERS = (-0.4, -0.2, 0.0, 0.2, 0.4)


def bump(x, c):
    """``exp(-100 (x - c)^2)``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-100.0 * (x - c) ** 2)


def bump_map(x, c, x_t):
    """Quadratic map of ``[-1, 1]`` onto itself fixing the ends and sending ``c`` to ``x_t``.

    Written in Lagrange form through the nodes ``-1, c, 1``.  Monotone on
    ``[-1, 1]`` exactly when ``|x_t - c| <= (1 - c^2) / 2``.
    """
    c = float(c)
    if not -1.0 < c < 1.0:
        raise InvalidArgumentError(f"center c={c} must lie strictly inside (-1, 1)")
    x = np.asarray(x, dtype=float)
    return (
        x_t * (x - 1.0) * (x + 1.0) / ((c - 1.0) * (c + 1.0))
        + (x + 1.0) * (x - c) / (2.0 * (1.0 - c))
        - (x - 1.0) * (x - c) / (2.0 * (c + 1.0))
    )


def bump_map_derivative(x, c, x_t):
    x = np.asarray(x, dtype=float)
    return 1.0 - 2.0 * x * (x_t - c) / (1.0 - c * c)


@dataclass(frozen=True)
class BumpStudyConfig:
    centers: tuple = DEFAULT_CENTERS
    grid: np.ndarray = field(default_factory=lambda: np.linspace(-1.0, 1.0, 1000))
    x_t: float = 0.0
    test_center: float = 0.1  # out-of-sample bump for the projection comparison

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        g = np.asarray(self.grid, dtype=float)
        if c.ndim != 1 or c.size == 0 or not np.all((c > -1.0) & (c < 1.0)):
            raise InvalidArgumentError("centers must be a non-empty list inside (-1, 1)")
        if not -1.0 < self.test_center < 1.0 or not -1.0 < self.x_t < 1.0:
            raise InvalidArgumentError("x_t and test_center must lie inside (-1, 1)")
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise InvalidArgumentError("grid must be strictly increasing with at least two points")


@dataclass(frozen=True)
class BumpStudyResult:
    grid: np.ndarray
    unaligned: np.ndarray  # (n_grid, n_centers) columns y(x; c_j)
    aligned: np.ndarray  # columns y(H(x; x_t, c_j); c_j), peaks at x_t
    sv_unaligned: np.ndarray  # normalized by the first singular value
    sv_aligned: np.ndarray
    projection: dict  # out-of-sample bump and its best fits, on the physical grid


def aligned_column(grid, c, x_t):
    """Bump ``c`` seen in reference coordinates: the map sends ``x_t`` to ``c``."""
    return bump(bump_map(grid, x_t, c), c)


def normalized_spectrum(A) -> np.ndarray:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return s / s[0]


def _best_fit(basis_matrix, target, rank):
    """Least-squares projection of ``target`` on the leading ``rank`` left singular vectors."""
    U = np.linalg.svd(basis_matrix, full_matrices=False)[0][:, :rank]
    return U @ (U.T @ target)


def bump_svd_study(cfg: BumpStudyConfig = BumpStudyConfig(), rank: int | None = None) -> BumpStudyResult:
    if len(cfg.centers) < 1:
        raise InvalidArgumentError("need at least one center")
    grid = np.asarray(cfg.grid, dtype=float)
    centers = np.asarray(cfg.centers, dtype=float)
    A = np.stack([bump(grid, c) for c in centers], axis=1)
    B = np.stack([aligned_column(grid, c, cfg.x_t) for c in centers], axis=1)
    rank = len(centers) if rank is None else rank
    c_star = cfg.test_center
    truth = bump(grid, c_star)
    # the aligned fit lives in reference coordinates; map it back through x = H(xi)
    fit_ref = _best_fit(B, aligned_column(grid, c_star, cfg.x_t), rank)
    phys_of_ref = bump_map(grid, cfg.x_t, c_star)
    projection = {
        "x": grid,
        "truth": truth,
        "unaligned_fit": _best_fit(A, truth, rank),
        "aligned_fit": np.interp(grid, phys_of_ref, fit_ref),
    }
    return BumpStudyResult(grid, A, B, normalized_spectrum(A), normalized_spectrum(B), projection)
