"""Minimum total-distance pairing of landmarks (Hungarian algorithm)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ftrom.errors import InvalidArgumentError


@dataclass(frozen=True)
class Correspondence:
    """``perm[i]`` is the reference landmark paired with moving landmark ``i``."""

    perm: np.ndarray
    total_cost: float
    distances: np.ndarray


def hungarian(cost) -> tuple[np.ndarray, float, np.ndarray, np.ndarray]:
    """Square assignment by shortest augmenting paths with potentials.

    Returns ``(assignment, total, u, v)`` where ``assignment[i]`` is the column
    of row ``i`` and ``u``, ``v`` are optimal dual potentials
    (``cost[i, j] - u[i] - v[j] >= 0`` with equality on the assignment).
    Columns are scanned in increasing order, so ties go to lower indices.
    """
    a = np.asarray(cost, dtype=float)
    n, m = a.shape
    if n != m:
        raise InvalidArgumentError("cost matrix must be square")
    if n == 0:
        return np.zeros(0, dtype=int), 0.0, np.zeros(0), np.zeros(0)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = np.empty(n, dtype=int)
    assignment[p[1:] - 1] = np.arange(n)
    total = float(a[np.arange(n), assignment].sum())
    return assignment, total, u[1:].copy(), v[1:].copy()


def _lexicographic_optimum(cost: np.ndarray, tol: float) -> np.ndarray:
    """Among optimal assignments, prefer lower reference indices for lower moving indices.

    Every optimal assignment uses only edges with zero reduced cost under any
    optimal dual, so alternative columns are tried only on ties and the
    original duals stay valid after each row is fixed.
    """
    n = len(cost)
    assign, best, u, v = hungarian(cost)
    fixed: dict[int, int] = {}
    for i in range(n):
        free_cols = [j for j in range(n) if j not in fixed.values()]
        reduced = cost[i] - u[i] - v
        for j in free_cols:
            if j == assign[i]:
                break
            if reduced[j] > tol:
                continue
            rows = [r for r in range(n) if r != i and r not in fixed]
            cols = [c for c in free_cols if c != j]
            sub_assign, sub_cost, _, _ = hungarian(cost[np.ix_(rows, cols)])
            fixed_cost = sum(cost[r, c] for r, c in fixed.items())
            if fixed_cost + cost[i, j] + sub_cost <= best + tol:
                full = assign.copy()
                full[i] = j
                for r, c in zip(rows, sub_assign):
                    full[r] = cols[c]
                assign = full
                break
        fixed[i] = int(assign[i])
    return assign


def assign_min_distance(moving, reference, tol: float = 1e-12) -> Correspondence:
    moving = np.asarray(moving, dtype=float).reshape(-1, 2)
    reference = np.asarray(reference, dtype=float).reshape(-1, 2)
    if len(moving) != len(reference):
        raise InvalidArgumentError(f"landmark count mismatch: {len(moving)} vs {len(reference)}")
    if len(moving) == 0:
        return Correspondence(np.zeros(0, dtype=int), 0.0, np.zeros(0))
    cost = np.linalg.norm(moving[:, None, :] - reference[None, :, :], axis=2)
    scale = max(1.0, float(cost.max()))
    perm = _lexicographic_optimum(cost, tol * scale * len(cost))
    dist = cost[np.arange(len(cost)), perm]
    return Correspondence(perm, float(dist.sum()), dist)


def correspond(moving, reference) -> dict[str, Correspondence]:
    """Pair two landmark sets class by class; classes are never mixed."""
    return {
        name: assign_min_distance(pts, reference.classes[name]) for name, pts in moving.classes.items()
    }
