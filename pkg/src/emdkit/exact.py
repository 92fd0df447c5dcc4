"""Exact earth mover's distance via optimal assignment.

The solver follows the shortest-augmenting-path (Jonker-Volgenant style)
formulation with dual potentials, O(N^3) worst case. It is deliberately a
plain-Python implementation: all arithmetic is scalar float64, which keeps
the empirical wall-clock scaling close to the algorithm's operation count
and makes it a clean baseline for the timing harness.

``brute_force`` enumerates all permutations and is the independent oracle
used by the test suite; it never shares code with ``hungarian``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import CostMatrix, GradientField, Matching, Norm, PointCloud, pairwise_cost

__all__ = [
    "AssignmentResult",
    "ExactResult",
    "hungarian",
    "brute_force",
    "emd",
    "emd_gradient",
]

_BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class AssignmentResult:
    """A minimum-cost bipartite assignment and its total cost."""

    matching: Matching
    cost: float


@dataclass(frozen=True)
class ExactResult:
    """Exact EMD between two clouds together with the optimal matching."""

    distance: float
    matching: Matching


def _as_cost_rows(c) -> list[list[float]]:
    if isinstance(c, CostMatrix):
        return c.c.tolist()
    arr = np.asarray(c, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("cost entries must be finite")
    if (arr < 0).any():
        raise ValueError("cost entries must be nonnegative")
    return arr.tolist()


def _solve_lsap(cost: list[list[float]]) -> list[int]:
    """Successive shortest augmenting paths with dual potentials.

    Returns col4row: the column assigned to each row. Local-variable heavy
    by design; this is the hot loop.
    """
    n = len(cost)
    inf = math.inf
    u = [0.0] * n
    v = [0.0] * n
    col4row = [-1] * n
    row4col = [-1] * n
    for cur_row in range(n):
        shortest = [inf] * n
        path = [-1] * n
        remaining = list(range(n - 1, -1, -1))
        scanned_rows: list[int] = []
        scanned_cols: list[int] = []
        i = cur_row
        minval = 0.0
        sink = -1
        while sink == -1:
            scanned_rows.append(i)
            ci = cost[i]
            base = minval - u[i]
            lowest = inf
            index = -1
            for it in range(len(remaining)):
                j = remaining[it]
                r = base + ci[j] - v[j]
                if r < shortest[j]:
                    shortest[j] = r
                    path[j] = i
                sj = shortest[j]
                if sj < lowest or (sj == lowest and row4col[j] == -1):
                    lowest = sj
                    index = it
            minval = lowest
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            scanned_cols.append(j)
            remaining[index] = remaining[-1]
            remaining.pop()
        u[cur_row] += minval
        for i2 in scanned_rows:
            if i2 != cur_row:
                u[i2] += minval - shortest[col4row[i2]]
        for j in scanned_cols:
            v[j] -= minval - shortest[j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur_row:
                break
    return col4row


def hungarian(c: CostMatrix | np.ndarray) -> AssignmentResult:
    """Minimum-cost perfect matching of a square, finite, nonnegative matrix.

    The returned cost equals sum_i c[i, assign[i]]. Ties between optimal
    matchings are resolved arbitrarily by the search order.
    """
    rows = _as_cost_rows(c)
    col4row = _solve_lsap(rows)
    total = sum(rows[i][col4row[i]] for i in range(len(rows)))
    return AssignmentResult(matching=Matching(np.array(col4row)), cost=total)


def brute_force(c: CostMatrix | np.ndarray) -> AssignmentResult:
    """Exhaustive assignment oracle over all N! permutations (N <= 8 only).

    Ties are broken toward the lexicographically smallest permutation, which
    is the first one reached in ``itertools.permutations`` order.
    """
    rows = _as_cost_rows(c)
    n = len(rows)
    if n > _BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"brute_force refuses N={n} (> {_BRUTE_FORCE_LIMIT}); use hungarian"
        )
    best_cost = math.inf
    best_perm: tuple[int, ...] | None = None
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for i in range(n):
            total += rows[i][perm[i]]
        if total < best_cost:
            best_cost = total
            best_perm = perm
    assert best_perm is not None
    return AssignmentResult(matching=Matching(np.array(best_perm)), cost=best_cost)


def emd(u: PointCloud, v: PointCloud) -> ExactResult:
    """Exact EMD: minimum over bijections of the summed L2 displacement."""
    cost = pairwise_cost(u, v, Norm.L2)
    sol = hungarian(cost)
    return ExactResult(distance=sol.cost, matching=sol.matching)


def emd_gradient(u: PointCloud, v: PointCloud, m: Matching) -> GradientField:
    """Gradient of the matched-cost sum with respect to each target point.

    Row j is the unit vector (v_j - u_{m^-1(j)}) / ||.||; rows where the
    matched points coincide are zero (the minimum-norm subgradient at the
    non-differentiable point).
    """
    if len(m) != u.n or u.n != v.n:
        raise ValueError("matching size must equal cloud size")
    inv = m.inverse().assign
    diff = v.points - u.points[inv]
    norms = np.linalg.norm(diff, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        grads = np.where(norms > 0, diff / norms, 0.0)
    return grads
