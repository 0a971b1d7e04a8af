"""Kuhn-Munkres (Hungarian) minimum-cost assignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AssignmentResult:
    mapping: dict[int, int]
    total_cost: float
    pair_costs: dict[int, float] = field(default_factory=dict)
    fresh: list[int] = field(default_factory=list)
    missing: list[int] = field(default_factory=list)


def _solve_square(cost: np.ndarray) -> np.ndarray:
    """Row -> column assignment of a square matrix via shortest augmenting paths.

    Dual potentials ``u`` (rows) and ``v`` (columns) keep reduced costs
    non-negative; each outer iteration inserts one row and augments along the
    cheapest alternating path, so the whole solve is O(n^3).
    """
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_owner = np.zeros(n + 1, dtype=int)  # 1-based row assigned to column j, 0 = free
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        col_owner[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            free = ~used
            free[0] = False
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv, inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[col_owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    row_to_col[col_owner[1:] - 1] = np.arange(n)
    return row_to_col


def hungarian(cost) -> AssignmentResult:
    """Minimum-total-cost injective assignment of rows to columns.

    Rectangular inputs are padded to square with a sentinel of ten times the
    largest absolute entry; only real row/column pairs are reported, so
    ``min(n_rows, n_cols)`` pairs come back.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if np.isnan(c).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains infinite entries")
    n_rows, n_cols = c.shape
    if n_rows == 0 or n_cols == 0:
        return AssignmentResult({}, 0.0)
    n = max(n_rows, n_cols)
    sentinel = 10.0 * max(float(np.abs(c).max()), 1.0)
    square = np.full((n, n), sentinel)
    square[:n_rows, :n_cols] = c
    row_to_col = _solve_square(square)

    mapping, pair_costs = {}, {}
    total = 0.0
    for r in range(n_rows):
        col = int(row_to_col[r])
        if col < n_cols:
            mapping[r] = col
            pair_costs[r] = float(c[r, col])
            total += float(c[r, col])
    return AssignmentResult(mapping, total, pair_costs)
