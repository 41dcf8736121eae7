"""Optimal bipartite assignment of ground-truth instances to queries.

Rectangular-aware Hungarian solve (shortest augmenting path with row and
column potentials) run in exact rational arithmetic, so optimality and
tie detection never depend on float rounding. Ties between equally cheap
assignments are broken toward the lexicographically smallest
query-index sequence (ordered by ground-truth index).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError

_INF = float("inf")


@dataclass(frozen=True)
class MatchAssignment:
    """Injection of ground-truth indices into query indices.

    ``pairs`` holds (query index, gt index) sorted by gt index; every gt
    appears exactly once and query indices are pairwise distinct.
    """

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def query_for_gt(self, j: int) -> int:
        return self.pairs[j][0]

    @property
    def matched_queries(self) -> set[int]:
        return {i for i, _ in self.pairs}


def _solve_min_cost(cost: list[list[Fraction]]) -> tuple[Fraction, list[int]]:
    """Exact min-cost assignment of all rows into columns (rows <= cols).

    Returns (total, col_of_row). Classic augmenting-path scheme with
    potentials; 1-indexed internally with a virtual column 0.
    """
    n = len(cost)
    if n == 0:
        return Fraction(0), []
    m = len(cost[0])
    u = [Fraction(0)] * (n + 1)
    v = [Fraction(0)] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [_INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                elif minv[j] != _INF:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            p[j0] = p[way[j0]]
            j0 = way[j0]
    col_of_row = [0] * n
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    total = sum((cost[i][col_of_row[i]] for i in range(n)), Fraction(0))
    return total, col_of_row


def hungarian(cost: np.ndarray) -> MatchAssignment:
    """Minimum-cost injection of gts (columns) into queries (rows).

    ``cost`` is [n_queries, n_gts] with n_queries >= n_gts >= 1. Among
    all optimal assignments, returns the one whose query-index sequence
    (by ascending gt index) is lexicographically smallest.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeMismatchError(f"cost matrix must be 2-d, got shape {cost.shape}")
    n, m = cost.shape
    if m < 1 or n < m:
        raise ShapeMismatchError(f"need n_queries >= n_gts >= 1, got {n} x {m}")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteError("cost matrix contains non-finite entries")

    # Exact rationals: float -> Fraction is lossless.
    rows = [[Fraction(float(cost[i, j])) for j in range(m)] for i in range(n)]
    transposed = [[rows[i][j] for i in range(n)] for j in range(m)]
    best_total, _ = _solve_min_cost(transposed)

    # Fix the cheapest-feasible query per gt in order; re-solving the
    # remainder certifies each candidate keeps the optimum attainable.
    chosen: list[int] = []
    used: set[int] = set()
    fixed = Fraction(0)
    for j in range(m):
        free = [i for i in range(n) if i not in used]
        for i in free:
            rest_rows = [
                [rows[q][jj] for q in free if q != i] for jj in range(j + 1, m)
            ]
            rest_total, _ = _solve_min_cost(rest_rows)
            if fixed + rows[i][j] + rest_total == best_total:
                chosen.append(i)
                used.add(i)
                fixed += rows[i][j]
                break

    total = 0.0
    for j, i in enumerate(chosen):
        total += float(cost[i, j])
    pairs = tuple((i, j) for j, i in enumerate(chosen))
    return MatchAssignment(pairs=pairs, total_cost=total)
