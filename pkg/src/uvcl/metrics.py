"""Cluster accuracy via Hungarian matching and the continual-learning aggregates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass
class Assignment:
    mapping: dict[int, int]
    total_cost: float


@dataclass
class AccuracyTrace:
    per_task: list[float] = field(default_factory=list)

    def append(self, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise DataError(f"accuracy {value} outside [0, 1]")
        self.per_task.append(float(value))

    def __len__(self) -> int:
        return len(self.per_task)


def _solve_square(c: np.ndarray):
    """Shortest-augmenting-path Hungarian method for an n x n matrix.

    Returns ``(row_to_col, u, v)`` where ``u``/``v`` are optimal dual
    potentials: ``c[i, j] - u[i] - v[j] >= 0`` with equality on the matching.
    """
    n = c.shape[0]
    inf = math.inf
    # 1-based arrays with a virtual column 0, as in the classic formulation.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = c[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
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
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _augment(start_row, target_col, adj, col_owner, row_col, blocked_rows, blocked_cols):
    """Find an alternating path from ``start_row`` ending at ``target_col``.

    On success the matching (``col_owner``/``row_col``) is rewired in place.
    """
    seen = set()

    def dfs(r):
        for col in adj[r]:
            if col in blocked_cols or col in seen:
                continue
            seen.add(col)
            owner = col_owner.get(col)
            if col == target_col or (owner is not None and owner not in blocked_rows and dfs(owner)):
                col_owner[col] = r
                row_col[r] = col
                return True
        return False

    return dfs(start_row)


def _lexicographic(c: np.ndarray, row_to_col, u, v, n_real: int):
    """Lexicographically smallest optimum among the tight-edge perfect matchings."""
    n = c.shape[0]
    scale = 1.0 + float(np.max(np.abs(c))) if c.size else 1.0
    tight = np.abs(c - u[:, None] - v[None, :]) <= 1e-9 * scale
    adj = [list(np.flatnonzero(tight[i])) for i in range(n)]
    row_col = {i: int(row_to_col[i]) for i in range(n)}
    col_owner = {col: r for r, col in row_col.items()}
    fixed_rows: set[int] = set()
    fixed_cols: set[int] = set()
    for i in range(n_real):
        for j in adj[i]:
            if j in fixed_cols:
                continue
            if row_col[i] == j:
                break
            # Try to give column j to row i: its owner must re-route to the
            # column row i gives up, through unfixed rows/columns only.
            owner, freed = col_owner[j], row_col[i]
            trial_rc, trial_co = dict(row_col), dict(col_owner)
            del trial_co[freed]
            trial_rc[i], trial_co[j] = j, i
            del trial_rc[owner]
            if _augment(owner, freed, adj, trial_co, trial_rc, fixed_rows | {i}, fixed_cols | {j}):
                row_col, col_owner = trial_rc, trial_co
                break
        fixed_rows.add(i)
        fixed_cols.add(row_col[i])
    return row_col


def hungarian(cost, lexicographic: bool = True) -> Assignment:
    """Minimum-cost injective assignment between rows and columns.

    Pairs ``min(R, C)`` items. With ``lexicographic=True`` ties are broken
    towards the lexicographically smallest assignment, read as the column of
    row 0, row 1, ... (or, when ``R > C``, the row of column 0, 1, ...).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise DataError("cost must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(c)):
        raise DataError("non-finite cost entry")
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    r, k = c.shape
    sq = np.zeros((k, k))
    sq[:r] = c
    row_to_col, u, v = _solve_square(sq)
    if lexicographic:
        rc = _lexicographic(sq, row_to_col, u, v, r)
        pairs = {i: rc[i] for i in range(r)}
    else:
        pairs = {i: int(row_to_col[i]) for i in range(r)}
    total = float(sum(c[i, j] for i, j in pairs.items()))
    if transposed:
        pairs = {j: i for i, j in pairs.items()}
    return Assignment(dict(sorted(pairs.items())), total)


def confusion(pred: Sequence[int], truth: Sequence[int]):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DataError("pred and truth differ in length")
    if pred.size == 0:
        raise DataError("cluster_accuracy needs at least one sample")
    p_ids, p_inv = np.unique(pred, return_inverse=True)
    t_ids, t_inv = np.unique(truth, return_inverse=True)
    counts = np.zeros((p_ids.size, t_ids.size), dtype=np.int64)
    np.add.at(counts, (p_inv, t_inv), 1)
    return counts, p_ids, t_ids


def cluster_accuracy(pred: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction correct after the best one-to-one pseudo-label/label matching."""
    counts, _, _ = confusion(pred, truth)
    a = hungarian(-counts, lexicographic=False)
    correct = sum(counts[i, j] for i, j in a.mapping.items())
    return correct / counts.sum()


def _values(trace) -> list[float]:
    return list(trace.per_task if isinstance(trace, AccuracyTrace) else trace)


def acacc(trace) -> float:
    v = _values(trace)
    if not v:
        raise DataError("empty trace")
    return sum(v) / len(v)


def fwf(trace) -> float:
    """Mean drop between consecutive tasks (positive means forgetting)."""
    v = _values(trace)
    if len(v) < 2:
        raise DataError("fwf needs at least two tasks")
    return sum(v[j - 1] - v[j] for j in range(1, len(v))) / (len(v) - 1)


def fwf_telescoped(trace) -> float:
    v = _values(trace)
    if len(v) < 2:
        raise DataError("fwf needs at least two tasks")
    return (v[0] - v[-1]) / (len(v) - 1)


def bwf(trace) -> float:
    """Mean gain of the final accuracy over each earlier task (negative means forgetting)."""
    v = _values(trace)
    if len(v) < 2:
        raise DataError("bwf needs at least two tasks")
    return sum(v[-1] - v[j] for j in range(len(v) - 1)) / (len(v) - 1)
