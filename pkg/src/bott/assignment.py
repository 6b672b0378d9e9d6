"""Minimum-cost bipartite assignment."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def hungarian(cost) -> list[tuple[int, int]]:
    """Optimal assignment on a (possibly rectangular) cost matrix.

    Returns (row, col) pairs sorted by row; min(n_rows, n_cols) of them.
    Rectangular inputs are handled directly, which matches padding the
    short side with a constant much larger than any real cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))
