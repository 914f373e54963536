"""Dynamic time warping over a local-cost matrix.

Recurrence::

    D(i, j) = d(i, j) + min(D(i, j-1), D(i-1, j), D(i-1, j-1)),  D(0, 0) = d(0, 0)

Indices are 0-based. Backtracking prefers the diagonal predecessor, then
vertical ``(i-1, j)``, then horizontal ``(i, j-1)`` on ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .timemap import TimeMap

DIAG, VERT, HORIZ = 1, 2, 3


class DTWError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WarpingPath:
    """Monotone index path from ``(0, 0)`` to ``(m-1, n-1)`` and its summed cost."""

    steps: np.ndarray
    total_cost: float

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1, 2)
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return self.steps.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.steps.tolist()))

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.steps[-1, 0]) + 1, int(self.steps[-1, 1]) + 1

    def is_valid(self, shape=None) -> bool:
        s = self.steps
        if s.shape[0] == 0 or tuple(s[0]) != (0, 0):
            return False
        end = (shape[0] - 1, shape[1] - 1) if shape is not None else tuple(s[-1])
        if tuple(s[-1]) != tuple(end):
            return False
        d = np.diff(s, axis=0)
        return bool(np.all((d >= 0) & (d <= 1)) and np.all(d.sum(axis=1) > 0))

    def transposed(self) -> "WarpingPath":
        return WarpingPath(self.steps[:, ::-1], self.total_cost)

    def __eq__(self, other):
        if not isinstance(other, WarpingPath):
            return NotImplemented
        return np.array_equal(self.steps, other.steps) and self.total_cost == other.total_cost

    __hash__ = None


@numba.njit(cache=True)
def _dtw_kernel(cost, lo, hi):
    m, n = cost.shape
    pred = np.zeros((m, n), dtype=np.uint8)
    prev = np.full(n, np.inf)
    cur = np.full(n, np.inf)
    for i in range(m):
        for j in range(n):
            cur[j] = np.inf
        for j in range(lo[i], hi[i]):
            if i == 0 and j == 0:
                cur[0] = cost[0, 0]
                continue
            best = np.inf
            code = 0
            if i > 0 and j > 0 and prev[j - 1] < best:
                best = prev[j - 1]
                code = 1
            if i > 0 and prev[j] < best:
                best = prev[j]
                code = 2
            if j > 0 and cur[j - 1] < best:
                best = cur[j - 1]
                code = 3
            if code != 0:
                cur[j] = cost[i, j] + best
                pred[i, j] = code
        for j in range(n):
            prev[j] = cur[j]
    return prev[n - 1], pred


@numba.njit(cache=True)
def _backtrack(pred):
    m, n = pred.shape
    out = np.empty((m + n, 2), dtype=np.int64)
    i, j = m - 1, n - 1
    k = 0
    out[k, 0], out[k, 1] = i, j
    while i > 0 or j > 0:
        code = pred[i, j]
        if code == 1:
            i -= 1
            j -= 1
        elif code == 2:
            i -= 1
        else:
            j -= 1
        k += 1
        out[k, 0], out[k, 1] = i, j
    return out[: k + 1][::-1].copy()


def band_limits(m: int, n: int, radius: int | None):
    """Column range ``[lo[i], hi[i])`` per row for a Sakoe-Chiba band.

    The band follows the straight line joining the two corners, so
    rectangular matrices are handled; ``radius=None`` means unconstrained.
    """
    if radius is None:
        return np.zeros(m, dtype=np.int64), np.full(m, n, dtype=np.int64)
    if radius < 0:
        raise DTWError("band radius must be non-negative")
    centre = np.arange(m) * ((n - 1) / (m - 1)) if m > 1 else np.zeros(1)
    lo = np.clip(np.ceil(centre - radius), 0, n - 1).astype(np.int64)
    hi = np.clip(np.floor(centre + radius) + 1, 1, n).astype(np.int64)
    return lo, hi


def accumulated_cost(cost, band: int | None = None) -> float:
    """Minimum total cost only (no path)."""
    return align(cost, band).total_cost


def align(cost, band: int | None = None) -> WarpingPath:
    """Minimum-cost monotone path through ``cost`` (an array or SimilarityMatrix).

    ``band`` is an optional Sakoe-Chiba radius in columns around the
    corner-to-corner diagonal.
    """
    values = getattr(cost, "values", cost)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise DTWError(f"cost matrix must be non-empty 2-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DTWError("cost matrix entries must be finite")
    m, n = values.shape
    lo, hi = band_limits(m, n, band)
    total, pred = _dtw_kernel(values, lo, hi)
    if not np.isfinite(total):
        raise DTWError(f"band radius {band} disconnects the corners of a {m}x{n} matrix")
    return WarpingPath(_backtrack(pred), float(total))


def path_to_time_map(path: WarpingPath, hop_row: float, hop_col: float, offset_row: float = 0.0, offset_col: float = 0.0) -> TimeMap:
    """Convert an index path to a row-time -> column-time map.

    Row frame ``i`` sits at ``offset_row + i * hop_row`` (likewise for
    columns). Runs of steps sharing a row index are averaged into one knot,
    then runs sharing a column index are averaged too, which leaves a map
    that is strictly increasing in both coordinates except for single-knot
    paths.
    """
    steps = path.steps
    rows, inverse = np.unique(steps[:, 0], return_inverse=True)
    cols = np.bincount(inverse, weights=steps[:, 1]) / np.bincount(inverse)
    # vertical runs: consecutive rows mapped to the same (averaged) column
    keys, inverse = np.unique(cols, return_inverse=True)
    rows = np.bincount(inverse, weights=rows) / np.bincount(inverse)
    return TimeMap(offset_row + rows * hop_row, offset_col + keys * hop_col)
