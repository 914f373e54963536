"""Piecewise-linear time maps.

A :class:`TimeMap` maps reference seconds to target seconds through a list
of knots. It is used for tempo curves, ground-truth score-to-performance
correspondences and the output of DTW alignment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class TimeMap:
    """Monotone piecewise-linear map defined by knots ``(x[k], y[k])``.

    ``x`` is strictly increasing and ``y`` non-decreasing. Outside the knot
    range the first/last segment is extended linearly; a single-knot map is
    constant.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).ravel()
        y = np.array(self.y, dtype=np.float64).ravel()
        if x.shape != y.shape or x.size == 0:
            raise ValueError("time map needs equally many (>= 1) x and y knots")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("time map knots must be finite")
        if np.any(np.diff(x) <= 0):
            raise ValueError("time map x knots must be strictly increasing")
        if np.any(np.diff(y) < 0):
            raise ValueError("time map must be monotone non-decreasing")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def identity(cls, duration: float = 1.0) -> "TimeMap":
        return cls([0.0, duration], [0.0, duration])

    @classmethod
    def from_segments(cls, slopes, breakpoints) -> "TimeMap":
        """Build a map through the origin with ``slopes[k]`` on ``[breakpoints[k], breakpoints[k+1]]``."""
        breakpoints = np.asarray(breakpoints, dtype=np.float64)
        slopes = np.asarray(slopes, dtype=np.float64)
        if breakpoints.size != slopes.size + 1:
            raise ValueError("need one more breakpoint than slopes")
        y = np.concatenate([[0.0], np.cumsum(slopes * np.diff(breakpoints))]) + breakpoints[0]
        return cls(breakpoints, y)

    def __len__(self) -> int:
        return self.x.size

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.x.size == 1:
            return np.full_like(t, self.y[0]) if t.ndim else float(self.y[0])
        out = np.interp(t, self.x, self.y)
        lo_slope = (self.y[1] - self.y[0]) / (self.x[1] - self.x[0])
        hi_slope = (self.y[-1] - self.y[-2]) / (self.x[-1] - self.x[-2])
        out = np.where(t < self.x[0], self.y[0] + (t - self.x[0]) * lo_slope, out)
        out = np.where(t > self.x[-1], self.y[-1] + (t - self.x[-1]) * hi_slope, out)
        return out if out.ndim else float(out)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.y) / np.diff(self.x)

    def is_strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.y) > 0))

    def shifted(self, delta: float) -> "TimeMap":
        """Map with every output time moved by ``delta`` seconds."""
        return TimeMap(self.x, self.y + delta)

    def to_csv(self, path, header=("score_time_s", "perf_time_s")) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for a, b in zip(self.x, self.y):
                writer.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path) -> "TimeMap":
        rows = []
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ValueError(f"{path}: empty time-map CSV")
            for row in reader:
                if row:
                    rows.append((float(row[0]), float(row[1])))
        if not rows:
            raise ValueError(f"{path}: time-map CSV has no rows")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1])

    def __eq__(self, other):
        if not isinstance(other, TimeMap):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    __hash__ = None


class GroundTruthMap(TimeMap):
    """Known score-time to performance-time correspondence.

    Unlike a general :class:`TimeMap`, both coordinates must be strictly
    increasing.
    """

    def __post_init__(self):
        super().__post_init__()
        if np.any(np.diff(self.y) <= 0):
            raise ValueError("ground-truth performance times must be strictly increasing")

    @property
    def knots(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])
