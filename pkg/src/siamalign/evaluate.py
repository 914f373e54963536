"""Alignment scoring, the chroma-DTW baseline and the benchmark table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .audio_io import AudioBuffer, require_same_rate
from .dtw import align, path_to_time_map
from .features import chroma, cqt_magnitude
from .similarity import feature_distance
from .timemap import TimeMap

THRESHOLDS_S = (0.025, 0.05, 0.1, 0.2)


@dataclass
class AlignmentReport:
    errors: np.ndarray  # signed, seconds
    accuracy: dict  # threshold (s) -> percent of |e| < threshold
    mean_abs_error: float
    piece_id: str = ""
    system_id: str = ""

    def row(self) -> list[float]:
        return [self.accuracy[t] for t in THRESHOLDS_S]


def threshold_accuracy(errors, thresholds=THRESHOLDS_S) -> dict:
    """Percentage of ``|errors| < threshold`` for each threshold (strict bound)."""
    e = np.abs(np.asarray(errors, dtype=np.float64))
    if e.size == 0:
        raise ValueError("no errors to score")
    return {t: 100.0 * np.count_nonzero(e < t) / e.size for t in thresholds}


def score_alignment(estimated: TimeMap, truth: TimeMap, events, piece_id: str = "", system_id: str = "", thresholds=THRESHOLDS_S) -> AlignmentReport:
    """Signed errors ``estimated(t) - truth(t)`` at each reference event time ``t``."""
    events = np.asarray(events, dtype=np.float64)
    if events.size == 0:
        raise ValueError("empty event list")
    errors = np.asarray(estimated(events), dtype=np.float64) - np.asarray(truth(events), dtype=np.float64)
    return AlignmentReport(errors, threshold_accuracy(errors, thresholds), float(np.mean(np.abs(errors))), piece_id, system_id)


def chroma_dtw_path(perf: AudioBuffer, score: AudioBuffer, band: int | None = None):
    """``(cost matrix with score rows, warping path)`` of the chroma baseline."""
    require_same_rate(perf, score)
    cost = feature_distance(chroma(cqt_magnitude(score)), chroma(cqt_magnitude(perf)))
    return cost, align(cost, band)


def chroma_dtw_baseline(perf: AudioBuffer, score: AudioBuffer, band: int | None = None) -> TimeMap:
    """Score-time to performance-time map from DTW on Euclidean chroma distances."""
    cost, path = chroma_dtw_path(perf, score, band)
    return path_to_time_map(path, cost.row_hop_s, cost.col_hop_s, cost.row_offset_s, cost.col_offset_s)


@dataclass
class AlignmentSystem:
    """A named pipeline ``piece -> score-to-performance TimeMap``.

    ``mode`` picks the column group of the results table (as in the
    binary/distance split); baselines go under ``distance``.
    """

    name: str
    align: Callable
    mode: str = "distance"


@dataclass
class BenchmarkResult:
    reports: dict = field(default_factory=dict)  # (name, mode) -> list[AlignmentReport]
    failures: list = field(default_factory=list)  # (name, mode, piece_id, message)

    def mean_accuracy(self, name: str, mode: str = "distance") -> dict:
        """Piece-weighted mean: every piece counts once regardless of its event count."""
        reps = self.reports[(name, mode)]
        return {t: float(np.mean([r.accuracy[t] for r in reps])) for t in THRESHOLDS_S}

    def systems(self) -> list[str]:
        seen = []
        for name, _ in self.reports:
            if name not in seen:
                seen.append(name)
        return seen

    def table_rows(self):
        for name in self.systems():
            cells = []
            for mode in ("binary", "distance"):
                if (name, mode) in self.reports:
                    acc = self.mean_accuracy(name, mode)
                    cells += [acc[t] for t in THRESHOLDS_S]
                else:
                    cells += [None] * len(THRESHOLDS_S)
            yield name, cells

    def header(self) -> list[str]:
        cols = [f"<{int(round(t * 1000))}ms" for t in THRESHOLDS_S]
        return ["model"] + [f"binary {c}" for c in cols] + [f"distance {c}" for c in cols]

    def to_text(self) -> str:
        cols = [f"<{int(round(t * 1000))}ms" for t in THRESHOLDS_S]
        rows = list(self.table_rows())
        width = max([len("model")] + [len(n) for n, _ in rows])
        lines = [
            " " * width + " | " + "binary matrix".center(7 * len(cols) - 1) + " | " + "distance matrix".center(7 * len(cols) - 1),
            "model".ljust(width) + " | " + " ".join(c.rjust(6) for c in cols) + " | " + " ".join(c.rjust(6) for c in cols),
        ]
        lines.append("-" * len(lines[1]))
        for name, cells in rows:
            fmt = ["     -" if v is None else f"{v:6.1f}" for v in cells]
            k = len(cols)
            lines.append(name.ljust(width) + " | " + " ".join(fmt[:k]) + " | " + " ".join(fmt[k:]))
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self.header())
        for name, cells in self.table_rows():
            writer.writerow([name] + ["" if v is None else f"{v:.4f}" for v in cells])
        return buf.getvalue()


def run_benchmark(pieces, systems) -> BenchmarkResult:
    """Score every system on every piece.

    Failures (exceptions raised by a system) are recorded and do not stop
    the run.
    """
    result = BenchmarkResult()
    for system in systems:
        key = (system.name, system.mode)
        result.reports.setdefault(key, [])
        for piece in pieces:
            try:
                estimated = system.align(piece)
            except Exception as exc:  # noqa: BLE001 - reported per piece
                result.failures.append((system.name, system.mode, piece.piece_id, f"{type(exc).__name__}: {exc}"))
                continue
            report = score_alignment(estimated, piece.ground_truth, piece.event_times(), piece.piece_id, system.name)
            result.reports[key].append(report)
    return result
