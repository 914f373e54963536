"""Frame dissimilarity matrices from a trained Siamese model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .features import FeatureMatrix

MODES = ("distance", "binary")


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Rows index the first sequence's frames, columns the second's.

    ``distance`` mode holds Euclidean embedding distances; ``binary`` mode
    holds 1 where the distance exceeds the threshold (dissimilar) and 0
    elsewhere.
    """

    values: np.ndarray
    mode: str
    row_hop_s: float
    col_hop_s: float
    row_offset_s: float = 0.0
    col_offset_s: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if self.mode not in MODES:
            raise ValueError(f"unknown similarity mode {self.mode!r}")
        if v.ndim != 2 or not np.all(np.isfinite(v)) or (v.size and v.min() < 0):
            raise ValueError("similarity values must be a finite non-negative matrix")
        if self.mode == "binary" and not np.all((v == 0) | (v == 1)):
            raise ValueError("binary similarity values must be 0 or 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @property
    def T(self) -> "SimilarityMatrix":
        return SimilarityMatrix(self.values.T, self.mode, self.col_hop_s, self.row_hop_s, self.col_offset_s, self.row_offset_s)

    def binarize(self, tau: float) -> "SimilarityMatrix":
        if self.mode != "distance":
            raise ValueError("only distance matrices can be binarized")
        return SimilarityMatrix((self.values > tau).astype(np.float64), "binary", self.row_hop_s, self.col_hop_s, self.row_offset_s, self.col_offset_s)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.9g")

    def save_png(self, path, title: str | None = None) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 6))
        ax.imshow(self.values, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xlabel("column frame")
        ax.set_ylabel("row frame")
        ax.set_title(title or f"{self.mode} matrix")
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)


def _check(features, model):
    fm = features if isinstance(features, FeatureMatrix) else features[0]
    if fm.kind != model.config.feature_kind:
        raise ValueError(f"model was trained on {model.config.feature_kind!r} features, got {fm.kind!r}")
    return fm


def build(perf, score, model, mode: str = "distance", tau: float | None = None,
          expected_fingerprint: str | None = None, batch_size: int = 256) -> SimilarityMatrix:
    """Dissimilarity matrix with perf frames as rows and score frames as columns.

    Each frame is embedded once (m + n tower passes); distances are then
    computed for all pairs. Binary mode thresholds the distances at ``tau``
    (default: the model's configured threshold, margin / 2).
    """
    if mode not in MODES:
        raise ValueError(f"unknown similarity mode {mode!r}; expected one of {MODES}")
    if expected_fingerprint is not None and model.fingerprint != expected_fingerprint:
        from .nn import FingerprintMismatchError

        raise FingerprintMismatchError(
            f"model fingerprint {model.fingerprint[:12]} does not match expected {expected_fingerprint[:12]}"
        )
    row_fm = _check(perf, model)
    col_fm = _check(score, model)
    e_rows = model.embed_frames(perf, batch_size).astype(np.float64)
    e_cols = model.embed_frames(score, batch_size).astype(np.float64)
    dist = cdist(e_rows, e_cols, metric="euclidean")
    out = SimilarityMatrix(dist, "distance", row_fm.frame_hop_s, col_fm.frame_hop_s, row_fm.time_offset_s, col_fm.time_offset_s)
    if mode == "binary":
        out = out.binarize(model.config.tau if tau is None else tau)
    return out


def feature_distance(a: FeatureMatrix, b: FeatureMatrix) -> SimilarityMatrix:
    """Euclidean frame-to-frame distance between two feature sequences."""
    if a.kind != b.kind or a.n_bins != b.n_bins:
        raise ValueError("feature matrices must share kind and bin count")
    return SimilarityMatrix(cdist(a.values, b.values, metric="euclidean"), "distance", a.frame_hop_s, b.frame_hop_s, a.time_offset_s, b.time_offset_s)
