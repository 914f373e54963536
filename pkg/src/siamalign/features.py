"""Spectral input representations: STFT magnitude, CQT magnitude and chroma.

All extractors return a :class:`FeatureMatrix` with frames along axis 0.
Frame ``i`` is centered at ``time_offset_s + i * frame_hop_s`` seconds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioBuffer

KINDS = ("stft", "cqt", "chroma", "salience")

DEFAULT_HOP_S = 0.023
DEFAULT_WINDOW_S = 0.046
CQT_FMIN = 65.4
CQT_BINS_PER_OCTAVE = 24
CQT_OCTAVES = 6
LOG_GAMMA = 10.0


class FeatureError(ValueError):
    """Invalid input for a feature extractor."""


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Frames x bins matrix of non-negative values.

    ``bin_labels`` holds the center frequency in Hz for stft/cqt/salience
    bins and the pitch-class index for chroma. ``params`` records the
    extraction settings (including the sample counts the second-valued
    hop/window were rounded to).
    """

    values: np.ndarray
    frame_hop_s: float
    bin_labels: np.ndarray
    kind: str
    time_offset_s: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype.kind != "f":
            values = values.astype(np.float64)
        if values.ndim != 2:
            raise FeatureError(f"feature values must be 2-D, got shape {values.shape}")
        if self.kind not in KINDS:
            raise FeatureError(f"unknown feature kind {self.kind!r}")
        if not self.frame_hop_s > 0:
            raise FeatureError("frame_hop_s must be positive")
        if not np.all(np.isfinite(values)) or (values.size and values.min() < 0):
            raise FeatureError("feature values must be finite and non-negative")
        labels = np.asarray(self.bin_labels, dtype=np.float64)
        if labels.shape != (values.shape[1],):
            raise FeatureError("need one bin label per column")
        if self.kind == "chroma" and values.shape[1] != 12:
            raise FeatureError("chroma features must have 12 bins")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bin_labels", labels)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    def frame_times(self) -> np.ndarray:
        return self.time_offset_s + np.arange(self.n_frames) * self.frame_hop_s

    def with_values(self, values, **changes) -> "FeatureMatrix":
        return replace(self, values=values, **changes)

    def to_csv(self, path) -> None:
        """Write as CSV: a header row (kind, hop_s, bin labels...) then one row per frame."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([self.kind, repr(self.frame_hop_s)] + [repr(float(b)) for b in self.bin_labels])
            for t, row in zip(self.frame_times(), self.values):
                writer.writerow([repr(float(t)), ""] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise FeatureError(f"{path}: empty feature CSV")
        kind, hop = rows[0][0], float(rows[0][1])
        labels = np.array([float(v) for v in rows[0][2:]])
        body = np.array([[float(v) for v in r[2:]] for r in rows[1:]]).reshape(-1, labels.size)
        offset = float(rows[1][0]) if len(rows) > 1 else 0.0
        return cls(body, hop, labels, kind, time_offset_s=offset)

    def save_png(self, path, title: str | None = None) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4))
        extent = (self.time_offset_s, self.time_offset_s + self.n_frames * self.frame_hop_s, 0, self.n_bins)
        ax.imshow(self.values.T, origin="lower", aspect="auto", extent=extent, cmap="magma")
        ax.set_xlabel("time (s)")
        ax.set_ylabel(f"{self.kind} bin")
        ax.set_title(title or self.kind)
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def stft_magnitude(audio: AudioBuffer, hop_s: float = DEFAULT_HOP_S, window_s: float = DEFAULT_WINDOW_S) -> FeatureMatrix:
    """Hamming-windowed STFT magnitude without padding.

    ``W = round(window_s * sr)`` and ``H = round(hop_s * sr)``; there are
    ``floor((N - W) / H) + 1`` frames, each zero-padded to the next power of
    two, giving ``nfft/2 + 1`` bins.
    """
    if window_s < hop_s:
        raise FeatureError("window must be at least one hop long")
    sr = audio.sample_rate
    win = int(round(window_s * sr))
    hop = int(round(hop_s * sr))
    if hop < 1 or win < 1:
        raise FeatureError("hop and window must round to at least one sample")
    if len(audio) < win:
        raise FeatureError(f"audio ({len(audio)} samples) shorter than one window ({win} samples)")
    nfft = _next_pow2(win)
    frames = sliding_window_view(audio.samples, win)[::hop]
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n=nfft, axis=1))
    return FeatureMatrix(
        spec,
        hop / sr,
        np.arange(nfft // 2 + 1) * sr / nfft,
        "stft",
        time_offset_s=(win / 2) / sr,
        params={"hop_samples": hop, "window_samples": win, "nfft": nfft, "sample_rate": sr},
    )


def cqt_frequencies(bins_per_octave: int = CQT_BINS_PER_OCTAVE, f_min: float = CQT_FMIN, n_octaves: int = CQT_OCTAVES) -> np.ndarray:
    k = np.arange(bins_per_octave * n_octaves)
    return f_min * 2.0 ** (k / bins_per_octave)


@lru_cache(maxsize=8)
def _cqt_kernels(sr: int, bins_per_octave: int, f_min: float, n_octaves: int):
    freqs = cqt_frequencies(bins_per_octave, f_min, n_octaves)
    q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
    kernels = []
    for f in freqs:
        n = int(np.ceil(q * sr / f))
        idx = np.arange(n) - (n - 1) / 2.0
        window = np.hanning(n + 2)[1:-1]
        # normalized so a unit-amplitude sinusoid at f reads 0.5
        k = window * np.exp(-2j * np.pi * f * idx / sr) / window.sum()
        kernels.append(np.column_stack([k.real, k.imag]))
    return freqs, q, kernels


def cqt_magnitude(
    audio: AudioBuffer,
    bins_per_octave: int = CQT_BINS_PER_OCTAVE,
    f_min: float = CQT_FMIN,
    n_octaves: int = CQT_OCTAVES,
    hop_s: float = DEFAULT_HOP_S,
) -> FeatureMatrix:
    """Constant-Q magnitude by direct projection on per-bin Hann-windowed kernels.

    Bin ``k`` is centered at ``f_min * 2**(k / bins_per_octave)`` with
    ``Q = 1 / (2**(1/bins_per_octave) - 1)``; kernel ``k`` spans
    ``ceil(Q * sr / f_k)`` samples. Frames are centered at multiples of the
    hop, the signal being zero-padded at both ends.
    """
    sr = audio.sample_rate
    freqs, q, kernels = _cqt_kernels(sr, bins_per_octave, float(f_min), n_octaves)
    if freqs[-1] >= sr / 2:
        raise FeatureError(f"highest CQT bin ({freqs[-1]:.1f} Hz) is above Nyquist for sr={sr}")
    longest = kernels[0].shape[0]
    if len(audio) < longest:
        raise FeatureError(f"audio ({len(audio)} samples) shorter than the lowest CQT kernel ({longest} samples)")
    hop = int(round(hop_s * sr))
    n_frames = (len(audio) - 1) // hop + 1
    pad = longest
    x = np.pad(audio.samples, (pad, pad))
    windows = sliding_window_view(x, longest)
    centers = pad + np.arange(n_frames) * hop
    out = np.empty((n_frames, len(kernels)))
    for b, kern in enumerate(kernels):
        n = kern.shape[0]
        starts = centers - (n - 1) // 2
        seg = windows[starts, :n]
        proj = seg @ kern
        out[:, b] = np.hypot(proj[:, 0], proj[:, 1])
    return FeatureMatrix(
        out,
        hop / sr,
        freqs,
        "cqt",
        time_offset_s=0.0,
        params={
            "hop_samples": hop,
            "bins_per_octave": bins_per_octave,
            "f_min": float(f_min),
            "n_octaves": n_octaves,
            "q": q,
            "sample_rate": sr,
        },
    )


def pitch_classes(n_bins: int, bins_per_octave: int) -> np.ndarray:
    """Pitch class of each CQT bin, taking bin 0 as C."""
    return np.floor(np.arange(n_bins) * 12.0 / bins_per_octave + 0.5).astype(int) % 12


def chroma(cqt: FeatureMatrix) -> FeatureMatrix:
    """Fold CQT bins into 12 pitch classes, then scale each frame to max 1.

    All-zero frames stay zero.
    """
    if cqt.kind != "cqt":
        raise FeatureError(f"chroma needs a cqt feature matrix, got {cqt.kind!r}")
    bpo = cqt.params.get("bins_per_octave", CQT_BINS_PER_OCTAVE)
    pcs = pitch_classes(cqt.n_bins, bpo)
    folded = np.zeros((cqt.n_frames, 12))
    for c in range(12):
        folded[:, c] = cqt.values[:, pcs == c].sum(axis=1)
    return FeatureMatrix(
        normalize_frames(folded),
        cqt.frame_hop_s,
        np.arange(12, dtype=np.float64),
        "chroma",
        time_offset_s=cqt.time_offset_s,
        params=dict(cqt.params),
    )


def normalize_frames(values: np.ndarray) -> np.ndarray:
    """Divide each row by its maximum; all-zero rows stay zero."""
    peak = values.max(axis=1, keepdims=True)
    return np.divide(values, peak, out=np.zeros_like(values, dtype=np.float64), where=peak > 0)


def log_compress(features: FeatureMatrix, gamma: float = LOG_GAMMA) -> FeatureMatrix:
    """``log(1 + gamma * x)`` compression applied before the network."""
    params = dict(features.params, log_gamma=gamma)
    return features.with_values(np.log1p(gamma * features.values), params=params)


def extract(audio: AudioBuffer, kind: str, **params) -> FeatureMatrix:
    """Dispatch to the extractor for ``kind``.

    ``salience`` computes a CQT and then harmonic salience, or the learned
    salience model if ``model=`` is given.
    """
    if kind == "stft":
        return stft_magnitude(audio, **params)
    if kind == "cqt":
        return cqt_magnitude(audio, **params)
    if kind == "chroma":
        return chroma(cqt_magnitude(audio, **params))
    if kind == "salience":
        from . import salience

        model = params.pop("model", None)
        n_harmonics = params.pop("n_harmonics", 5)
        cqt = cqt_magnitude(audio, **params)
        if model is not None:
            return model.predict(cqt)
        return salience.harmonic_salience(cqt, n_harmonics=n_harmonics)
    raise FeatureError(f"unknown feature kind {kind!r}; expected one of {KINDS}")


__all__ = [
    "FeatureMatrix",
    "FeatureError",
    "stft_magnitude",
    "cqt_magnitude",
    "cqt_frequencies",
    "chroma",
    "extract",
    "log_compress",
    "normalize_frames",
    "pitch_classes",
]
