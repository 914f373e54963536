"""Pitch salience: harmonic summation and a small learned model.

Both produce a FeatureMatrix of kind ``salience`` on the CQT frequency grid
with values in [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .features import CQT_BINS_PER_OCTAVE, CQT_FMIN, FeatureError, FeatureMatrix, normalize_frames

log = logging.getLogger(__name__)

EPS = 1e-7


def _require_cqt(cqt: FeatureMatrix):
    if cqt.kind != "cqt":
        raise FeatureError(f"salience needs a cqt feature matrix, got {cqt.kind!r}")


def harmonic_salience(cqt: FeatureMatrix, n_harmonics: int = 5) -> FeatureMatrix:
    """Weighted harmonic sum ``S[t, k] = sum_h C[t, k + round(bpo*log2 h)] / h``.

    Harmonic bins past the top of the CQT contribute nothing. Each frame is
    then divided by its maximum.
    """
    _require_cqt(cqt)
    bpo = cqt.params.get("bins_per_octave", CQT_BINS_PER_OCTAVE)
    C = cqt.values
    n_bins = C.shape[1]
    S = np.zeros_like(C, dtype=np.float64)
    for h in range(1, n_harmonics + 1):
        shift = int(round(bpo * np.log2(h)))
        if shift >= n_bins:
            continue
        S[:, : n_bins - shift] += C[:, shift:] / h
    return FeatureMatrix(
        normalize_frames(S),
        cqt.frame_hop_s,
        cqt.bin_labels,
        "salience",
        time_offset_s=cqt.time_offset_s,
        params=dict(cqt.params, salience="harmonic", n_harmonics=n_harmonics),
    )


def _values(m):
    return np.asarray(m.values if isinstance(m, FeatureMatrix) else m, dtype=np.float64)


def salience_cross_entropy(y, y_hat, eps: float = EPS) -> float:
    """Mean binary cross-entropy ``-y log y_hat - (1-y) log(1-y_hat)``.

    ``y_hat`` is clamped to ``[eps, 1-eps]`` first. Accepts arrays or
    FeatureMatrix objects.
    """
    y, y_hat = _values(y), _values(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    p = np.clip(y_hat, eps, 1.0 - eps)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def salience_cross_entropy_grad(y, y_hat, eps: float = EPS) -> np.ndarray:
    """Gradient of :func:`salience_cross_entropy` w.r.t. ``y_hat`` (zero where clamped)."""
    y, y_hat = _values(y), _values(y_hat)
    p = np.clip(y_hat, eps, 1.0 - eps)
    g = (-y / p + (1.0 - y) / (1.0 - p)) / y.size
    return np.where((y_hat >= eps) & (y_hat <= 1.0 - eps), g, 0.0)


def salience_target(track, cqt: FeatureMatrix, sigma_bins: float = 1.0) -> np.ndarray:
    """Ground-truth salience: Gaussian bumps (``sigma_bins`` wide) at every sounding f0.

    A note is sounding in frames whose center lies in ``[onset, offset)``.
    """
    _require_cqt(cqt)
    bpo = cqt.params.get("bins_per_octave", CQT_BINS_PER_OCTAVE)
    f_min = cqt.params.get("f_min", CQT_FMIN)
    times = cqt.frame_times()
    bins = np.arange(cqt.n_bins)
    target = np.zeros((cqt.n_frames, cqt.n_bins))
    for note in track.events:
        b0 = bpo * np.log2(note.frequency / f_min)
        if b0 < -3 * sigma_bins or b0 > cqt.n_bins - 1 + 3 * sigma_bins:
            continue
        active = (times >= note.onset) & (times < note.offset)
        if not active.any():
            continue
        bump = np.exp(-0.5 * ((bins - b0) / sigma_bins) ** 2)
        target[active] = np.maximum(target[active], bump)
    return target


@dataclass(frozen=True)
class SalienceConfig:
    chunk_frames: int = 64
    channels: tuple = (8, 8)
    kernels: tuple = (5, 5)
    out_kernel: int = 3
    n_bins: int = 144
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 4
    zero_init_last: bool = True
    log_gamma: float = 10.0


def salience_specs(config: SalienceConfig) -> list:
    specs = []
    for c, k in zip(config.channels, config.kernels):
        specs += [nn.conv(c, k), nn.relu()]
    specs += [nn.conv(1, config.out_kernel), nn.sigmoid()]
    return specs


class SalienceModel:
    """Three-layer fully convolutional salience estimator on log-CQT input."""

    def __init__(self, config: SalienceConfig = SalienceConfig(), net: nn.Sequential | None = None, seed: int = 0, dtype=np.float32):
        self.config = config
        if net is None:
            net = nn.Sequential(
                salience_specs(config),
                (config.chunk_frames, config.n_bins, 1),
                seed=seed,
                dtype=dtype,
                meta={"model": "salience", "log_gamma": config.log_gamma},
            )
            if config.zero_init_last:
                last_conv = net.layers[-2]
                last_conv.params["weight"][...] = 0
                last_conv.params["bias"][...] = 0
        self.net = net

    def _input(self, cqt: FeatureMatrix) -> np.ndarray:
        _require_cqt(cqt)
        if cqt.n_bins != self.config.n_bins:
            raise FeatureError(f"salience model expects {self.config.n_bins} CQT bins, got {cqt.n_bins}")
        return np.log1p(self.config.log_gamma * cqt.values)[None, :, :, None]

    def predict(self, cqt: FeatureMatrix) -> FeatureMatrix:
        out = self.net.forward(self._input(cqt), train=False, check_shape=False)
        self.net._forward_done = False
        for layer in self.net.layers:
            layer._cache = None
        return FeatureMatrix(
            np.clip(out[0, :, :, 0].astype(np.float64), 0.0, 1.0),
            cqt.frame_hop_s,
            cqt.bin_labels,
            "salience",
            time_offset_s=cqt.time_offset_s,
            params=dict(cqt.params, salience="learned"),
        )

    def loss(self, cqt: FeatureMatrix, target: np.ndarray) -> float:
        return salience_cross_entropy(target, self.predict(cqt).values)

    def save(self, path):
        nn.save_checkpoint(self.net, path, extra={"salience_config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.config.__dict__.items()}})

    @classmethod
    def load(cls, path) -> "SalienceModel":
        net = nn.load_checkpoint(path)
        raw = net.checkpoint_extra.get("salience_config")
        if raw is None:
            raise nn.CheckpointError(f"{path}: not a salience checkpoint")
        cfg = SalienceConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in raw.items()})
        return cls(cfg, net=net)


def _chunks(cqt: FeatureMatrix, target: np.ndarray, size: int, log_gamma: float):
    x = np.log1p(log_gamma * cqt.values)
    n = x.shape[0]
    out = []
    for start in range(0, max(n - size, 0) + 1, size):
        out.append((x[start : start + size], target[start : start + size]))
    return out


def train_salience(corpus, config: SalienceConfig = SalienceConfig(), seed: int = 0):
    """Fit a :class:`SalienceModel` on ``(cqt, target)`` pairs by minimizing the mean cross-entropy.

    Returns ``(model, per-epoch mean training losses)``.
    """
    if not corpus:
        raise ValueError("empty salience corpus")
    chunks = []
    for cqt, target in corpus:
        chunks += _chunks(cqt, target, config.chunk_frames, config.log_gamma)
    chunks = [c for c in chunks if c[0].shape[0] == config.chunk_frames]
    if not chunks:
        raise ValueError(f"clips shorter than one chunk ({config.chunk_frames} frames)")
    X = np.stack([c[0] for c in chunks])[..., None].astype(np.float32)
    Y = np.stack([c[1] for c in chunks])[..., None]
    rng = np.random.default_rng(seed)
    model = SalienceModel(config, seed=int(rng.integers(2**31)))
    opt = nn.SGD(model.net, lr=config.lr, momentum=config.momentum)
    losses = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start : start + config.batch_size])
            pred = model.net.forward(X[idx], train=True)
            loss = salience_cross_entropy(Y[idx], pred)
            if not np.isfinite(loss):
                raise RuntimeError(f"salience training diverged at epoch {epoch}")
            model.net.backward(salience_cross_entropy_grad(Y[idx], pred))
            opt.step()
            total += loss * idx.size
        losses.append(total / len(X))
        log.info("salience epoch %d: loss %.4f", epoch, losses[-1])
    return model, losses
