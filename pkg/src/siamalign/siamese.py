"""Twin-tower frame-similarity model trained with contrastive loss.

Both towers are the same :class:`~siamalign.nn.Sequential`; a pair's
dissimilarity is the Euclidean distance between the two embeddings.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .features import LOG_GAMMA, FeatureMatrix
from .nn.functional import ShapeError
from .timemap import TimeMap

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class SiameseConfig:
    """Architecture and input settings.

    Patches are ``patch_frames`` (time) x ``patch_bins`` (frequency) x
    ``channels``. Feature bins are max-pooled by ``bin_pool`` before
    patching, so ``patch_bins`` must equal ``ceil(n_bins / bin_pool)``.
    ``threshold`` (binary similarity cut-off) defaults to ``margin / 2``.
    """

    patch_frames: int = 32
    patch_bins: int = 32
    channels: int = 1
    conv_channels: tuple = (16, 32, 64, 128)
    kernels: tuple = (5, 5, 3, 3)
    embed_dim: int = 128
    margin: float = 1.0
    threshold: float | None = None
    feature_kind: str = "cqt"
    bin_pool: int = 1
    log_gamma: float = LOG_GAMMA

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if not 0 < self.tau < self.margin:
            raise ValueError("threshold must lie in (0, margin)")
        if len(self.conv_channels) != len(self.kernels):
            raise ValueError("need one kernel size per conv layer")
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))

    @property
    def tau(self) -> float:
        return self.margin / 2 if self.threshold is None else self.threshold

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.patch_frames, self.patch_bins, self.channels)

    def specs(self) -> list:
        return tower_specs(self.conv_channels, self.kernels, self.embed_dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["kernels"] = list(self.kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SiameseConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["kernels"] = tuple(d["kernels"])
        return cls(**d)


FULL_SCALE_CHANNELS = (64, 128, 256, 512)
FULL_SCALE_KERNELS = (5, 5, 3, 3)


def tower_specs(conv_channels=FULL_SCALE_CHANNELS, kernels=FULL_SCALE_KERNELS, embed_dim=128) -> list:
    """Conv stack of the embedding tower.

    Each conv is followed by ReLU then batch norm; all but the last conv are
    followed by 2x2 max pooling; then flatten and one dense layer.
    """
    specs = []
    last = len(conv_channels) - 1
    for i, (c, k) in enumerate(zip(conv_channels, kernels)):
        specs += [nn.conv(c, k), nn.relu(), nn.batchnorm()]
        if i != last:
            specs.append(nn.maxpool(2))
    specs += [nn.flatten(), nn.dense(embed_dim)]
    return specs


def full_scale_config(**overrides) -> SiameseConfig:
    """Full-size tower on 128x128x3 inputs (for shape checks; too big to train here)."""
    base = dict(patch_frames=128, patch_bins=128, channels=3, conv_channels=FULL_SCALE_CHANNELS, kernels=FULL_SCALE_KERNELS)
    base.update(overrides)
    return SiameseConfig(**base)


# ---------------------------------------------------------------------------
# input preparation


def prepare_input(features, config: SiameseConfig) -> np.ndarray:
    """Turn one FeatureMatrix (or a list, one per channel) into a frames x bins x C array.

    STFT and CQT magnitudes are log-compressed; bins are then max-pooled by
    ``config.bin_pool``.
    """
    mats = [features] if isinstance(features, FeatureMatrix) else list(features)
    if len(mats) != config.channels:
        raise ShapeError(f"config expects {config.channels} channel(s), got {len(mats)} feature matrices")
    chans = []
    for fm in mats:
        if fm.kind != config.feature_kind:
            raise ValueError(f"model expects {config.feature_kind!r} features, got {fm.kind!r}")
        v = fm.values
        if fm.kind in ("stft", "cqt") and "log_gamma" not in fm.params:
            v = np.log1p(config.log_gamma * v)
        if config.bin_pool > 1:
            p = config.bin_pool
            pad = (-v.shape[1]) % p
            if pad:
                v = np.pad(v, ((0, 0), (0, pad)))
            v = v.reshape(v.shape[0], -1, p).max(axis=2)
        chans.append(v)
    frames = {c.shape[0] for c in chans}
    if len(frames) != 1:
        raise ShapeError("channel feature matrices have different frame counts")
    x = np.stack(chans, axis=-1).astype(np.float32)
    if x.shape[1] != config.patch_bins:
        raise ShapeError(f"features have {x.shape[1]} bins after pooling, config expects patch_bins={config.patch_bins}")
    return x


def extract_patches(x: np.ndarray, centers, patch_frames: int) -> np.ndarray:
    """Context windows of ``patch_frames`` frames centered on ``centers``; out-of-range frames are zero."""
    half = patch_frames // 2
    padded = np.pad(x, ((half, patch_frames - half), (0, 0), (0, 0)))
    centers = np.asarray(centers, dtype=np.int64)
    idx = centers[:, None] + np.arange(patch_frames)[None, :]
    return padded[idx]


# ---------------------------------------------------------------------------
# losses


def pair_distance(e1, e2):
    """Euclidean distance between embeddings along the last axis."""
    e1 = np.asarray(e1, dtype=np.float64) if np.ndim(e1) == 1 else np.asarray(e1)
    e2 = np.asarray(e2, dtype=np.float64) if np.ndim(e2) == 1 else np.asarray(e2)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    d = np.sqrt(np.sum((e1 - e2) ** 2, axis=-1))
    return float(d) if d.ndim == 0 else d


def contrastive_loss(D, Y, margin=1.0):
    """``(1-Y) * D**2 / 2 + Y * max(0, margin - D)**2 / 2`` elementwise."""
    D = np.asarray(D, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if np.any(D < 0):
        raise ValueError("distances must be non-negative")
    if not margin > 0:
        raise ValueError("margin must be positive")
    hinge = np.maximum(0.0, margin - D)
    out = (1.0 - Y) * 0.5 * D**2 + Y * 0.5 * hinge**2
    return float(out) if out.ndim == 0 else out


def contrastive_loss_grad(D, Y, margin=1.0):
    """Derivative of :func:`contrastive_loss` with respect to ``D``."""
    D = np.asarray(D, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    out = (1.0 - Y) * D - Y * np.maximum(0.0, margin - D)
    return float(out) if out.ndim == 0 else out


def batch_loss_and_grad(e1, e2, labels, margin):
    """Mean contrastive loss over a batch and its gradients w.r.t. both embeddings."""
    diff = e1.astype(np.float64) - e2.astype(np.float64)
    D = np.sqrt(np.sum(diff**2, axis=1))
    n = D.shape[0]
    loss = float(np.mean(contrastive_loss(D, labels, margin)))
    dD = contrastive_loss_grad(D, labels, margin) / n
    safe = np.where(D > 0, D, 1.0)
    de1 = np.where(D[:, None] > 0, diff * (dD / safe)[:, None], 0.0)
    return loss, de1, -de1, D


# ---------------------------------------------------------------------------
# model wrapper


class SiameseModel:
    """Shared embedding tower plus its configuration."""

    def __init__(self, config: SiameseConfig, tower: nn.Sequential | None = None, seed: int = 0, dtype=np.float32):
        self.config = config
        meta = {"feature_kind": config.feature_kind, "bin_pool": config.bin_pool, "log_gamma": config.log_gamma}
        if tower is None:
            tower = nn.Sequential(config.specs(), config.input_shape, seed=seed, dtype=dtype, meta=meta)
        if tower.input_shape != config.input_shape:
            raise ShapeError(f"tower input {tower.input_shape} does not match config {config.input_shape}")
        self.tower = tower

    @property
    def fingerprint(self) -> str:
        return self.tower.fingerprint

    def embed(self, patches, batch_size=256) -> np.ndarray:
        """Eval-mode embeddings for a batch of patches (or a single patch)."""
        patches = np.asarray(patches, dtype=np.float32)
        single = patches.ndim == 3
        if single:
            patches = patches[None]
        if patches.shape[1:] != self.config.input_shape:
            raise ShapeError(f"patch shape {patches.shape[1:]} does not match config {self.config.input_shape}")
        out = self.tower.predict(patches, batch_size=batch_size)
        return out[0] if single else out

    def embed_frames(self, features, batch_size=256) -> np.ndarray:
        """One embedding per frame of ``features`` (centered patches)."""
        x = prepare_input(features, self.config)
        out = np.empty((x.shape[0], self.config.embed_dim), dtype=np.float32)
        for start in range(0, x.shape[0], batch_size):
            centers = np.arange(start, min(start + batch_size, x.shape[0]))
            out[start : start + centers.size] = self.embed(extract_patches(x, centers, self.config.patch_frames), batch_size)
        return out

    def save(self, path) -> None:
        nn.save_checkpoint(self.tower, path, extra={"siamese_config": self.config.to_dict()})

    @classmethod
    def load(cls, path, expected_fingerprint: str | None = None) -> "SiameseModel":
        tower = nn.load_checkpoint(path, expected=expected_fingerprint)
        cfg = tower.checkpoint_extra.get("siamese_config")
        if cfg is None:
            raise nn.CheckpointError(f"{path}: not a Siamese checkpoint (no config)")
        return cls(SiameseConfig.from_dict(cfg), tower=tower)


# ---------------------------------------------------------------------------
# pairs


@dataclass(frozen=True)
class FramePairExample:
    patch_a: np.ndarray
    patch_b: np.ndarray
    label: int
    piece: str = ""


@dataclass
class PairSet:
    """Array-backed sequence of :class:`FramePairExample`.

    ``a`` holds performance patches, ``b`` score patches; label 0 = match.
    """

    a: np.ndarray
    b: np.ndarray
    labels: np.ndarray
    pieces: np.ndarray
    perf_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    score_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, i) -> FramePairExample:
        return FramePairExample(self.a[i], self.b[i], int(self.labels[i]), str(self.pieces[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def label_counts(self) -> dict[int, int]:
        return {0: int(np.sum(self.labels == 0)), 1: int(np.sum(self.labels == 1))}

    def subset(self, idx) -> "PairSet":
        idx = np.asarray(idx)
        pf = self.perf_frames[idx] if self.perf_frames.size else self.perf_frames
        sf = self.score_frames[idx] if self.score_frames.size else self.score_frames
        return PairSet(self.a[idx], self.b[idx], self.labels[idx], self.pieces[idx], pf, sf)

    @classmethod
    def concat(cls, sets: Sequence["PairSet"]) -> "PairSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError("no pairs to concatenate")
        return cls(
            np.concatenate([s.a for s in sets]),
            np.concatenate([s.b for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.pieces for s in sets]),
            np.concatenate([s.perf_frames for s in sets]),
            np.concatenate([s.score_frames for s in sets]),
        )

    def save(self, path) -> None:
        np.savez(path, a=self.a, b=self.b, labels=self.labels, pieces=self.pieces.astype(str),
                 perf_frames=self.perf_frames, score_frames=self.score_frames)

    @classmethod
    def load(cls, path) -> "PairSet":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["a"], z["b"], z["labels"], z["pieces"], z["perf_frames"], z["score_frames"])


def make_pairs(
    perf_features,
    score_features,
    ground_truth: TimeMap,
    config: SiameseConfig,
    seed=0,
    n_samples: int | None = None,
    piece: str = "",
) -> PairSet:
    """Balanced matched / non-matched patch pairs from one piece.

    Score frames inside the ground truth's range are sampled without
    replacement (all of them if ``n_samples`` is None). For each, the
    matching performance frame comes from the ground truth (label 0) and a
    uniformly drawn performance frame more than two patch widths away from
    it gives the non-match (label 1). Score frames with no admissible
    non-match are skipped, so the output is exactly balanced.
    """
    first_perf = perf_features if isinstance(perf_features, FeatureMatrix) else perf_features[0]
    first_score = score_features if isinstance(score_features, FeatureMatrix) else score_features[0]
    if first_perf.kind != first_score.kind:
        raise ValueError(f"feature kinds differ: {first_perf.kind!r} vs {first_score.kind!r}")
    xp = prepare_input(perf_features, config)
    xs = prepare_input(score_features, config)
    T = config.patch_frames
    if xp.shape[0] < T or xs.shape[0] < T:
        raise ValueError(f"sequences ({xp.shape[0]}, {xs.shape[0]} frames) shorter than one patch ({T} frames)")

    score_t = first_score.frame_times()
    inside = np.flatnonzero((score_t >= ground_truth.x[0]) & (score_t <= ground_truth.x[-1]))
    rng = np.random.default_rng(seed)
    if n_samples is not None and n_samples < inside.size:
        chosen = np.sort(rng.choice(inside, size=n_samples, replace=False))
    else:
        chosen = inside
    perf_t = ground_truth(score_t[chosen])
    match = np.rint((perf_t - first_perf.time_offset_s) / first_perf.frame_hop_s).astype(np.int64)
    match = np.clip(match, 0, xp.shape[0] - 1)

    n_perf = xp.shape[0]
    frames = np.arange(n_perf)
    s_idx, p_idx, labels = [], [], []
    for j, i in zip(chosen, match):
        candidates = frames[np.abs(frames - i) > 2 * T]
        if candidates.size == 0:
            continue
        neg = candidates[rng.integers(candidates.size)]
        s_idx += [j, j]
        p_idx += [i, neg]
        labels += [0, 1]
    s_idx = np.array(s_idx, dtype=np.int64)
    p_idx = np.array(p_idx, dtype=np.int64)
    return PairSet(
        extract_patches(xp, p_idx, T),
        extract_patches(xs, s_idx, T),
        np.array(labels, dtype=np.int8),
        np.full(len(labels), piece, dtype=object).astype(str),
        p_idx,
        s_idx,
    )


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    val_fraction: float = 0.2


@dataclass
class TrainResult:
    model: SiameseModel
    train_loss: list
    val_loss: list
    best_epoch: int

    def loss_curve_rows(self):
        for k, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            yield k, tr, va


def split_by_piece(pieces: np.ndarray, val_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Indices of train / validation pairs, holding out whole pieces."""
    names = np.unique(pieces)
    n_val = int(round(val_fraction * names.size)) if names.size > 1 else 0
    n_val = min(n_val, names.size - 1)
    held = set(rng.permutation(names)[:n_val].tolist())
    is_val = np.array([p in held for p in pieces], dtype=bool)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def evaluate_loss(model: SiameseModel, pairs: PairSet, batch_size=256) -> float:
    e1 = model.embed(pairs.a, batch_size)
    e2 = model.embed(pairs.b, batch_size)
    D = pair_distance(e1.astype(np.float64), e2.astype(np.float64))
    return float(np.mean(contrastive_loss(np.atleast_1d(D), pairs.labels, model.config.margin)))


def train(
    pairs: PairSet,
    config: SiameseConfig,
    hyper: TrainConfig = TrainConfig(),
    seed: int = 0,
    callback=None,
) -> TrainResult:
    """Minibatch SGD on the mean contrastive loss.

    Pieces are split into train/validation sets (``hyper.val_fraction``);
    training batches are reshuffled every epoch with a seeded generator. The
    returned model is the one with the lowest validation loss (training
    loss if there is no validation piece).
    """
    if len(pairs) == 0:
        raise ValueError("no training pairs")
    rng = np.random.default_rng(seed)
    model = SiameseModel(config, seed=int(rng.integers(2**31)))
    tower = model.tower
    opt = nn.SGD(tower, lr=hyper.lr, momentum=hyper.momentum)
    train_idx, val_idx = split_by_piece(pairs.pieces, hyper.val_fraction, rng)
    val_pairs = pairs.subset(val_idx) if val_idx.size else None

    history_tr, history_va = [], []
    best = (np.inf, None, 0)
    bs = hyper.batch_size
    for epoch in range(1, hyper.epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        total, count = 0.0, 0
        for start in range(0, order.size, bs):
            idx = np.sort(order[start : start + bs])
            k = idx.size
            x = np.concatenate([pairs.a[idx], pairs.b[idx]])
            emb = tower.forward(x, train=True)
            loss, d1, d2, _ = batch_loss_and_grad(emb[:k], emb[k:], pairs.labels[idx], config.margin)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            tower.backward(np.concatenate([d1, d2]))
            opt.step()
            total += loss * k
            count += k
        tr = total / count
        if not np.isfinite(tr) or not all(np.all(np.isfinite(p)) for p in tower.params().values()):
            raise TrainingDivergedError(epoch, tr)
        va = evaluate_loss(model, val_pairs) if val_pairs is not None else tr
        history_tr.append(tr)
        history_va.append(va)
        log.info("epoch %d: train %.4f val %.4f", epoch, tr, va)
        if callback is not None:
            callback(epoch, tr, va)
        if va < best[0]:
            best = (va, [{k: v.copy() for k, v in layer.items()} for layer in tower.state()], epoch)
    tower.load_state(best[1])
    return TrainResult(model, history_tr, history_va, best[2])


__all__ = [
    "SiameseConfig",
    "SiameseModel",
    "FramePairExample",
    "PairSet",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "tower_specs",
    "full_scale_config",
    "prepare_input",
    "extract_patches",
    "pair_distance",
    "contrastive_loss",
    "contrastive_loss_grad",
    "batch_loss_and_grad",
    "make_pairs",
    "split_by_piece",
    "train",
    "evaluate_loss",
]
