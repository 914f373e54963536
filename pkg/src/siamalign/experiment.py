"""Desk-scale learned-similarity experiment.

Trains a Siamese model on a generated corpus (with and without the detuning
augmentation), then benchmarks it against chroma DTW on held-out pieces, in
tune and detuned.
"""

from __future__ import annotations

import hashlib
import logging
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .evaluate import BenchmarkResult, run_benchmark
from .pipeline import chroma_system, siamese_system, train_on_corpus
from .siamese import SiameseConfig, TrainConfig

log = logging.getLogger(__name__)


def desk_siamese_config(**overrides) -> SiameseConfig:
    """CQT model used by the experiment: bins pooled to semitones, half-width towers."""
    base = dict(patch_frames=32, patch_bins=72, bin_pool=2, conv_channels=(8, 16, 32, 64), embed_dim=128, feature_kind="cqt")
    base.update(overrides)
    return SiameseConfig(**base)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 2024
    n_train: int = 30
    n_test: int = 6
    pairs_per_piece: int = 100
    augment_fraction: float = 0.2
    augment_cents: float = 30.0
    test_detune_cents: float = 25.0
    corpus: corpus_mod.CorpusConfig = corpus_mod.BENCHMARK_CONFIG
    model: SiameseConfig = field(default_factory=desk_siamese_config)
    train: TrainConfig = TrainConfig(epochs=2, lr=0.01, batch_size=32)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corpus"] = self.corpus.to_dict()
        d["model"] = self.model.to_dict()
        return d


@dataclass
class ExperimentResult:
    in_tune: BenchmarkResult
    detuned: BenchmarkResult
    checkpoints: dict  # model name -> checkpoint bytes
    records: dict  # (system, mode, condition) -> {piece_id: (matrix, path)}
    train_loss: dict  # model name -> (train losses, val losses)

    def accuracy(self, system: str, mode: str = "distance", threshold: float = 0.1, detuned: bool = False) -> float:
        bench = self.detuned if detuned else self.in_tune
        return bench.mean_accuracy(system, mode)[threshold]

    def digest(self) -> dict:
        """sha256 of every checkpoint, matrix, path and report table."""
        out = {f"checkpoint:{k}": hashlib.sha256(v).hexdigest() for k, v in sorted(self.checkpoints.items())}
        for key, rec in sorted(self.records.items()):
            for pid, (sim, path) in sorted(rec.items()):
                tag = ":".join(key) + ":" + pid
                out[f"matrix:{tag}"] = hashlib.sha256(np.ascontiguousarray(sim.values).tobytes()).hexdigest()
                steps = np.asarray(path.steps, dtype=np.int64)
                out[f"path:{tag}"] = hashlib.sha256(steps.tobytes() + repr(path.total_cost).encode()).hexdigest()
        out["report:in_tune"] = hashlib.sha256(self.in_tune.to_csv().encode()).hexdigest()
        out["report:detuned"] = hashlib.sha256(self.detuned.to_csv().encode()).hexdigest()
        return out

    def summary(self) -> str:
        return "in tune\n" + self.in_tune.to_text() + "\n\ndetuned\n" + self.detuned.to_text()


def build_corpora(cfg: ExperimentConfig):
    train_ss, test_ss, aug_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    train = [corpus_mod.generate_piece(f"train{k:03d}", s, cfg.corpus) for k, s in enumerate(train_ss.spawn(cfg.n_train))]
    test = [corpus_mod.generate_piece(f"test{k:03d}", s, cfg.corpus) for k, s in enumerate(test_ss.spawn(cfg.n_test))]
    aug_seed = int(aug_ss.generate_state(1)[0])
    augmented = corpus_mod.augment(train, cfg.augment_fraction, cfg.augment_cents, seed=aug_seed)
    detuned = [corpus_mod.detune_performance(p, cfg.test_detune_cents, suffix="-detuned") for p in test]
    return train, augmented, test, detuned


def _checkpoint_bytes(model) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.ckpt"
        model.save(path)
        return path.read_bytes()


def run_experiment(cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentResult:
    train, augmented, test, detuned = build_corpora(cfg)
    cache: dict = {}
    models, losses = {}, {}
    for name, pieces in (("SCNN_cqt", train), ("SCNN_cqt+DA", augmented)):
        log.info("training %s on %d pieces", name, len(pieces))
        res = train_on_corpus(pieces, cfg.model, cfg.train, seed=cfg.seed, n_per_piece=cfg.pairs_per_piece, cache=cache)
        models[name] = res.model
        losses[name] = (res.train_loss, res.val_loss)

    records: dict = {}
    matrices: dict = {}

    def systems(condition, modes):
        out = []
        for name, model in models.items():
            for mode in modes[name]:
                rec = records.setdefault((name, mode, condition), {})
                out.append(siamese_system(model, mode, name=name, cache=cache, matrices=matrices, record=rec))
        return out + [chroma_system()]

    in_tune = run_benchmark(test, systems("in_tune", {"SCNN_cqt": ("distance", "binary"), "SCNN_cqt+DA": ("distance",)}))
    off = run_benchmark(detuned, systems("detuned", {"SCNN_cqt": ("distance",), "SCNN_cqt+DA": ("distance",)}))
    checkpoints = {name: _checkpoint_bytes(m) for name, m in models.items()}
    return ExperimentResult(in_tune, off, checkpoints, records, losses)


__all__ = ["ExperimentConfig", "ExperimentResult", "build_corpora", "desk_siamese_config", "run_experiment"]
