"""End-to-end workflows shared by the CLI and the experiments."""

from __future__ import annotations

import logging

import numpy as np

from .corpus import CorpusPiece
from .dtw import WarpingPath, align, path_to_time_map
from .evaluate import AlignmentSystem, chroma_dtw_baseline
from .features import FeatureMatrix, extract
from .siamese import PairSet, SiameseConfig, SiameseModel, TrainConfig, TrainResult, make_pairs, train
from .similarity import SimilarityMatrix, build
from .timemap import TimeMap

log = logging.getLogger(__name__)


def piece_features(piece: CorpusPiece, kind: str, cache: dict | None = None, **params) -> tuple[FeatureMatrix, FeatureMatrix]:
    """``(performance, score)`` features of ``piece``; memoized in ``cache`` if given."""
    key = (piece.piece_id, kind, tuple(sorted(params.items())))
    if cache is not None and key in cache:
        return cache[key]
    out = (extract(piece.performance_audio, kind, **params), extract(piece.score_audio, kind, **params))
    if cache is not None:
        cache[key] = out
    return out


def corpus_pairs(pieces, config: SiameseConfig, seed: int = 0, n_per_piece: int | None = 100, cache=None) -> PairSet:
    """Concatenated pair sets for all pieces; piece ``k`` uses a seed derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(pieces))
    sets = []
    for piece, child in zip(pieces, children):
        perf, score = piece_features(piece, config.feature_kind, cache)
        rng_seed = int(child.generate_state(1)[0])
        sets.append(make_pairs(perf, score, piece.ground_truth, config, seed=rng_seed, n_samples=n_per_piece, piece=piece.piece_id))
    return PairSet.concat(sets)


def train_on_corpus(pieces, config: SiameseConfig, hyper: TrainConfig, seed: int = 0, n_per_piece: int | None = 100, cache=None) -> TrainResult:
    pairs = corpus_pairs(pieces, config, seed=seed, n_per_piece=n_per_piece, cache=cache)
    log.info("training on %d pairs from %d pieces", len(pairs), len(pieces))
    return train(pairs, config, hyper, seed=seed)


def align_matrix(cost: SimilarityMatrix, band: int | None = None) -> tuple[WarpingPath, TimeMap]:
    """DTW through ``cost`` (rows = score frames) and the resulting score-to-performance map."""
    path = align(cost, band)
    return path, path_to_time_map(path, cost.row_hop_s, cost.col_hop_s, cost.row_offset_s, cost.col_offset_s)


def siamese_align(model: SiameseModel, perf: FeatureMatrix, score: FeatureMatrix, mode: str = "distance", band: int | None = None,
                  distances: SimilarityMatrix | None = None):
    """Returns ``(similarity matrix with score rows, path, score-to-performance map)``.

    ``distances`` (score rows, distance mode) skips the embedding step; a
    binary matrix is then obtained by thresholding it.
    """
    if distances is None:
        distances = build(perf, score, model, mode="distance").T
    sim = distances.binarize(model.config.tau) if mode == "binary" else distances
    path, tmap = align_matrix(sim, band)
    return sim, path, tmap


def siamese_system(model: SiameseModel, mode: str = "distance", name: str | None = None, cache=None, matrices=None,
                   record=None) -> AlignmentSystem:
    """Benchmark system for ``model``.

    ``matrices`` memoizes the distance matrix per (piece, model) so the
    binary and distance systems of one model embed each piece once;
    ``record`` (a dict) receives ``piece_id -> (matrix, path)``.
    """

    def run(piece):
        perf, score = piece_features(piece, model.config.feature_kind, cache)
        key = (piece.piece_id, model.fingerprint, id(model))
        dist = matrices.get(key) if matrices is not None else None
        if dist is None:
            dist = build(perf, score, model, mode="distance").T
            if matrices is not None:
                matrices[key] = dist
        sim, path, tmap = siamese_align(model, perf, score, mode, distances=dist)
        if record is not None:
            record[piece.piece_id] = (sim, path)
        return tmap

    return AlignmentSystem(name or f"SCNN_{model.config.feature_kind}", run, mode)


def chroma_system(name: str = "DTW_chroma") -> AlignmentSystem:
    return AlignmentSystem(name, lambda piece: chroma_dtw_baseline(piece.performance_audio, piece.score_audio), "distance")
