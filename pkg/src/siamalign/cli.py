"""Command-line entry point: ``siamalign <subcommand> ...``.

Every subcommand writes into its output directory only (``--out``; default
``$SIAMALIGN_OUT/<subcommand>`` or ``./siamalign-out/<subcommand>``) and
leaves a ``run.json`` there with the resolved arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import AudioBuffer, WavError, load_wav
from .corpus import BENCHMARK_CONFIG, CorpusConfig, augment, generate, load_corpus, save_corpus
from .dtw import path_to_time_map
from .evaluate import chroma_dtw_path, run_benchmark
from .experiment import desk_siamese_config
from .features import KINDS, FeatureError, extract
from .midi import MidiError
from .nn import CheckpointError, FingerprintMismatchError
from .pipeline import chroma_system, corpus_pairs, siamese_align, siamese_system
from .siamese import PairSet, SiameseModel, TrainConfig, TrainingDivergedError, train

OUT_ENV = "SIAMALIGN_OUT"

log = logging.getLogger("siamalign")


class UsageError(Exception):
    """Bad or inconsistent command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "siamalign-out")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_json(out: Path, args, extra: dict | None = None) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    record = {"version": __version__, "command": args.command, "args": resolved, "seed": getattr(args, "seed", None)}
    record.update(extra or {})
    (out / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True, default=str) + "\n")


def _corpus_config(args) -> CorpusConfig:
    if args.corpus_config:
        return CorpusConfig.from_dict(json.loads(Path(args.corpus_config).read_text()))
    return BENCHMARK_CONFIG if args.preset == "benchmark" else CorpusConfig()


def _model_config(args):
    """Experiment architecture with the flag overrides; ``patch_bins`` follows the feature kind."""
    pool = args.bin_pool if args.bin_pool is not None else (2 if args.kind in ("cqt", "salience") else 1)
    n_bins = extract(AudioBuffer(np.zeros(22050), 22050), args.kind).n_bins
    overrides = {
        "patch_frames": args.patch,
        "patch_bins": -(-n_bins // pool),
        "bin_pool": pool,
        "embed_dim": args.embed_dim,
        "margin": args.margin,
        "threshold": args.threshold,
        "feature_kind": args.kind,
    }
    if args.channels:
        widths = tuple(int(c) for c in args.channels.split(","))
        overrides["conv_channels"] = widths
        # 5x5 for the first two layers and 3x3 after, unless given
        overrides["kernels"] = tuple(5 if i < 2 else 3 for i in range(len(widths)))
    if args.kernels:
        overrides["kernels"] = tuple(int(k) for k in args.kernels.split(","))
    return desk_siamese_config(**overrides)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = _out_dir(args)
    cfg = _corpus_config(args)
    pieces = generate(args.pieces, seed=args.seed, config=cfg)
    if args.augment_fraction:
        pieces = augment(pieces, args.augment_fraction, args.max_cents, seed=args.seed)
    save_corpus(pieces, out)
    _write_run_json(out, args, {"corpus_config": cfg.to_dict(), "pieces": [p.piece_id for p in pieces]})
    print(f"wrote {len(pieces)} pieces to {out}")
    return 0


def cmd_features(args) -> int:
    out = _out_dir(args)
    audio = load_wav(args.audio)
    fm = extract(audio, args.kind)
    stem = Path(args.audio).stem
    fm.to_csv(out / f"{stem}.{args.kind}.csv")
    if args.png:
        fm.save_png(out / f"{stem}.{args.kind}.png", title=f"{stem} ({args.kind})")
    _write_run_json(out, args, {"frames": fm.n_frames, "bins": fm.n_bins})
    print(f"{fm.n_frames} frames x {fm.n_bins} bins -> {out}")
    return 0


def cmd_make_pairs(args) -> int:
    out = _out_dir(args)
    pieces = load_corpus(args.corpus)
    cfg = _model_config(args)
    pairs = corpus_pairs(pieces, cfg, seed=args.seed, n_per_piece=args.samples_per_piece)
    pairs.save(out / "pairs.npz")
    _write_run_json(out, args, {"model_config": cfg.to_dict(), "label_counts": pairs.label_counts()})
    print(f"{len(pairs)} pairs -> {out / 'pairs.npz'}")
    return 0


def cmd_train(args) -> int:
    if bool(args.corpus) == bool(args.pairs):
        raise UsageError("train needs exactly one of --corpus or --pairs")
    out = _out_dir(args)
    cfg = _model_config(args)
    if args.pairs:
        pairs = PairSet.load(args.pairs)
    else:
        pieces = load_corpus(args.corpus)
        if args.augment_fraction:
            pieces = augment(pieces, args.augment_fraction, args.max_cents, seed=args.seed)
        pairs = corpus_pairs(pieces, cfg, seed=args.seed, n_per_piece=args.samples_per_piece)
    hyper = TrainConfig(epochs=args.epochs, lr=args.lr, momentum=args.momentum, batch_size=args.batch)
    result = train(pairs, cfg, hyper, seed=args.seed)
    result.model.save(out / "model.ckpt")
    with open(out / "loss.csv", "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for k, tr, va in result.loss_curve_rows():
            fh.write(f"{k},{tr!r},{va!r}\n")
    _write_run_json(out, args, {"model_config": cfg.to_dict(), "best_epoch": result.best_epoch, "fingerprint": result.model.fingerprint})
    print(f"best epoch {result.best_epoch}: val loss {result.val_loss[result.best_epoch - 1]:.4f} -> {out / 'model.ckpt'}")
    return 0


def cmd_align(args) -> int:
    if not args.baseline_chroma and not args.checkpoint:
        raise UsageError("align needs --checkpoint unless --baseline-chroma is given")
    out = _out_dir(args)
    perf, score = load_wav(args.perf), load_wav(args.score)
    if args.baseline_chroma:
        sim, path = chroma_dtw_path(perf, score)
        tmap = path_to_time_map(path, sim.row_hop_s, sim.col_hop_s, sim.row_offset_s, sim.col_offset_s)
    else:
        model = SiameseModel.load(args.checkpoint, expected_fingerprint=args.fingerprint)
        kind = model.config.feature_kind
        sim, path, tmap = siamese_align(model, extract(perf, kind), extract(score, kind), args.mode)
    if args.dump_matrix:
        sim.to_csv(out / "matrix.csv")
    with open(out / "path.csv", "w") as fh:
        fh.write("ref_time_s,perf_time_s\n")
        for i, j in path:
            fh.write(f"{sim.row_offset_s + i * sim.row_hop_s!r},{sim.col_offset_s + j * sim.col_hop_s!r}\n")
    tmap.to_csv(out / "timemap.csv")
    _write_run_json(out, args, {"total_cost": path.total_cost, "path_length": len(path)})
    print(f"total_cost {path.total_cost!r}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    pieces = load_corpus(args.corpus)
    systems = []
    cache, matrices = {}, {}
    checkpoints = args.checkpoint or []
    for k, ckpt in enumerate(checkpoints):
        model = SiameseModel.load(ckpt)
        name = args.name or f"SCNN_{model.config.feature_kind}"
        if len(checkpoints) > 1:
            name = f"{name}#{k + 1}"
        modes = ("distance", "binary") if args.mode == "both" else (args.mode,)
        systems += [siamese_system(model, m, name=name, cache=cache, matrices=matrices) for m in modes]
    if not args.no_baseline:
        systems.append(chroma_system())
    if not systems:
        raise UsageError("nothing to evaluate: give --checkpoint or drop --no-baseline")
    result = run_benchmark(pieces, systems)
    (out / "results.txt").write_text(result.to_text() + "\n")
    (out / "results.csv").write_text(result.to_csv())
    _write_run_json(out, args, {"failures": result.failures})
    print(result.to_text())
    for name, mode, pid, message in result.failures:
        print(f"failed: {name} ({mode}) on {pid}: {message}", file=sys.stderr)
    return 1 if result.failures else 0


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(p):
    p.add_argument("--kind", choices=KINDS, default="cqt", help="input feature kind")
    p.add_argument("--patch", type=int, default=32, help="patch width in frames")
    p.add_argument("--bin-pool", type=int, default=None, help="max-pool factor over frequency bins")
    p.add_argument("--channels", default=None, help="comma-separated conv widths, e.g. 8,16,32,64")
    p.add_argument("--kernels", default=None, help="comma-separated conv kernel sizes, one per layer")
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=None, help="binary cut-off (default margin/2)")
    p.add_argument("--samples-per-piece", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="siamalign", description="Audio-to-score alignment with learned frame similarity and DTW.")
    parser.add_argument("--version", action="version", version=f"siamalign {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<command>)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--pieces", type=int, default=10)
    p.add_argument("--preset", choices=("default", "benchmark"), default="default")
    p.add_argument("--corpus-config", default=None, help="JSON file with CorpusConfig fields")
    p.add_argument("--augment-fraction", type=float, default=0.0)
    p.add_argument("--max-cents", type=float, default=30.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract a feature matrix from a WAV file")
    common(p)
    p.add_argument("audio")
    p.add_argument("--kind", choices=KINDS, default="cqt")
    p.add_argument("--png", action="store_true", help="also write a heat map")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("make-pairs", help="build a training pair set from a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_make_pairs)

    p = sub.add_parser("train", help="train a Siamese model")
    common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--pairs", default=None)
    _add_model_flags(p)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--augment-fraction", type=float, default=0.0)
    p.add_argument("--max-cents", type=float, default=30.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", help="align a performance WAV to a score WAV")
    common(p)
    p.add_argument("--perf", required=True)
    p.add_argument("--score", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--fingerprint", default=None, help="refuse checkpoints with another architecture fingerprint")
    p.add_argument("--baseline-chroma", action="store_true")
    p.add_argument("--mode", choices=("distance", "binary"), default="distance")
    p.add_argument("--dump-matrix", action="store_true")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("evaluate", help="benchmark models and the chroma baseline on a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", action="append", default=None)
    p.add_argument("--name", default=None)
    p.add_argument("--mode", choices=("distance", "binary", "both"), default="both")
    p.add_argument("--no-baseline", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


ERRORS = (
    (UsageError, "usage error"),
    (FileNotFoundError, "missing file"),
    (FingerprintMismatchError, "fingerprint mismatch"),
    (CheckpointError, "bad checkpoint"),
    (TrainingDivergedError, "training diverged"),
    (WavError, "bad audio"),
    (MidiError, "bad MIDI"),
    (FeatureError, "feature error"),
    (ValueError, "invalid input"),
)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except tuple(e for e, _ in ERRORS) as exc:
        label = next(lbl for e, lbl in ERRORS if isinstance(exc, e))
        message = " ".join(str(exc).split())
        print(f"siamalign: {label}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
