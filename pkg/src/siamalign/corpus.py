"""Synthetic score/performance corpus with known alignment.

A piece is a random note sequence (the score), its straight rendering, and a
"performance": the same notes tempo-warped by a random piecewise-linear
curve, optionally detuned and rendered with a different timbre plus noise.
The warp curve gives the exact ground truth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, load_wav, require_same_rate, save_wav
from .midi import NoteEvent, ScoreTrack, SynthConfig, parse_midi, synthesize, warp_tempo, write_midi
from .timemap import GroundTruthMap, TimeMap

TICK_S = 1.0 / 960  # one tick at 480 tpq and 120 bpm


@dataclass(frozen=True)
class CorpusConfig:
    """Generation parameters.

    ``n_events`` counts onsets (a chord is one event). ``gap_prob`` inserts a
    rest of ``gap_range`` seconds before an event and ``repeat_prob`` re-strikes
    the previous event's pitches instead of drawing new ones; ``octave_prob``
    moves them by an octave (same pitch classes) when the range allows. Performance audio uses
    ``perf_synth`` and white noise at ``perf_noise`` RMS; the score uses
    ``score_synth``.
    """

    sample_rate: int = 22050
    n_events: tuple = (16, 24)
    pitch_range: tuple = (36, 84)
    duration_range: tuple = (0.1, 1.0)
    chord_prob: float = 0.25
    chord_size: tuple = (2, 4)
    gap_prob: float = 0.15
    gap_range: tuple = (0.05, 0.3)
    repeat_prob: float = 0.0
    octave_prob: float = 0.0
    velocity_range: tuple = (60, 110)
    lead_in_range: tuple = (0.2, 0.5)
    slope_range: tuple = (0.7, 1.4)
    segment_range: tuple = (1.5, 3.0)
    detune_range: tuple = (0.0, 0.0)
    score_synth: SynthConfig = SynthConfig()
    perf_synth: SynthConfig = SynthConfig()
    perf_noise: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        d = dict(d)
        for key in ("score_synth", "perf_synth"):
            if isinstance(d.get(key), dict):
                d[key] = SynthConfig(**d[key])
        for key, value in d.items():
            if isinstance(value, list):
                d[key] = tuple(value)
        return cls(**d)


@dataclass(frozen=True, eq=False)
class CorpusPiece:
    piece_id: str
    score_track: ScoreTrack
    performance_track: ScoreTrack
    score_audio: AudioBuffer
    performance_audio: AudioBuffer
    ground_truth: GroundTruthMap
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        require_same_rate(self.score_audio, self.performance_audio)

    @property
    def sample_rate(self) -> int:
        return self.score_audio.sample_rate

    def event_times(self) -> np.ndarray:
        """Score-side evaluation times: the distinct note onsets."""
        return self.score_track.onsets()


# Harder preset for the learned-vs-chroma comparison: piano-like decays, a
# brighter and slightly inharmonic performance timbre with background noise,
# and melodies that re-strike or jump octaves (identical chroma, different
# CQT).
BENCHMARK_CONFIG = CorpusConfig(
    gap_prob=0.0,
    repeat_prob=0.2,
    octave_prob=0.5,
    score_synth=SynthConfig(note_decay_s=0.3),
    perf_synth=SynthConfig(note_decay_s=0.3, decay=0.5, inharmonicity=1e-4),
    perf_noise=0.02,
)


def _random_track(rng, cfg: CorpusConfig) -> ScoreTrack:
    def q(t):
        return round(t / TICK_S) * TICK_S

    lo, hi = cfg.pitch_range
    t = q(rng.uniform(*cfg.lead_in_range))
    events = []
    pitches = None
    for _ in range(int(rng.integers(cfg.n_events[0], cfg.n_events[1] + 1))):
        if rng.random() < cfg.gap_prob:
            t = q(t + rng.uniform(*cfg.gap_range))
        dur = max(q(rng.uniform(*cfg.duration_range)), TICK_S)
        u = rng.random()
        if pitches is not None and u < cfg.repeat_prob:
            pass
        elif pitches is not None and u < cfg.repeat_prob + cfg.octave_prob and _octave_fits(pitches, lo, hi):
            pitches = _octave_move(pitches, lo, hi, rng)
        else:
            size = int(rng.integers(cfg.chord_size[0], cfg.chord_size[1] + 1)) if rng.random() < cfg.chord_prob else 1
            pitches = rng.choice(np.arange(lo, hi + 1), size=size, replace=False)
        for p in sorted(pitches.tolist()):
            vel = int(rng.integers(cfg.velocity_range[0], cfg.velocity_range[1] + 1))
            events.append(NoteEvent(t, dur, int(p), vel))
        t = q(t + dur)
    return ScoreTrack(tuple(events))


def _octave_fits(pitches, lo, hi) -> bool:
    return pitches.max() + 12 <= hi or pitches.min() - 12 >= lo


def _octave_move(pitches, lo, hi, rng):
    up, down = pitches.max() + 12 <= hi, pitches.min() - 12 >= lo
    if up and down:
        return pitches + (12 if rng.random() < 0.5 else -12)
    return pitches + (12 if up else -12)


def _random_curve(rng, cfg: CorpusConfig, duration: float) -> TimeMap:
    knots = [0.0]
    while knots[-1] < duration:
        knots.append(knots[-1] + rng.uniform(*cfg.segment_range))
    slopes = rng.uniform(cfg.slope_range[0], cfg.slope_range[1], size=len(knots) - 1)
    return TimeMap.from_segments(slopes, knots)


def render_performance(track: ScoreTrack, cfg: CorpusConfig, noise_seed) -> AudioBuffer:
    audio = synthesize(track, cfg.sample_rate, cfg.perf_synth)
    if cfg.perf_noise > 0:
        rng = np.random.default_rng(noise_seed)
        samples = audio.samples + rng.normal(0.0, cfg.perf_noise, size=len(audio))
        peak = np.max(np.abs(samples))
        if peak > 1:
            samples = samples / peak
        audio = AudioBuffer(samples, audio.sample_rate)
    return audio


def generate_piece(piece_id: str, seed, cfg: CorpusConfig) -> CorpusPiece:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    note_ss, noise_ss = ss.spawn(2)
    rng = np.random.default_rng(note_ss)
    score = _random_track(rng, cfg)
    curve = _random_curve(rng, cfg, score.end_time + cfg.score_synth.release_s + cfg.score_synth.tail_s)
    perf, truth = warp_tempo(score, curve)
    detune = float(rng.uniform(*cfg.detune_range)) if cfg.detune_range[1] > cfg.detune_range[0] else float(cfg.detune_range[0])
    if detune:
        perf = perf.detuned(detune)
    noise_seed = int(noise_ss.generate_state(1)[0])
    return CorpusPiece(
        piece_id,
        score,
        perf,
        synthesize(score, cfg.sample_rate, cfg.score_synth),
        render_performance(perf, cfg, noise_seed),
        truth,
        provenance={
            "seed_entropy": str(ss.entropy),
            "spawn_key": list(ss.spawn_key),
            "detune_cents": detune,
            "noise_seed": noise_seed,
            "warp_knots": curve.x.tolist(),
            "warp_values": curve.y.tolist(),
            "config": cfg.to_dict(),
        },
    )


def generate(n_pieces: int, seed: int = 0, config: CorpusConfig = CorpusConfig(), prefix: str = "piece") -> list[CorpusPiece]:
    """Generate ``n_pieces`` pieces; piece ``k`` uses the ``k``-th child of ``SeedSequence(seed)``."""
    if n_pieces < 1:
        raise ValueError("n_pieces must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_pieces)
    return [generate_piece(f"{prefix}{k:03d}", children[k], config) for k in range(n_pieces)]


def detune_performance(piece: CorpusPiece, cents: float, suffix: str | None = None) -> CorpusPiece:
    """Re-render the performance with ``cents`` of extra detuning; ground truth unchanged."""
    cfg = CorpusConfig.from_dict(piece.provenance["config"]) if "config" in piece.provenance else CorpusConfig(sample_rate=piece.sample_rate)
    track = piece.performance_track.detuned(cents)
    audio = render_performance(track, cfg, piece.provenance.get("noise_seed", 0))
    prov = dict(piece.provenance, detune_cents=piece.provenance.get("detune_cents", 0.0) + cents)
    pid = piece.piece_id if suffix is None else f"{piece.piece_id}{suffix}"
    return replace(piece, piece_id=pid, performance_track=track, performance_audio=audio, provenance=prov)


def augment(pieces, fraction: float = 0.2, max_cents: float = 30.0, seed: int = 0) -> list[CorpusPiece]:
    """Append ``round(fraction * n)`` detuned copies of randomly chosen pieces.

    Each copy's performance is re-synthesized with a uniform detune in
    ``[-max_cents, max_cents]``; the originals are kept unchanged.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    pieces = list(pieces)
    n_extra = int(round(fraction * len(pieces)))
    if n_extra == 0:
        return pieces
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pieces), size=n_extra, replace=False)
    extra = []
    for k in sorted(chosen.tolist()):
        cents = float(rng.uniform(-max_cents, max_cents))
        extra.append(detune_performance(pieces[k], cents, suffix="-aug"))
    return pieces + extra


# ---------------------------------------------------------------------------
# on-disk layout: <root>/<piece-id>/{score.mid, score.wav, perf.wav, gt.csv, meta.json}


def save_piece(piece: CorpusPiece, root) -> Path:
    d = Path(root) / piece.piece_id
    d.mkdir(parents=True, exist_ok=True)
    write_midi(piece.score_track, d / "score.mid")
    save_wav(piece.score_audio, d / "score.wav", encoding="float32")
    save_wav(piece.performance_audio, d / "perf.wav", encoding="float32")
    piece.ground_truth.to_csv(d / "gt.csv")
    meta = {
        "piece_id": piece.piece_id,
        "sample_rate": piece.sample_rate,
        "provenance": piece.provenance,
        "performance_events": [asdict(e) for e in piece.performance_track.events],
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return d


def save_corpus(pieces, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for piece in pieces:
        save_piece(piece, root)
    index = [p.piece_id for p in pieces]
    (root / "index.json").write_text(json.dumps(index, indent=1))


def load_piece(directory, synth: SynthConfig | None = None) -> CorpusPiece:
    """Load one piece directory.

    Works for real data too: ``perf.wav``, ``score.mid`` and ``gt.csv``
    (columns score_time_s, perf_time_s) are required; a missing
    ``score.wav`` is synthesized from the MIDI file.
    """
    d = Path(directory)
    for name in ("perf.wav", "score.mid", "gt.csv"):
        if not (d / name).is_file():
            raise FileNotFoundError(f"{d}: missing {name}")
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").is_file() else {}
    score = parse_midi(d / "score.mid")
    perf_audio = load_wav(d / "perf.wav")
    if (d / "score.wav").is_file():
        score_audio = load_wav(d / "score.wav")
    else:
        score_audio = synthesize(score, perf_audio.sample_rate, synth)
    truth = GroundTruthMap.from_csv(d / "gt.csv")
    if "performance_events" in meta:
        perf_track = ScoreTrack(tuple(NoteEvent(**e) for e in meta["performance_events"]))
    else:
        perf_track = ScoreTrack(tuple(
            replace(e, onset=float(truth(e.onset)), duration=max(float(truth(e.offset) - truth(e.onset)), 1e-6))
            for e in score.events
        ))
    return CorpusPiece(meta.get("piece_id", d.name), score, perf_track, score_audio, perf_audio, truth, meta.get("provenance", {}))


def load_corpus(root) -> list[CorpusPiece]:
    root = Path(root)
    if (root / "index.json").is_file():
        names = json.loads((root / "index.json").read_text())
    else:
        names = sorted(p.name for p in root.iterdir() if (p / "gt.csv").is_file())
    return [load_piece(root / n) for n in names]
