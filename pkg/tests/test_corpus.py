import numpy as np
import pytest

from siamalign import corpus
from siamalign.corpus import CorpusConfig, augment, detune_performance, generate, load_corpus, save_corpus
from siamalign.features import DEFAULT_HOP_S
from siamalign.midi import NoteEvent, ScoreTrack, SynthConfig, synthesize
from siamalign.timemap import TimeMap

SMALL = CorpusConfig(n_events=(4, 6), duration_range=(0.1, 0.3), lead_in_range=(0.1, 0.2))


def test_fixed_seed_is_bit_identical():
    a, b = generate(2, seed=5, config=SMALL), generate(2, seed=5, config=SMALL)
    for p, q in zip(a, b):
        assert p.piece_id == q.piece_id
        assert np.array_equal(p.performance_audio.samples, q.performance_audio.samples)
        assert np.array_equal(p.score_audio.samples, q.score_audio.samples)
        assert p.ground_truth == q.ground_truth
    c = generate(2, seed=6, config=SMALL)
    assert c[0].score_track != a[0].score_track


def test_identity_warp():
    (p,) = generate(1, seed=1, config=CorpusConfig(n_events=(4, 6), slope_range=(1.0, 1.0)))
    assert np.allclose(p.ground_truth.y, p.ground_truth.x, atol=1e-12)


def test_slope_two_warp():
    (p,) = generate(1, seed=2, config=CorpusConfig(n_events=(4, 6), slope_range=(2.0, 2.0)))
    assert np.allclose(p.ground_truth.slopes, 2.0, rtol=1e-9)
    knots = p.provenance["warp_knots"]
    assert np.allclose(np.diff(p.provenance["warp_values"]) / np.diff(knots), 2.0)


def test_generated_pieces_respect_ranges():
    for p in generate(3, seed=3):
        assert p.ground_truth.is_strictly_increasing()
        assert p.score_audio.sample_rate == p.performance_audio.sample_rate
        pitches = [e.pitch for e in p.score_track.events]
        assert 36 <= min(pitches) and max(pitches) <= 84
        assert all(0.1 - 1e-9 <= e.duration <= 1.0 + 1e-9 for e in p.score_track.events)
        assert np.all(np.diff(p.ground_truth.y) / np.diff(p.ground_truth.x) >= 0.7 - 1e-9)


def test_ground_truth_maps_durations_within_one_hop():
    for p in generate(4, seed=4):
        synth = SynthConfig()
        score_end = p.score_audio.duration - synth.release_s - synth.tail_s
        perf_end = p.performance_audio.duration - synth.release_s - synth.tail_s
        assert abs(float(p.ground_truth(score_end)) - perf_end) < DEFAULT_HOP_S


def test_generate_rejects_zero_pieces():
    with pytest.raises(ValueError):
        generate(0)


def test_augment_counts():
    pieces = generate(10, seed=0, config=SMALL)
    out = augment(pieces, 0.2, 30.0, seed=1)
    assert len(out) == 12 and out[:10] == pieces
    assert all(p.piece_id.endswith("-aug") for p in out[10:])
    for extra in out[10:]:
        base = next(p for p in pieces if p.piece_id + "-aug" == extra.piece_id)
        assert extra.ground_truth == base.ground_truth
        assert extra.score_track == base.score_track
        assert np.array_equal(extra.score_audio.samples, base.score_audio.samples)
        assert abs(extra.provenance["detune_cents"]) <= 30.0
    assert augment(pieces, 0.0) == pieces
    with pytest.raises(ValueError):
        augment(pieces, 1.5)


def test_detuned_a4_peak():
    track = ScoreTrack((NoteEvent(pitch=69, onset=0.0, duration=2.0, velocity=100),))
    truth_piece = corpus.CorpusPiece(
        "a4", track, track, synthesize(track, 22050), synthesize(track, 22050),
        corpus.GroundTruthMap(np.array([0.0, 2.0]), np.array([0.0, 2.0])),
        provenance={"config": CorpusConfig(perf_synth=SynthConfig(n_harmonics=1)).to_dict()},
    )
    rng = np.random.default_rng(0)
    for cents in rng.uniform(-30, 30, 3):
        shifted = detune_performance(truth_piece, float(cents))
        x = shifted.performance_audio.samples[: 2 * 22050]
        n = 1 << 20
        spec = np.abs(np.fft.rfft(x * np.hanning(x.size), n))
        peak = np.argmax(spec) * 22050 / n
        assert peak == pytest.approx(440.0 * 2 ** (cents / 1200), abs=0.05)


def test_save_load_round_trip(tmp_path):
    pieces = generate(2, seed=9, config=SMALL)
    save_corpus(pieces, tmp_path)
    assert sorted(f.name for f in (tmp_path / pieces[0].piece_id).iterdir()) == ["gt.csv", "meta.json", "perf.wav", "score.mid", "score.wav"]
    back = load_corpus(tmp_path)
    assert [p.piece_id for p in back] == [p.piece_id for p in pieces]
    for p, q in zip(pieces, back):
        assert np.allclose(q.performance_audio.samples, p.performance_audio.samples, atol=1e-7)
        assert q.ground_truth == p.ground_truth
        assert np.allclose(q.event_times(), p.event_times(), atol=2e-3)  # MIDI tick grid
        assert CorpusConfig.from_dict(q.provenance["config"]) == CorpusConfig.from_dict(p.provenance["config"])
        assert q.provenance["noise_seed"] == p.provenance["noise_seed"]


def test_loader_synthesizes_missing_score_audio(tmp_path):
    (p,) = generate(1, seed=9, config=SMALL)
    save_corpus([p], tmp_path)
    (tmp_path / p.piece_id / "score.wav").unlink()
    (tmp_path / p.piece_id / "meta.json").unlink()
    q = load_corpus(tmp_path)[0]
    assert q.score_audio.sample_rate == p.sample_rate and len(q.performance_track) == len(p.score_track)
    (tmp_path / p.piece_id / "gt.csv").unlink()
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / p.piece_id / "..")


def test_benchmark_preset_features():
    cfg = corpus.BENCHMARK_CONFIG
    assert cfg.gap_prob == 0 and cfg.perf_noise > 0
    (p,) = generate(1, seed=0, config=cfg)
    ev = p.score_track.events
    groups = {}
    for e in ev:
        groups.setdefault(e.onset, []).append(e.pitch)
    seqs = [tuple(sorted(v)) for _, v in sorted(groups.items())]
    moves = sum(1 for a, b in zip(seqs, seqs[1:]) if a == b or (len(a) == len(b) and all(abs(x - y) == 12 for x, y in zip(a, b))))
    assert moves > 0


def test_time_map_piece_is_monotone():
    for p in generate(2, seed=11, config=SMALL):
        assert isinstance(p.ground_truth, TimeMap) and p.ground_truth.is_strictly_increasing()
