import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from siamalign.audio_io import AudioBuffer
from siamalign.corpus import CorpusConfig, generate
from siamalign.evaluate import (
    THRESHOLDS_S,
    AlignmentSystem,
    BenchmarkResult,
    chroma_dtw_baseline,
    run_benchmark,
    score_alignment,
    threshold_accuracy,
)
from siamalign.features import DEFAULT_HOP_S
from siamalign.timemap import GroundTruthMap, TimeMap

EVENTS = np.array([1.0, 2.0, 3.0, 4.0])
TRUTH = GroundTruthMap([0.0, 5.0], [0.0, 5.0])


def test_hand_counted_thresholds():
    errors = np.array([0.010, 0.030, 0.060, 0.300])
    est = TimeMap(EVENTS, EVENTS + errors)
    rep = score_alignment(est, TRUTH, EVENTS)
    assert rep.accuracy == {0.025: 25.0, 0.05: 50.0, 0.1: 75.0, 0.2: 75.0}
    assert np.allclose(rep.errors, errors, atol=1e-12)
    assert rep.mean_abs_error == pytest.approx(0.1, abs=1e-12)
    assert rep.row() == [25.0, 50.0, 75.0, 75.0]


def test_constant_offset():
    rep = score_alignment(TRUTH.shifted(0.040), TRUTH, EVENTS)
    assert rep.accuracy == {0.025: 0.0, 0.05: 100.0, 0.1: 100.0, 0.2: 100.0}


def test_identity_and_strict_bound():
    rep = score_alignment(TRUTH, TRUTH, EVENTS)
    assert all(v == 100.0 for v in rep.accuracy.values()) and np.all(rep.errors == 0)
    assert threshold_accuracy([0.05], (0.05,))[0.05] == 0.0


def test_negative_errors_count_by_magnitude():
    rep = score_alignment(TRUTH.shifted(-0.030), TRUTH, EVENTS)
    assert rep.accuracy[0.025] == 0.0 and rep.accuracy[0.05] == 100.0
    assert np.all(rep.errors < 0)


def test_empty_events_rejected():
    with pytest.raises(ValueError):
        score_alignment(TRUTH, TRUTH, [])
    with pytest.raises(ValueError):
        threshold_accuracy([])


@settings(max_examples=1000, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1, 1)))
def test_accuracy_monotone_in_threshold(errors):
    acc = threshold_accuracy(errors)
    values = [acc[t] for t in THRESHOLDS_S]
    assert values == sorted(values) and all(0 <= v <= 100 for v in values)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.5, 0.5), arrays(np.float64, 4, elements=st.floats(-0.1, 0.1)))
def test_shifting_estimate_shifts_errors(delta, errors):
    est = TimeMap(EVENTS, EVENTS + errors)
    base = score_alignment(est, TRUTH, EVENTS).errors
    moved = score_alignment(est.shifted(delta), TRUTH, EVENTS).errors
    assert np.allclose(moved - base, delta, atol=1e-12)


def test_chroma_self_alignment_is_identity():
    (p,) = generate(1, seed=3)
    tm = chroma_dtw_baseline(p.score_audio, p.score_audio)
    t = np.linspace(0, p.score_audio.duration - DEFAULT_HOP_S, 200)
    assert np.max(np.abs(tm(t) - t)) < DEFAULT_HOP_S


def test_chroma_on_uniform_stretch():
    pieces = generate(3, seed=4, config=CorpusConfig(slope_range=(2.0, 2.0)))
    for p in pieces:
        tm = chroma_dtw_baseline(p.performance_audio, p.score_audio)
        rep = score_alignment(tm, p.ground_truth, p.event_times())
        assert rep.accuracy[0.1] >= 90.0
        assert np.polyfit(tm.x, tm.y, 1)[0] == pytest.approx(2.0, rel=0.05)


def test_silent_inputs_give_valid_map():
    quiet = AudioBuffer(np.zeros(22050), 22050)
    tm = chroma_dtw_baseline(quiet, AudioBuffer(np.zeros(15000), 22050))
    assert np.all(np.diff(tm.x) > 0) and np.all(np.diff(tm.y) >= 0)


class _Piece:
    def __init__(self, pid, n_events):
        self.piece_id = pid
        self.ground_truth = GroundTruthMap([0.0, 10.0], [0.0, 10.0])
        self.events = np.arange(1.0, n_events + 1)

    def event_times(self):
        return self.events


def test_benchmark_single_perfect_system():
    res = run_benchmark([_Piece("p", 3)], [AlignmentSystem("perfect", lambda p: p.ground_truth)])
    assert list(res.table_rows()) == [("perfect", [None] * 4 + [100.0] * 4)]


def test_benchmark_is_piece_weighted_and_records_failures():
    short, long = _Piece("short", 1), _Piece("long", 9)

    def half_wrong(piece):
        return piece.ground_truth if piece.piece_id == "long" else piece.ground_truth.shifted(1.0)

    def broken(piece):
        raise RuntimeError("no alignment")

    res = run_benchmark([short, long], [AlignmentSystem("sys", half_wrong, "binary"), AlignmentSystem("bad", broken)])
    # piece-weighted: (0 + 100) / 2, where event weighting would give 90
    assert res.mean_accuracy("sys", "binary")[0.1] == 50.0
    assert res.failures == [("bad", "distance", "short", "RuntimeError: no alignment"), ("bad", "distance", "long", "RuntimeError: no alignment")]
    assert res.header() == ["model"] + [f"{m} <{t}ms" for m in ("binary", "distance") for t in (25, 50, 100, 200)]


def test_table_text_and_csv():
    res = BenchmarkResult()
    res.reports[("SCNN", "binary")] = [score_alignment(TRUTH, TRUTH, EVENTS)]
    res.reports[("SCNN", "distance")] = [score_alignment(TRUTH.shifted(0.04), TRUTH, EVENTS)]
    res.reports[("chroma", "distance")] = [score_alignment(TRUTH, TRUTH, EVENTS)]
    text = res.to_text().splitlines()
    assert "binary matrix" in text[0] and "distance matrix" in text[0]
    assert text[1].split() == ["model", "|", "<25ms", "<50ms", "<100ms", "<200ms", "|", "<25ms", "<50ms", "<100ms", "<200ms"]
    assert text[3].split() == ["SCNN", "|"] + ["100.0"] * 4 + ["|", "0.0"] + ["100.0"] * 3
    assert text[4].split() == ["chroma", "|"] + ["-"] * 4 + ["|"] + ["100.0"] * 4
    csv_rows = res.to_csv().splitlines()
    assert csv_rows[2] == "chroma,,,,," + ",".join(["100.0000"] * 4)


def test_benchmark_is_deterministic():
    pieces = generate(1, seed=8)
    systems = [AlignmentSystem("chroma", lambda p: chroma_dtw_baseline(p.performance_audio, p.score_audio))]
    assert run_benchmark(pieces, systems).to_csv() == run_benchmark(pieces, systems).to_csv()
