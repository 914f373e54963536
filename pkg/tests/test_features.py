import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamalign.audio_io import AudioBuffer
from siamalign.features import (
    FeatureError,
    FeatureMatrix,
    chroma,
    cqt_frequencies,
    cqt_magnitude,
    extract,
    log_compress,
    pitch_classes,
    stft_magnitude,
)


def tone(freq, sr=22050, dur=1.0, amp=0.5):
    t = np.arange(int(sr * dur)) / sr
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), sr)


def test_feature_matrix_invariants():
    with pytest.raises(FeatureError):
        FeatureMatrix(-np.ones((2, 3)), 0.01, np.arange(3), "stft")
    with pytest.raises(FeatureError):
        FeatureMatrix(np.ones((2, 3)), 0.01, np.arange(3), "chroma")
    with pytest.raises(FeatureError):
        FeatureMatrix(np.ones((2, 3)), 0.0, np.arange(3), "stft")
    with pytest.raises(FeatureError):
        FeatureMatrix(np.ones((2, 3)), 0.01, np.arange(3), "mfcc")


def test_stft_sample_rounding_and_zero_signal():
    fm = stft_magnitude(AudioBuffer(np.zeros(44100), 44100))
    assert fm.params["hop_samples"] == 1014 and fm.params["window_samples"] == 2029
    assert fm.params["nfft"] == 2048 and fm.n_bins == 1025
    assert fm.n_frames == (44100 - 2029) // 1014 + 1
    assert not fm.values.any()


def test_stft_sine_argmax_bin():
    fm = stft_magnitude(tone(440.0, sr=44100))
    assert np.all(np.argmax(fm.values, axis=1) == round(440 * 2048 / 44100))


def test_stft_three_frames():
    sr, w = 1000, 64
    fm = stft_magnitude(AudioBuffer(np.zeros(2 * w), sr), hop_s=w / 2 / sr, window_s=w / sr)
    assert fm.n_frames == 3


def test_stft_errors():
    with pytest.raises(FeatureError):
        stft_magnitude(AudioBuffer(np.zeros(100), 44100))
    with pytest.raises(FeatureError):
        stft_magnitude(tone(440.0), hop_s=0.05, window_s=0.02)


def test_stft_time_shift_covariance(rng):
    sr = 22050
    x = rng.uniform(-0.5, 0.5, sr)
    a = stft_magnitude(AudioBuffer(x, sr))
    hop = a.params["hop_samples"]
    b = stft_magnitude(AudioBuffer(np.concatenate([np.zeros(hop), x]), sr))
    n = a.n_frames - 1
    assert np.allclose(b.values[1 : n + 1], a.values[:n], rtol=1e-6, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stft_parseval(seed):
    sr = 16000
    x = np.random.default_rng(seed).uniform(-1, 1, 4000)
    fm = stft_magnitude(AudioBuffer(x, sr))
    win, hop, nfft = fm.params["window_samples"], fm.params["hop_samples"], fm.params["nfft"]
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][: fm.n_frames] * np.hamming(win)
    time_energy = np.sum(frames**2)
    mag2 = fm.values**2
    spec_energy = (mag2[:, 0].sum() + mag2[:, -1].sum() + 2 * mag2[:, 1:-1].sum()) / nfft
    assert spec_energy == pytest.approx(time_energy, rel=0.05)


def test_cqt_frequency_anchors():
    f = cqt_frequencies()
    assert f[0] == 65.4
    assert f[24] == pytest.approx(130.8, rel=1e-9)
    assert f.size == 144


CQT_PITCHES = [36, 41, 45, 50, 57, 62, 69, 76, 84, 96]


@pytest.mark.parametrize("midi", CQT_PITCHES)
def test_cqt_tone_argmax(midi):
    freq = 440.0 * 2 ** ((midi - 69) / 12)
    fm = cqt_magnitude(tone(freq))
    expected = int(round(24 * np.log2(freq / 65.4)))
    mid = fm.values[fm.n_frames // 4 : 3 * fm.n_frames // 4]
    assert np.all(np.argmax(mid, axis=1) == expected)


def test_cqt_220_is_bin_42():
    fm = cqt_magnitude(tone(220.0))
    assert np.argmax(fm.values[fm.n_frames // 2]) == 42


def test_cqt_frames_and_errors():
    audio = tone(220.0, dur=1.0)
    fm = cqt_magnitude(audio)
    hop = fm.params["hop_samples"]
    assert fm.n_frames == (len(audio) - 1) // hop + 1
    assert fm.frame_times()[1] == pytest.approx(hop / audio.sample_rate)
    with pytest.raises(FeatureError):
        cqt_magnitude(AudioBuffer(np.zeros(1000), 22050))
    with pytest.raises(FeatureError):
        cqt_magnitude(AudioBuffer(np.zeros(40000), 8000))


def test_cqt_unit_sine_reads_half():
    freq = 65.4 * 2 ** (50 / 24)
    fm = cqt_magnitude(tone(freq, amp=1.0))
    assert fm.values[fm.n_frames // 2, 50] == pytest.approx(0.5, rel=0.02)


def test_pitch_classes_fold_quarter_tones():
    pcs = pitch_classes(48, 24)
    assert pcs[0] == 0 and pcs[2] == 1 and pcs[24] == 0 and pcs[46] == 11
    assert np.bincount(pcs, minlength=12).tolist() == [4] * 12


def test_chroma_of_c3():
    ch = chroma(cqt_magnitude(tone(130.81)))
    assert np.all(np.argmax(ch.values[5:-5], axis=1) == 0)
    assert ch.values.max() == 1.0


def test_chroma_octave_equivalence():
    low = chroma(cqt_magnitude(tone(196.0)))
    high = chroma(cqt_magnitude(tone(392.0)))
    mid = slice(10, -10)
    assert np.argmax(low.values[mid], axis=1).tolist() == np.argmax(high.values[mid], axis=1).tolist()
    assert np.allclose(low.values[mid], high.values[mid], atol=0.05)


def test_chroma_zero_and_kind():
    ch = chroma(cqt_magnitude(AudioBuffer(np.zeros(22050), 22050)))
    assert ch.n_bins == 12 and not ch.values.any()
    with pytest.raises(FeatureError):
        chroma(stft_magnitude(tone(440.0)))


def test_extract_dispatch():
    audio = tone(220.0)
    assert np.array_equal(extract(audio, "stft").values, stft_magnitude(audio).values)
    assert np.array_equal(extract(audio, "chroma").values, chroma(cqt_magnitude(audio)).values)
    sal = extract(audio, "salience")
    assert sal.kind == "salience" and sal.values.max() <= 1.0
    with pytest.raises(FeatureError):
        extract(audio, "mel")


def test_log_compress():
    fm = FeatureMatrix(np.array([[0.0, 0.1, 1.0]]), 0.01, np.arange(3), "cqt")
    out = log_compress(fm)
    assert np.allclose(out.values, np.log1p(10 * fm.values))
    assert out.params["log_gamma"] == 10.0


def test_csv_round_trip(tmp_path):
    fm = cqt_magnitude(tone(300.0, dur=0.7))
    fm.to_csv(tmp_path / "f.csv")
    back = FeatureMatrix.from_csv(tmp_path / "f.csv")
    assert back.kind == "cqt" and back.frame_hop_s == fm.frame_hop_s
    assert np.array_equal(back.values, fm.values) and np.array_equal(back.bin_labels, fm.bin_labels)
