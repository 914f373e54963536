import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from siamalign.audio_io import (
    AudioBuffer,
    MalformedWavError,
    UnsupportedEncodingError,
    load_wav,
    quantize_pcm16,
    require_same_rate,
    save_wav,
    silence,
)


def test_buffer_rejects_bad_values():
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, 1.5]), 8000)
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, np.nan]), 8000)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(4), 0)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros((2, 2)), 8000)


def test_buffer_is_read_only():
    b = AudioBuffer(np.zeros(4), 8000)
    with pytest.raises(ValueError):
        b.samples[0] = 1.0
    assert b.duration == 4 / 8000


def test_one_second_pcm16_length(write_wav):
    p = write_wav("a.wav", np.zeros(44100, dtype="<i2").tobytes())
    b = load_wav(p)
    assert len(b) == 44100 and b.sample_rate == 44100


def test_stereo_mixdown_to_zero(write_wav):
    frames = np.tile(np.array([16384, -16384], dtype="<i2"), 1000)
    b = load_wav(write_wav("s.wav", frames.tobytes(), channels=2))
    assert np.array_equal(b.samples, np.zeros(1000))


def test_pcm16_scaling_table(write_wav):
    ints = np.array([-32768, -16384, -1, 0, 1, 16384, 32767], dtype="<i2")
    b = load_wav(write_wav("t.wav", ints.tobytes()))
    expected = np.array([-1.0, -0.5, -1 / 32768, 0.0, 1 / 32768, 0.5, 32767 / 32768])
    assert np.array_equal(b.samples, expected)


def test_float32_and_extensible(write_wav):
    x = np.array([0.25, -0.75, 0.5], dtype="<f4")
    assert np.array_equal(load_wav(write_wav("f.wav", x.tobytes(), bits=32, fmt_tag=3)).samples, x.astype(np.float64))
    ints = np.array([100, -200], dtype="<i2")
    b = load_wav(write_wav("e.wav", ints.tobytes(), extensible=True))
    assert np.array_equal(b.samples, ints / 32768.0)


def test_unknown_chunks_are_skipped(write_wav):
    extra = b"LIST" + (5).to_bytes(4, "little") + b"hello\x00"
    b = load_wav(write_wav("l.wav", np.array([8192], dtype="<i2").tobytes(), extra_chunks=extra))
    assert b.samples.tolist() == [0.25]


def test_distinct_errors(tmp_path, write_wav):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "missing.wav")
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFX0000WAVE")
    with pytest.raises(MalformedWavError):
        load_wav(bad)
    with pytest.raises(UnsupportedEncodingError):
        load_wav(write_wav("u8.wav", b"\x80\x80", bits=8))
    with pytest.raises(UnsupportedEncodingError):
        load_wav(write_wav("a.wav", b"\x00\x00", fmt_tag=6))


def test_sine_round_trip_within_one_lsb(tmp_path):
    t = np.arange(44100) / 44100
    b = AudioBuffer(0.9 * np.sin(2 * np.pi * 440 * t), 44100)
    save_wav(b, tmp_path / "s.wav")
    back = load_wav(tmp_path / "s.wav")
    assert np.max(np.abs(back.samples - b.samples)) <= 2.0**-15


def test_zero_and_empty_buffers(tmp_path):
    save_wav(AudioBuffer(np.zeros(10), 8000), tmp_path / "z.wav")
    assert np.array_equal(load_wav(tmp_path / "z.wav").samples, np.zeros(10))
    save_wav(AudioBuffer(np.zeros(0), 8000), tmp_path / "e.wav")
    e = load_wav(tmp_path / "e.wav")
    assert len(e) == 0 and e.sample_rate == 8000


def test_float_round_trip_is_bit_exact(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000).astype(np.float32).astype(np.float64)
    b = AudioBuffer(x, 22050)
    save_wav(b, tmp_path / "f.wav", encoding="float32")
    assert load_wav(tmp_path / "f.wav") == b


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_wav(silence(0.01, 8000), tmp_path / "no" / "such" / "dir.wav")


def test_require_same_rate():
    with pytest.raises(ValueError):
        require_same_rate(silence(0.1, 8000), silence(0.1, 16000))
    assert require_same_rate(silence(0.1, 8000), silence(0.2, 8000)) == 8000


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(0, 300), elements=st.floats(-1, 1)))
def test_pcm16_round_trip_property(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("rt") / "x.wav"
    save_wav(AudioBuffer(x, 16000), path)
    back = load_wav(path)
    assert np.all(np.abs(back.samples - x) <= 2.0**-15)
    assert np.array_equal(back.samples, quantize_pcm16(x) / 32768.0)
    assert load_wav(path) == back
