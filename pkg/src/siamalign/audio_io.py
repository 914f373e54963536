"""Read and write RIFF/WAVE audio.

Reads PCM 16-bit integer and IEEE 32-bit float files with any channel
count (channels are averaged down to mono). Writes mono PCM16, or float32
when bit-exact storage is needed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV reading/writing problems."""


class MalformedWavError(WavError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedEncodingError(WavError):
    """The file is valid WAVE but uses an encoding we do not decode."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono audio samples in [-1, 1] with their sample rate.

    The sample array is made read-only on construction so buffers can be
    shared freely.
    """

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("samples must lie in [-1, 1]")
        if samples is self.samples:
            samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def __eq__(self, other):
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    __hash__ = None


def require_same_rate(*buffers: AudioBuffer) -> int:
    """Return the shared sample rate, raising if the buffers disagree."""
    rates = {b.sample_rate for b in buffers}
    if len(rates) != 1:
        raise ValueError(f"audio buffers have different sample rates: {sorted(rates)}")
    return rates.pop()


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, body, len(body) < size
        pos += 8 + size + (size & 1)


def load_wav(path) -> AudioBuffer:
    """Load a WAV file as a mono :class:`AudioBuffer`.

    16-bit samples are scaled by 1/32768, so -32768 maps to exactly -1.0.
    Float files are clipped to [-1, 1]. A data chunk that is shorter than
    its declared size is read up to the last complete frame.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    MalformedWavError
        If the RIFF structure or the fmt chunk is broken.
    UnsupportedEncodingError
        For encodings other than PCM16 and float32.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    for cid, body, _truncated in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 40:
                    raise MalformedWavError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE header")
                sub_format = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub_format,) + fmt[1:]
        elif cid == b"data":
            pcm = body
            break
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if pcm is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    tag, channels, rate, _byte_rate, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise MalformedWavError(f"{path}: invalid channel count or sample rate")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedEncodingError(
            f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits)"
        )
    if block_align != channels * dtype.itemsize:
        raise MalformedWavError(f"{path}: block_align {block_align} inconsistent with format")

    n_frames = len(pcm) // block_align
    raw = np.frombuffer(pcm, dtype=dtype, count=n_frames * channels).reshape(n_frames, channels)
    if dtype.kind == "i":
        samples = raw.astype(np.float64) / 32768.0
    else:
        samples = raw.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise MalformedWavError(f"{path}: non-finite float samples")
        samples = np.clip(samples, -1.0, 1.0)
    mono = samples[:, 0] if channels == 1 else samples.mean(axis=1)
    return AudioBuffer(mono, rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats onto int16 using the same 1/32768 scale as :func:`load_wav`."""
    q = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(q, -32768, 32767).astype("<i2")


def save_wav(buffer: AudioBuffer, path, encoding: str = "pcm16") -> None:
    """Write ``buffer`` as a mono WAV file.

    ``encoding`` is ``"pcm16"`` (default; round trip within one 16-bit
    quantization step) or ``"float32"`` (bit-exact for float32-representable
    samples).
    """
    if encoding == "pcm16":
        tag, bits = WAVE_FORMAT_PCM, 16
        payload = quantize_pcm16(buffer.samples).tobytes()
    elif encoding == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = buffer.samples.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = bits // 8
    fmt = struct.pack(
        "<HHIIHH", tag, 1, buffer.sample_rate, buffer.sample_rate * block_align, block_align, bits
    )
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    blob = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise OSError(f"cannot write WAV file {path}: {exc.strerror or exc}") from exc


def silence(duration_s: float, sample_rate: int) -> AudioBuffer:
    return AudioBuffer(np.zeros(int(round(duration_s * sample_rate))), sample_rate)


__all__ = [
    "AudioBuffer",
    "WavError",
    "MalformedWavError",
    "UnsupportedEncodingError",
    "load_wav",
    "save_wav",
    "quantize_pcm16",
    "require_same_rate",
    "silence",
]

