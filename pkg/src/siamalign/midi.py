"""Standard MIDI File parsing/writing, additive synthesis and tempo warping.

Only what the alignment pipeline needs is decoded: note-on/note-off
channel messages and the set-tempo meta event. Everything else is skipped.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer
from .timemap import GroundTruthMap, TimeMap

DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 bpm)


class MidiError(Exception):
    """Base class for MIDI problems."""


class MalformedMidiError(MidiError):
    """Broken chunk structure or truncated event data."""


class UnresolvedNoteWarning(UserWarning):
    """A note-on without a matching note-off; its duration was clipped at track end."""


@dataclass(frozen=True)
class NoteEvent:
    onset: float
    duration: float
    pitch: int
    velocity: int = 100
    detune_cents: float = 0.0

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset}")
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch out of range: {self.pitch}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity out of range: {self.velocity}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration

    @property
    def frequency(self) -> float:
        return 440.0 * 2.0 ** ((self.pitch - 69 + self.detune_cents / 100.0) / 12.0)


@dataclass(frozen=True)
class ScoreTrack:
    """Onset-sorted note events plus the tick timing they were derived from.

    Event times in seconds are authoritative; ``ticks_per_quarter`` and
    ``tempo_map`` describe how they are written to / were read from a MIDI
    file.
    """

    events: tuple = ()
    ticks_per_quarter: int = 480
    tempo_map: tuple = ((0, DEFAULT_TEMPO),)

    def __post_init__(self):
        events = tuple(sorted(self.events, key=lambda e: (e.onset, e.pitch, e.duration)))
        tempo_map = tuple((int(t), int(u)) for t, u in self.tempo_map)
        if self.ticks_per_quarter <= 0:
            raise ValueError("ticks_per_quarter must be positive")
        if not tempo_map or tempo_map[0][0] != 0:
            raise ValueError("tempo map must start at tick 0")
        if any(b[0] < a[0] for a, b in zip(tempo_map, tempo_map[1:])):
            raise ValueError("tempo map must be sorted by tick")
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "tempo_map", tempo_map)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def end_time(self) -> float:
        return max((e.offset for e in self.events), default=0.0)

    def onsets(self) -> np.ndarray:
        """Sorted unique onset times."""
        return np.unique(np.array([e.onset for e in self.events], dtype=np.float64))

    def detuned(self, cents: float) -> "ScoreTrack":
        """Copy with ``cents`` added to every event's detune."""
        events = [replace(e, detune_cents=e.detune_cents + cents) for e in self.events]
        return replace(self, events=tuple(events))

    def ticks_to_seconds(self, ticks):
        return _ticks_to_seconds(np.asarray(ticks, dtype=np.float64), self.tempo_map, self.ticks_per_quarter)

    def seconds_to_ticks(self, seconds):
        return _seconds_to_ticks(np.asarray(seconds, dtype=np.float64), self.tempo_map, self.ticks_per_quarter)


def _tempo_segments(tempo_map, tpq):
    ticks = np.array([t for t, _ in tempo_map], dtype=np.float64)
    sec_per_tick = np.array([u for _, u in tempo_map], dtype=np.float64) / 1e6 / tpq
    starts = np.concatenate([[0.0], np.cumsum(np.diff(ticks) * sec_per_tick[:-1])])
    return ticks, sec_per_tick, starts


def _ticks_to_seconds(ticks, tempo_map, tpq):
    seg_ticks, spt, seg_sec = _tempo_segments(tempo_map, tpq)
    idx = np.searchsorted(seg_ticks, ticks, side="right") - 1
    return seg_sec[idx] + (ticks - seg_ticks[idx]) * spt[idx]


def _seconds_to_ticks(seconds, tempo_map, tpq):
    seg_ticks, spt, seg_sec = _tempo_segments(tempo_map, tpq)
    idx = np.searchsorted(seg_sec, seconds, side="right") - 1
    return seg_ticks[idx] + (seconds - seg_sec[idx]) / spt[idx]


# ---------------------------------------------------------------------------
# parsing


def _read_varlen(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MalformedMidiError("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MalformedMidiError("variable-length quantity longer than 4 bytes")


def _parse_track(data: bytes):
    """Yield ``(tick, kind, payload)`` for note and tempo events of one track."""
    pos = 0
    tick = 0
    status = None
    while pos < len(data):
        delta, pos = _read_varlen(data, pos)
        tick += delta
        if pos >= len(data):
            raise MalformedMidiError("event truncated after delta time")
        byte = data[pos]
        if byte == 0xFF:
            if pos + 1 >= len(data):
                raise MalformedMidiError("truncated meta event")
            meta_type = data[pos + 1]
            length, pos = _read_varlen(data, pos + 2)
            body = data[pos : pos + length]
            if len(body) < length:
                raise MalformedMidiError("truncated meta event data")
            pos += length
            if meta_type == 0x51:
                if length != 3:
                    raise MalformedMidiError("set-tempo event must carry 3 bytes")
                yield tick, "tempo", (body[0] << 16) | (body[1] << 8) | body[2]
            elif meta_type == 0x2F:
                yield tick, "end", None
                return
            continue
        if byte in (0xF0, 0xF7):
            length, pos = _read_varlen(data, pos + 1)
            if pos + length > len(data):
                raise MalformedMidiError("truncated sysex event")
            pos += length
            continue
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise MalformedMidiError("running status used before any status byte")
        kind = status & 0xF0
        n_data = 1 if kind in (0xC0, 0xD0) else 2
        if pos + n_data > len(data):
            raise MalformedMidiError("truncated channel message")
        args = data[pos : pos + n_data]
        pos += n_data
        channel = status & 0x0F
        if kind == 0x90 and args[1] > 0:
            yield tick, "on", (channel, args[0], args[1])
        elif kind == 0x80 or (kind == 0x90 and args[1] == 0):
            yield tick, "off", (channel, args[0])
    yield tick, "end", None


def parse_midi(path) -> ScoreTrack:
    """Parse an SMF (format 0 or 1) into a :class:`ScoreTrack`.

    Tempo events from all tracks form one global tempo map. Note-on with
    velocity 0 counts as note-off; overlapping notes of the same pitch and
    channel are paired first-in first-out. A note still sounding at the end
    of its track is clipped there and reported with
    :class:`UnresolvedNoteWarning`.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such MIDI file: {path}")
    data = path.read_bytes()
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedMidiError(f"{path}: missing MThd header")
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or 8 + hlen > len(data):
        raise MalformedMidiError(f"{path}: bad header length {hlen}")
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiError(f"{path}: SMF format {fmt} not supported")
    if division & 0x8000:
        raise MidiError(f"{path}: SMPTE time division not supported")
    if division == 0:
        raise MalformedMidiError(f"{path}: zero ticks per quarter")

    pos = 8 + hlen
    tracks = []
    while pos + 8 <= len(data) and len(tracks) < ntracks:
        cid, size = struct.unpack(">4sI", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedMidiError(f"{path}: chunk {cid!r} truncated")
        pos += 8 + size
        if cid == b"MTrk":
            try:
                tracks.append(list(_parse_track(body)))
            except MalformedMidiError as exc:
                raise MalformedMidiError(f"{path}: track {len(tracks)}: {exc}") from None
    if len(tracks) < ntracks:
        raise MalformedMidiError(f"{path}: header announces {ntracks} tracks, found {len(tracks)}")

    tempo = {}
    for events in tracks:
        for tick, kind, payload in events:
            if kind == "tempo":
                tempo[tick] = payload
    tempo.setdefault(0, DEFAULT_TEMPO)
    tempo_map = tuple(sorted(tempo.items()))

    raw_notes = []  # (on_tick, off_tick, pitch, velocity)
    for index, events in enumerate(tracks):
        open_notes: dict[tuple[int, int], list] = {}
        end_tick = events[-1][0] if events else 0
        for tick, kind, payload in events:
            if kind == "on":
                channel, pitch, vel = payload
                open_notes.setdefault((channel, pitch), []).append((tick, vel))
            elif kind == "off":
                stack = open_notes.get(payload)
                if stack:
                    on_tick, vel = stack.pop(0)
                    raw_notes.append((on_tick, tick, payload[1], vel))
        for (channel, pitch), stack in open_notes.items():
            for on_tick, vel in stack:
                warnings.warn(
                    f"{path}: track {index}: note {pitch} (channel {channel}) at tick {on_tick} "
                    f"never released; clipped at track end (tick {end_tick})",
                    UnresolvedNoteWarning,
                    stacklevel=2,
                )
                raw_notes.append((on_tick, end_tick, pitch, vel))

    notes = []
    if raw_notes:
        arr = np.array(raw_notes, dtype=np.float64)
        on_s = _ticks_to_seconds(arr[:, 0], tempo_map, division)
        off_s = _ticks_to_seconds(arr[:, 1], tempo_map, division)
        for (_, _, pitch, vel), a, b in zip(raw_notes, on_s, off_s):
            if b > a:
                notes.append(NoteEvent(float(a), float(b - a), int(pitch), int(vel)))
    return ScoreTrack(tuple(notes), division, tempo_map)


# ---------------------------------------------------------------------------
# writing


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def write_midi(track: ScoreTrack, path) -> None:
    """Write ``track`` as a format-0 SMF on channel 0.

    Event times are converted to ticks with the track's tempo map and
    rounded to the nearest tick; detuning is not representable and is
    dropped.
    """
    timeline = []  # (tick, order, bytes); order puts tempo, then offs, before ons
    for tick, usec in track.tempo_map:
        timeline.append((tick, 0, b"\xff\x51\x03" + usec.to_bytes(3, "big")))
    if track.events:
        on_ticks = np.round(track.seconds_to_ticks([e.onset for e in track.events])).astype(int)
        off_ticks = np.round(track.seconds_to_ticks([e.offset for e in track.events])).astype(int)
        for e, a, b in zip(track.events, on_ticks, off_ticks):
            b = max(int(b), int(a) + 1)
            timeline.append((int(a), 2, bytes([0x90, e.pitch, e.velocity])))
            timeline.append((b, 1, bytes([0x80, e.pitch, 0])))
    timeline.sort(key=lambda item: (item[0], item[1]))
    body = bytearray()
    last = 0
    for tick, _, msg in timeline:
        body += _varlen(tick - last) + msg
        last = tick
    body += b"\x00\xff\x2f\x00"
    header = struct.pack(">4sIHHH", b"MThd", 6, 0, 1, track.ticks_per_quarter)
    Path(path).write_bytes(header + struct.pack(">4sI", b"MTrk", len(body)) + bytes(body))


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SynthConfig:
    """Additive synthesizer settings.

    ``inharmonicity`` stretches partial ``h`` to ``h * f0 * sqrt(1 + B h^2)``
    and ``note_decay_s`` adds an exponential amplitude decay with that time
    constant; both are off by default.
    """

    n_harmonics: int = 8
    decay: float = 1.0
    attack_s: float = 0.01
    release_s: float = 0.05
    tail_s: float = 0.5
    peak: float = 0.9
    inharmonicity: float = 0.0
    note_decay_s: float = 0.0

    def __post_init__(self):
        if self.n_harmonics < 1:
            raise ValueError("n_harmonics must be >= 1")
        if self.attack_s < 0 or self.release_s < 0 or self.tail_s < 0:
            raise ValueError("envelope times must be non-negative")


def _envelope(n_sustain: int, n_attack: int, n_release: int) -> np.ndarray:
    env = np.ones(n_sustain + n_release)
    if n_attack:
        k = min(n_attack, n_sustain)
        env[:k] = np.arange(1, k + 1) / n_attack
    if n_release:
        level = env[n_sustain - 1] if n_sustain else 0.0
        env[n_sustain:] = level * (1.0 - np.arange(1, n_release + 1) / n_release)
    return env


def synthesize(track: ScoreTrack, sample_rate: int, config: SynthConfig | None = None) -> AudioBuffer:
    """Render ``track`` with additive synthesis.

    Each note sums ``n_harmonics`` sinusoids at multiples of its detuned
    fundamental, partial ``h`` weighted ``velocity/127 * h**-decay``, under
    a linear attack and a linear release after note-off. Partials above
    Nyquist are dropped. The mix is scaled so its peak is ``config.peak``.
    """
    config = config or SynthConfig()
    n_attack = int(round(config.attack_s * sample_rate))
    n_release = int(round(config.release_s * sample_rate))
    total = int(round((track.end_time + config.release_s + config.tail_s) * sample_rate))
    out = np.zeros(total)
    harmonics = np.arange(1, config.n_harmonics + 1, dtype=np.float64)
    stretch = np.sqrt(1.0 + config.inharmonicity * harmonics**2)
    for note in track.events:
        start = int(round(note.onset * sample_rate))
        n_sustain = max(int(round(note.offset * sample_rate)) - start, 1)
        env = _envelope(n_sustain, n_attack, n_release)
        n = min(env.size, total - start)
        if n <= 0:
            continue
        env = env[:n]
        if config.note_decay_s > 0:
            env = env * np.exp(-np.arange(n) / (config.note_decay_s * sample_rate))
        freqs = note.frequency * harmonics * stretch
        keep = freqs < sample_rate / 2
        amps = (note.velocity / 127.0) * harmonics[keep] ** (-config.decay)
        t = (start + np.arange(n)) / sample_rate
        partials = np.sin(2.0 * np.pi * np.outer(freqs[keep], t))
        out[start : start + n] += env * (amps @ partials)
    peak = np.max(np.abs(out)) if out.size else 0.0
    if peak > 0:
        out *= config.peak / peak
    return AudioBuffer(out, sample_rate)


# ---------------------------------------------------------------------------
# tempo warping


def warp_tempo(track: ScoreTrack, curve: TimeMap) -> tuple[ScoreTrack, GroundTruthMap]:
    """Move every event time ``t`` to ``curve(t)``.

    Returns the warped track and the ground truth sampled at each distinct
    onset plus the final note-off.
    """
    if abs(float(curve(0.0))) > 1e-12:
        raise ValueError("tempo curve must satisfy curve(0) = 0")
    if len(curve) < 2 or not curve.is_strictly_increasing():
        raise ValueError("tempo curve must be strictly increasing")

    events = []
    for e in track.events:
        a = float(curve(e.onset))
        b = float(curve(e.offset))
        events.append(replace(e, onset=a, duration=b - a))
    warped = replace(track, events=tuple(events))
    if track.events:
        times = np.unique(np.append(track.onsets(), track.end_time))
    else:
        times = np.array([0.0])
    return warped, GroundTruthMap(times, curve(times))


__all__ = [
    "NoteEvent",
    "ScoreTrack",
    "SynthConfig",
    "MidiError",
    "MalformedMidiError",
    "UnresolvedNoteWarning",
    "parse_midi",
    "write_midi",
    "synthesize",
    "warp_tempo",
]
