"""Binary checkpoint format.

Layout (little-endian)::

    magic      8 bytes  b"SIAMCKPT"
    version    u16
    fingerprint 32 bytes (SHA-256 digest of the architecture)
    meta_len   u32, then meta_len bytes of UTF-8 JSON (specs, input shape, meta)
    layers     u32
    per layer: n_arrays u16; per array: name_len u8, name, ndim u8,
               ndim x u32 dims, float32 data
    crc32      u32 over everything before it
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .layers import LayerSpec
from .model import Sequential

MAGIC = b"SIAMCKPT"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint problems."""


class CheckpointVersionError(CheckpointError):
    pass


class FingerprintMismatchError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    """Truncated file, bad magic or checksum mismatch."""


def save_checkpoint(model: Sequential, path, extra: dict | None = None) -> None:
    """Serialize ``model`` (params stored as float32) to ``path``."""
    meta = {
        "specs": [s.to_dict() for s in model.specs],
        "input_shape": list(model.input_shape),
        "meta": model.meta,
        "extra": extra or {},
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(bytes.fromhex(model.fingerprint))
    buf.write(struct.pack("<I", len(meta_blob)))
    buf.write(meta_blob)
    state = model.state()
    buf.write(struct.pack("<I", len(state)))
    for arrays in state:
        buf.write(struct.pack("<H", len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode()
            buf.write(struct.pack("<B", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = buf.getvalue()
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("checkpoint file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Return ``(fingerprint_hex, meta, state)`` from a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    if len(data) < len(MAGIC) + 2 + 32 + 4 + 4:
        raise CheckpointCorruptError(f"{path}: checkpoint file is truncated")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch (truncated or corrupted file)")
    fingerprint = r.take(32).hex()
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode())
    (n_layers,) = r.unpack("<I")
    state = []
    for _ in range(n_layers):
        (n_arrays,) = r.unpack("<H")
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = r.unpack("<B")
            name = r.take(name_len).decode()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        state.append(arrays)
    return fingerprint, meta, state


def load_checkpoint(path, expected=None, dtype=np.float32) -> Sequential:
    """Rebuild the model stored at ``path``.

    ``expected`` may be a :class:`Sequential` or a fingerprint string; the
    stored architecture must match it or :class:`FingerprintMismatchError`
    is raised.
    """
    fingerprint, meta, state = read_checkpoint(path)
    if expected is not None:
        want = expected if isinstance(expected, str) else expected.fingerprint
        if want != fingerprint:
            raise FingerprintMismatchError(
                f"{path}: architecture fingerprint {fingerprint[:12]} does not match expected {want[:12]}"
            )
    specs = [LayerSpec.from_dict(d) for d in meta["specs"]]
    model = Sequential(specs, meta["input_shape"], seed=0, dtype=dtype, meta=meta["meta"])
    if model.fingerprint != fingerprint:
        raise CheckpointCorruptError(f"{path}: stored architecture does not reproduce its fingerprint")
    model.load_state(state)
    model.checkpoint_extra = meta.get("extra", {})
    return model
