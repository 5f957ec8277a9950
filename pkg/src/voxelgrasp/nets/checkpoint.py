"""Binary checkpoint format.

Layout (all little-endian):

    magic  b"RUNC"
    u32    format version (currently 1)
    u32    spec length, then that many bytes of JSON spec text
    u32    tensor count, then per tensor:
        u8       0 = trainable tensor, 1 = buffer
        u16      name length, then the utf-8 name
        u8       ndim, then ndim x u32 dims
        f32 data (row-major)
    8 bytes  checksum: first 8 bytes of SHA-256 over everything above

Round trips are bit-exact for float32 parameters (the on-disk dtype);
float64 gradient-check builds are truncated to float32 on save.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpoint, UnsupportedVersion
from ..ioutil import atomic_write_bytes
from .model import NetworkSpec, Parameters

MAGIC = b"RUNC"
FORMAT_VERSION = 1


def _pack_tensor(name: str, arr: np.ndarray, flag: int) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    name_b = name.encode("utf-8")
    head = struct.pack("<BH", flag, len(name_b)) + name_b
    head += struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def save_checkpoint(params: Parameters, path) -> None:
    """Serialize parameters (spec embedded) atomically to `path`."""
    spec_b = params.spec.to_json().encode("utf-8")
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(spec_b)), spec_b]
    entries = [(n, t, 0) for n, t in params.tensors.items()] + [
        (n, t, 1) for n, t in params.buffers.items()
    ]
    out.append(struct.pack("<I", len(entries)))
    for name, arr, flag in entries:
        out.append(_pack_tensor(name, arr, flag))
    payload = b"".join(out)
    checksum = hashlib.sha256(payload).digest()[:8]
    atomic_write_bytes(path, payload + checksum)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpoint("checkpoint truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Parameters:
    """Read a checkpoint; the returned Parameters carry their NetworkSpec."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12:
        raise CorruptCheckpoint("file too short to be a checkpoint")
    payload, checksum = raw[:-8], raw[-8:]
    if hashlib.sha256(payload).digest()[:8] != checksum:
        raise CorruptCheckpoint("checksum mismatch")
    r = _Reader(payload)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version}, expected {FORMAT_VERSION}")
    (spec_len,) = r.unpack("<I")
    spec = NetworkSpec.from_json(r.take(spec_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    params = Parameters(spec)
    for _ in range(count):
        flag, name_len = r.unpack("<BH")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).copy()
        (params.buffers if flag else params.tensors)[name] = arr
    if r.pos != len(payload):
        raise CorruptCheckpoint(f"{len(payload) - r.pos} trailing bytes")
    return params
