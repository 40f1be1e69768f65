"""Binary checkpoint format (``CDGS``); byte layout in docs/formats.md."""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .scene import CORE_FIELDS, DYNAMIC_FIELDS, STATIC_FIELDS, GaussianSet

MAGIC = b"CDGS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQQQ")


class CheckpointError(ValueError):
    pass


def field_order():
    return CORE_FIELDS + STATIC_FIELDS + DYNAMIC_FIELDS


def to_bytes(gs: GaussianSet) -> bytes:
    gs.check()
    parts = [_HEADER.pack(MAGIC, VERSION, gs.sh_degree, gs.keyframes,
                          gs.n_total, gs.n_static, gs.n_dynamic),
             np.ascontiguousarray(gs.kind, dtype=np.uint8).tobytes()]
    for name in field_order():
        parts.append(np.ascontiguousarray(getattr(gs, name), dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes) -> GaussianSet:
    if len(data) < _HEADER.size + 4:
        raise CheckpointError("checkpoint truncated")
    magic, version, sh, kf, n, ns, nd = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError("not a CDGS checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    if ns + nd != n:
        raise CheckpointError("inconsistent counts in header")
    template = GaussianSet.empty(sh_degree=sh, keyframes=kf)
    off = _HEADER.size
    kind = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).copy()
    off += n
    rows = {**{k: n for k in CORE_FIELDS}, **{k: ns for k in STATIC_FIELDS},
            **{k: nd for k in DYNAMIC_FIELDS}}
    arrays = {"kind": kind}
    for name in field_order():
        shape = (rows[name],) + getattr(template, name).shape[1:]
        count = int(np.prod(shape))
        if off + 4 * count > len(body):
            raise CheckpointError("checkpoint truncated")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=count,
                                     offset=off).astype(np.float32).reshape(shape)
        off += 4 * count
    if off != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    gs = template.replace(**arrays)
    if gs.n_static != ns:
        raise CheckpointError("kind tags disagree with header counts")
    return gs


def save_checkpoint(gs: GaussianSet, path):
    Path(path).write_bytes(to_bytes(gs))


def load_checkpoint(path) -> GaussianSet:
    return from_bytes(Path(path).read_bytes())
