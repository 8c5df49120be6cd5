"""SPNN model checkpoint files.

Layout (little-endian)::

    "SPNN" u16 version u16 arch_id
    u32 config_len, config_len bytes of UTF-8 "key=value" lines
    u32 blob_count, then per blob:
        u16 name_len, name (UTF-8), u16 ndim, ndim x u32 dims, f64 data (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(arch_id: int, config: dict, arrays: dict) -> bytes:
    cfg = "".join(f"{k}={config[k]}\n" for k in sorted(config)).encode("utf-8")
    out = [MAGIC, struct.pack("<HH", VERSION, arch_id), struct.pack("<I", len(cfg)), cfg,
           struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<H{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        chunk = self.buf[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def from_bytes(buf: bytes):
    """Returns ``(arch_id, config, arrays)``."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    version, arch_id = r.unpack("<HH")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<I")
    try:
        text = r.take(cfg_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("config block is not UTF-8") from exc
    config = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed config line {line!r}")
        config[key] = value
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("blob name is not UTF-8") from exc
        (ndim,) = r.unpack("<H")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last blob")
    return arch_id, config, arrays


def write_checkpoint(path, arch_id: int, config: dict, arrays: dict) -> None:
    Path(path).write_bytes(to_bytes(arch_id, config, arrays))


def read_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
