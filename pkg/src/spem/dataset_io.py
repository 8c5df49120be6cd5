"""SPEM dataset files, stratified splitting and PGM export.

SPEM layout (little-endian)::

    "SPEM" u16 version u16 task u16 n u16 m u16 d u16 j u16 class_count
    u32 sample_count u64 master_seed, 2 reserved zero bytes          (32 bytes)
    per sample: u16 label u32 stream_id u32 subject_id, j*n*m*d pixel bytes

Pixels are frame-major, row-major within a frame, channel innermost.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SPEM"
VERSION = 1
HEADER = struct.Struct("<4sHHHHHHHIQ2s")
RECORD = struct.Struct("<HII")
assert HEADER.size == 32


class FormatError(ValueError):
    """Base class for unreadable dataset files."""

    code = 10


class BadMagicError(FormatError):
    code = 11


class VersionError(FormatError):
    code = 12


class TruncatedError(FormatError):
    code = 13


class DimensionError(FormatError):
    code = 14


@dataclass
class Dataset:
    task: int
    n: int
    m: int
    d: int
    j: int
    class_count: int
    master_seed: int
    pixels: np.ndarray  # (N, j, n, m, d) uint8
    labels: np.ndarray
    stream_ids: np.ndarray
    subject_ids: np.ndarray
    frame_period: float = field(default=0.5, compare=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.stream_ids = np.asarray(self.stream_ids, dtype=np.int64)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        count = len(self.labels)
        if self.pixels.shape != (count, self.j, self.n, self.m, self.d):
            raise DimensionError(
                f"pixel block {self.pixels.shape} does not match header "
                f"({count}, {self.j}, {self.n}, {self.m}, {self.d})")
        if len(self.stream_ids) != count or len(self.subject_ids) != count:
            raise DimensionError("id arrays do not match sample count")
        if count and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DimensionError("label outside [0, class_count)")

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.header() == other.header() and all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("pixels", "labels", "stream_ids", "subject_ids"))

    def header(self) -> tuple:
        return (self.task, self.n, self.m, self.d, self.j, self.class_count, len(self), self.master_seed)

    def stream(self, k: int):
        from .crossbar import PressureFrame
        from .scan import PressureStream

        frames = tuple(PressureFrame(self.pixels[k, f], (f + 1) * self.frame_period)
                       for f in range(self.j))
        return PressureStream(frames, int(self.labels[k]), int(self.stream_ids[k]),
                              int(self.subject_ids[k]))

    @property
    def samples(self):
        return [self.stream(k) for k in range(len(self))]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.task, self.n, self.m, self.d, self.j, self.class_count,
                       self.master_seed, self.pixels[index], self.labels[index],
                       self.stream_ids[index], self.subject_ids[index], self.frame_period)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def _check_u(name, value, bits):
    if not 0 <= int(value) < 2**bits:
        raise DimensionError(f"{name}={value} does not fit in u{bits}")


def to_bytes(ds: Dataset) -> bytes:
    for name, bits in (("task", 16), ("n", 16), ("m", 16), ("d", 16), ("j", 16),
                       ("class_count", 16), ("master_seed", 64)):
        _check_u(name, getattr(ds, name), bits)
    _check_u("sample_count", len(ds), 32)
    head = HEADER.pack(MAGIC, VERSION, ds.task, ds.n, ds.m, ds.d, ds.j, ds.class_count,
                       len(ds), ds.master_seed, bytes(2))
    parts = [head]
    for k in range(len(ds)):
        _check_u("stream_id", ds.stream_ids[k], 32)
        _check_u("subject_id", ds.subject_ids[k], 32)
        parts.append(RECORD.pack(int(ds.labels[k]), int(ds.stream_ids[k]), int(ds.subject_ids[k])))
        parts.append(np.ascontiguousarray(ds.pixels[k]).tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Dataset:
    if len(buf) < 4:
        raise TruncatedError("file shorter than the magic number")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    if len(buf) < HEADER.size:
        raise TruncatedError("header truncated")
    _, version, task, n, m, d, j, classes, count, seed, reserved = HEADER.unpack_from(buf)
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    if reserved != bytes(2):
        raise FormatError("reserved header bytes are not zero")
    if min(n, m, d, j) == 0 or classes == 0:
        raise DimensionError("zero dimension in header")
    frame = j * n * m * d
    rec = RECORD.size + frame
    expected = HEADER.size + count * rec
    if len(buf) < expected:
        raise TruncatedError(f"expected {expected} bytes, found {len(buf)}")
    if len(buf) > expected:
        raise DimensionError(f"{len(buf) - expected} trailing bytes after {count} samples")
    body = np.frombuffer(buf, dtype=np.uint8, offset=HEADER.size).reshape(count, rec)
    meta = np.frombuffer(body[:, :RECORD.size].tobytes(),
                         dtype=np.dtype([("label", "<u2"), ("stream", "<u4"), ("subject", "<u4")]))
    if count and meta["label"].max() >= classes:
        raise DimensionError("label outside [0, class_count)")
    pixels = body[:, RECORD.size:].reshape(count, j, n, m, d).copy()
    return Dataset(task, n, m, d, j, classes, seed, pixels, meta["label"].astype(np.int64),
                   meta["stream"].astype(np.int64), meta["subject"].astype(np.int64))


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(ds: Dataset, path) -> None:
    _atomic_write(path, to_bytes(ds))


def read_dataset(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())


def split_indices(labels, ratios=(0.7, 0.15, 0.15), seed: int = 0):
    """Stratified (train, test, validation) index arrays.

    Test and validation sizes are ``floor(N * ratio)`` overall; each class
    gets the floor of its share and the few leftover slots go to the classes
    with the largest fractional remainders. Everything else is training data.
    """
    labels = np.asarray(labels)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    classes = np.unique(labels)
    rng = np.random.default_rng(seed)
    per_class = {}
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if len(idx) < 3:
            raise ValueError(f"class {c} has {len(idx)} samples; need at least 3 to split")
        per_class[c] = rng.permutation(idx)

    counts = np.array([len(per_class[c]) for c in classes])
    quotas = np.zeros((len(classes), 2), dtype=np.int64)
    for col, r in enumerate(ratios[1:]):
        want = int(np.floor(len(labels) * r + 1e-9))
        exact = counts * r
        base = np.floor(exact + 1e-9).astype(np.int64)
        left = want - base.sum()
        order = np.lexsort((np.arange(len(classes)), -(exact - base)))
        base[order[:left]] += 1
        quotas[:, col] = base

    train, test, val = [], [], []
    for ci, c in enumerate(classes):
        idx = per_class[c]
        nt, nv = quotas[ci]
        if len(idx) - nt - nv < 1:
            raise ValueError(f"class {c} too small for the requested ratios")
        test.append(idx[:nt])
        val.append(idx[nt:nt + nv])
        train.append(idx[nt + nv:])
    return tuple(rng.permutation(np.concatenate(part)) for part in (train, test, val))


def split(ds: Dataset, ratios=(0.7, 0.15, 0.15), seed: int = 0):
    """Stratified (train, test, validation) datasets."""
    return tuple(ds.subset(ix) for ix in split_indices(ds.labels, ratios, seed))


def export_pgm(frame, path) -> None:
    """Write one frame as a binary (P5) PGM, width m, height n."""
    pixels = getattr(frame, "pixels", frame)
    pixels = np.asarray(pixels)
    if pixels.ndim == 3:
        pixels = pixels[..., 0]
    if pixels.ndim != 2:
        raise ValueError("frame must be n x m (x 1)")
    pixels = pixels.astype(np.uint8)
    n, m = pixels.shape
    head = f"P5\n{m} {n}\n255\n".encode("ascii")
    _atomic_write(path, head + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Parse a binary PGM with maxval < 256 into an ``(n, m)`` uint8 array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise BadMagicError("not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise FormatError("16-bit PGM not supported")
    payload = data[pos + 1:pos + 1 + width * height]
    if len(payload) != width * height:
        raise TruncatedError("PGM payload truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
