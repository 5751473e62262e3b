"""On-disk formats: signal files, checkpoints and PGM byteplots.

All integers are little-endian regardless of host byte order.

Signal file::

    "1DSG" | u8 version=1 | u8 flags (bit0: z-normalised) | 2 zero octets
    | u64 length | length x f32 samples

Checkpoint file::

    "1DCK" | u8 version=1 | 3 zero octets
    | u64 n | n octets UTF-8 key=value text (model config + metadata)
    | u32 tensor count
    | per tensor: u32 n, n octets UTF-8 name | u8 rank | rank x u64 dims
      | prod(dims) x f32
    | u64 checksum (BLAKE2b, 8-octet digest, of every preceding octet)
"""
import hashlib
import io
import os
import struct

import numpy as np

from .sigproc import UNIT_RANGE, Z_NORMALISED, Signal

__all__ = [
    "FormatError",
    "write_signal_file",
    "read_signal_file",
    "signal_file_bytes",
    "write_checkpoint",
    "read_checkpoint",
    "checkpoint_bytes",
    "write_pgm",
    "read_pgm",
]

SIGNAL_MAGIC = b"1DSG"
CHECKPOINT_MAGIC = b"1DCK"
VERSION = 1

_SIG_HEADER = struct.Struct("<4sBBHQ")
_F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def signal_file_bytes(sig):
    if isinstance(sig, Signal):
        samples, norm = sig.samples, sig.normalisation
    else:
        samples, norm = np.asarray(sig), UNIT_RANGE
    flags = 1 if norm == Z_NORMALISED else 0
    data = np.ascontiguousarray(samples, dtype=_F32)
    return _SIG_HEADER.pack(SIGNAL_MAGIC, VERSION, flags, 0, data.size) + data.tobytes()


def write_signal_file(path, sig):
    with open(path, "wb") as f:
        f.write(signal_file_bytes(sig))


def read_signal_file(path):
    with open(path, "rb") as f:
        raw = f.read()
    return parse_signal_bytes(raw, source=os.fspath(path))


def parse_signal_bytes(raw, source="<bytes>"):
    if len(raw) < _SIG_HEADER.size:
        raise FormatError(f"{source}: truncated signal header")
    magic, version, flags, reserved, length = _SIG_HEADER.unpack_from(raw)
    if magic != SIGNAL_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if reserved != 0 or flags & ~1:
        raise FormatError(f"{source}: reserved bits set")
    body = raw[_SIG_HEADER.size:]
    if len(body) != 4 * length:
        raise FormatError(f"{source}: declared {length} samples, found {len(body) / 4:g}")
    samples = np.frombuffer(body, dtype=_F32).astype(np.float32)
    return Signal(samples, Z_NORMALISED if flags & 1 else UNIT_RANGE)


def _checksum(buf):
    return hashlib.blake2b(buf, digest_size=8).digest()


def checkpoint_bytes(config_text, tensors):
    """Serialise ``config_text`` and an ordered ``{name: array}`` mapping."""
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC + struct.pack("<B3x", VERSION))
    text = config_text.encode("utf-8")
    out.write(struct.pack("<Q", len(text)) + text)
    out.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=_F32, order="C")
        bname = name.encode("utf-8")
        out.write(struct.pack("<I", len(bname)) + bname)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(arr.tobytes())
    buf = out.getvalue()
    return buf + _checksum(buf)


def write_checkpoint(path, config_text, tensors):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(config_text, tensors))


def parse_checkpoint_bytes(raw, source="<bytes>"):
    if len(raw) < 16:
        raise FormatError(f"{source}: truncated checkpoint")
    body, digest = raw[:-8], raw[-8:]
    if _checksum(body) != digest:
        raise FormatError(f"{source}: checksum mismatch")
    if body[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{source}: bad magic {body[:4]!r}")
    if body[4] != VERSION:
        raise FormatError(f"{source}: unsupported version {body[4]}")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise FormatError(f"{source}: truncated checkpoint")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (n,) = struct.unpack("<Q", take(8))
    text = take(n).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype=_F32).astype(np.float32).reshape(dims)
        tensors[name] = arr
    if pos != len(body):
        raise FormatError(f"{source}: {len(body) - pos} trailing octets")
    return text, tensors


def read_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    return parse_checkpoint_bytes(raw, source=os.fspath(path))


def write_pgm(path, image):
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("PGM export needs a 2D uint8 array")
    rows, cols = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        raw = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    cols, rows = int(fields[1]), int(fields[2])
    data = raw[pos + 1:pos + 1 + rows * cols]
    return np.frombuffer(data, dtype=np.uint8).reshape(rows, cols).copy()
