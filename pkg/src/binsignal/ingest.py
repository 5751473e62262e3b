"""Loading file binaries, hex dumps and dataset manifests."""
import csv
import os
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ByteSequence",
    "DatasetManifest",
    "IngestError",
    "ManifestWarning",
    "load_raw_binary",
    "parse_hexdump_bytes",
    "bytes_to_integer_array",
    "load_manifest",
    "load_binary",
    "write_manifest",
]

SPLITS = ("train", "val", "test")

_ADDRESS = re.compile(r"^[0-9A-Fa-f]+$")
_HEXBYTE = re.compile(r"^[0-9A-Fa-f]{2}$")


class IngestError(ValueError):
    pass


class ManifestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ByteSequence:
    data: bytes
    source_id: str

    def __len__(self):
        return len(self.data)


@dataclass
class DatasetManifest:
    entries: list
    class_count: int
    split: str = "train"
    missing_labels: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self):
        return [p for p, _ in self.entries]

    @property
    def labels(self):
        return np.array([lab for _, lab in self.entries], dtype=np.int64)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)


def load_raw_binary(path):
    """Read every byte of ``path``. Empty files are rejected."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IngestError(f"cannot read {path}: {e.strerror}") from e
    if not data:
        raise IngestError(f"empty input: {path}")
    return ByteSequence(data, path)


def parse_hexdump_bytes(path):
    """Parse a Microsoft-style ``.bytes`` dump.

    Each non-blank line is an address token followed by two-digit hex bytes.
    ``??`` (unavailable byte) is read as 0 so offsets stay aligned.
    """
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="ascii", errors="strict") as f:
            lines = f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise IngestError(f"cannot read {path}: {e}") from e

    out = bytearray()
    for lineno, line in enumerate(lines, 1):
        tokens = line.split()
        if not tokens:
            continue
        if not _ADDRESS.match(tokens[0]) or len(tokens[0]) < 4:
            raise IngestError(f"{path}:{lineno}: line has no address prefix: {line.strip()!r}")
        for tok in tokens[1:]:
            if tok == "??":
                out.append(0)
            elif _HEXBYTE.match(tok):
                out.append(int(tok, 16))
            else:
                raise IngestError(f"{path}:{lineno}: malformed hex token {tok!r} in line {line.strip()!r}")
    if not out:
        raise IngestError(f"empty input: {path}")
    return ByteSequence(bytes(out), path)


def bytes_to_integer_array(seq):
    """Unsigned integer value of every byte, as a uint8 array."""
    data = seq.data if isinstance(seq, ByteSequence) else bytes(seq)
    if not data:
        raise IngestError("empty input")
    return np.frombuffer(data, dtype=np.uint8).copy()


def load_binary(path, fmt="raw"):
    """Integer array of a raw binary (``fmt="raw"``) or hex dump (``"hexbytes"``)."""
    if fmt == "raw":
        return bytes_to_integer_array(load_raw_binary(path))
    if fmt == "hexbytes":
        return bytes_to_integer_array(parse_hexdump_bytes(path))
    raise ValueError(f"unknown input format {fmt!r}")


def load_manifest(path, split="train"):
    """Read a ``path,label`` CSV.

    Relative paths are resolved against the manifest's directory. The class
    count is ``max(label) + 1``; labels missing below the maximum only warn.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label"]:
            raise IngestError(f"{path}: expected header 'path,label', got {header!r}")
        entries, seen = [], set()
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise IngestError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            p, lab = row[0].strip(), row[1].strip()
            try:
                label = int(lab)
            except ValueError:
                raise IngestError(f"{path}:{lineno}: non-integer label {lab!r}") from None
            if label < 0:
                raise IngestError(f"{path}:{lineno}: negative label {label}")
            full = p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))
            if full in seen:
                raise IngestError(f"{path}:{lineno}: duplicate path {p!r}")
            seen.add(full)
            entries.append((full, label))
    if not entries:
        raise IngestError(f"{path}: manifest has no entries")

    class_count = max(lab for _, lab in entries) + 1
    present = {lab for _, lab in entries}
    missing = [c for c in range(class_count) if c not in present]
    if missing:
        warnings.warn(f"{path}: labels {missing} never occur (class_count={class_count})",
                      ManifestWarning, stacklevel=2)
    return DatasetManifest(entries, class_count, split, missing)


def write_manifest(path, entries):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["path", "label"])
        for p, lab in entries:
            w.writerow([p, int(lab)])
