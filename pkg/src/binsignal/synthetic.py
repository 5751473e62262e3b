"""Synthetic binaries and signal datasets for tests and demos.

``structured_binary`` imitates the layout of an executable: a run of
sections, each with its own byte statistics (zero padding, near-random code,
ASCII strings, small-integer tables, smooth ramps). ``texture_dataset``
produces two classes of byte streams that differ only in the period of a
repeating texture.
"""
import os

import numpy as np

from .formats import write_signal_file
from .ingest import write_manifest
from .sigproc import binary_to_signal

__all__ = [
    "structured_binary",
    "structured_corpus",
    "texture_bytes",
    "texture_dataset",
    "write_texture_dataset",
]

_SECTIONS = ("zeros", "code", "ascii", "table", "ramp", "sparse")


def _section(kind, n, rng):
    if kind == "zeros":
        return np.zeros(n, dtype=np.uint8)
    if kind == "code":
        # skewed toward common opcodes rather than uniform
        vals = rng.geometric(0.02, n) % 256
        return vals.astype(np.uint8)
    if kind == "ascii":
        out = rng.integers(32, 127, n).astype(np.uint8)
        out[rng.random(n) < 0.08] = 0
        return out
    if kind == "table":
        width = int(rng.choice([2, 4, 8]))
        vals = rng.integers(0, 64, (n + width - 1) // width).astype(np.uint8)
        out = np.zeros(len(vals) * width, dtype=np.uint8)
        out[::width] = vals
        return out[:n]
    if kind == "ramp":
        period = int(rng.integers(16, 512))
        return ((np.arange(n) % period) * 255 // max(period - 1, 1)).astype(np.uint8)
    # sparse: mostly zero with scattered bytes
    out = np.zeros(n, dtype=np.uint8)
    hits = rng.random(n) < 0.05
    out[hits] = rng.integers(1, 256, int(hits.sum()))
    return out


def structured_binary(rng, min_size=50_000, max_size=500_000):
    """One multi-section synthetic binary as a uint8 array."""
    size = int(rng.integers(min_size, max_size + 1))
    n_sections = int(rng.integers(3, 9))
    cuts = np.sort(rng.choice(np.arange(1, size), n_sections - 1, replace=False))
    bounds = np.r_[0, cuts, size]
    parts = [_section(_SECTIONS[rng.integers(len(_SECTIONS))], int(b - a), rng)
             for a, b in zip(bounds[:-1], bounds[1:])]
    return np.concatenate(parts)


def structured_corpus(directory, count=100, seed=0, min_size=50_000, max_size=500_000):
    """Write ``count`` synthetic binaries to ``directory``; returns their paths."""
    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = os.path.join(directory, f"sample_{i:04d}.bin")
        with open(p, "wb") as f:
            f.write(structured_binary(rng, min_size, max_size).tobytes())
        paths.append(p)
    return paths


def texture_bytes(period, length, rng, noise=16):
    """Bytes whose dominant period is ``period``.

    A sinusoid of that period (random amplitude and phase) carries most of the
    energy; a random motif of the same period and white jitter sit on top.
    """
    t = np.arange(length)
    amp = rng.uniform(40, 90)
    x = 128 + amp * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    motif = rng.normal(0, 20, period)
    x += np.tile(motif, length // period + 1)[:length]
    x += rng.normal(0, noise, length)
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def texture_dataset(n, length=4096, periods=(6, 23), seed=0):
    """``n`` balanced unit-range signals, label = index of the texture period."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(periods)
    rng.shuffle(labels)
    x = np.empty((n, 1, length), dtype=np.float32)
    for i, lab in enumerate(labels):
        x[i, 0] = binary_to_signal(texture_bytes(periods[lab], length, rng), length).samples
    return x, labels


def write_texture_dataset(directory, n_train=400, n_val=100, length=4096, periods=(6, 23), seed=0):
    """Write signal files and ``train.csv`` / ``val.csv`` manifests; returns the manifest paths."""
    os.makedirs(directory, exist_ok=True)
    out = []
    for split, n, s in (("train", n_train, seed), ("val", n_val, seed + 1)):
        x, y = texture_dataset(n, length, periods, s)
        entries = []
        for i in range(n):
            name = f"{split}_{i:04d}.1dsg"
            write_signal_file(os.path.join(directory, name), x[i, 0])
            entries.append((name, int(y[i])))
        path = os.path.join(directory, f"{split}.csv")
        write_manifest(path, entries)
        out.append(path)
    return tuple(out)
