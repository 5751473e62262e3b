"""Signal and byteplot preprocessing.

Two paths from an integer byte array:

* signal path: divide by 255, resample to a fixed length in 1D, keep floats;
* byteplot path: reshape into a grid whose width depends on file size,
  resample in 2D, round to 8-bit pixels.

Resampling uses pixel-centre alignment: output sample ``j`` sits at source
coordinate ``(j + 0.5) * src/dst - 0.5``. Taps outside the input are clamped
to the edge sample and the weights of every output sample are renormalised to
sum to one.
"""
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Signal",
    "ResampleSpec",
    "CorpusStats",
    "minmax_normalize",
    "lanczos_weight",
    "filter_kernel",
    "resample_weights",
    "resample_1d",
    "resample_2d",
    "heuristic_width",
    "heuristic_reshape",
    "quantize_clip",
    "compute_corpus_stats",
    "znormalize",
    "denormalize",
    "binary_to_signal",
    "byteplot",
]

UNIT_RANGE = "unit_range"
Z_NORMALISED = "z_normalised"
FILTERS = ("lanczos", "nearest", "linear", "cubic")

# (upper bound in KiB, width); files at or beyond the last bound get 1024.
_WIDTH_TABLE = ((10, 32), (30, 64), (60, 128), (100, 256), (200, 384), (500, 512), (1000, 768))


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    normalisation: str = UNIT_RANGE

    def __post_init__(self):
        if self.normalisation not in (UNIT_RANGE, Z_NORMALISED):
            raise ValueError(f"unknown normalisation {self.normalisation!r}")
        if len(self.samples) == 0:
            raise ValueError("signal must have at least one sample")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class ResampleSpec:
    filter: str = "lanczos"
    lanczos_a: int = 3
    antialias: bool = None

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.lanczos_a < 1:
            raise ValueError("lanczos_a must be >= 1")
        if self.antialias is None:
            object.__setattr__(self, "antialias", self.filter != "nearest")


@dataclass(frozen=True)
class CorpusStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"degenerate corpus: std={self.std}")


def minmax_normalize(arr):
    arr = np.asarray(arr)
    if arr.size == 0:
        raise ValueError("empty input")
    return Signal(arr.astype(np.float64) / 255.0, UNIT_RANGE)


def lanczos_weight(x, a=3):
    """sinc(x) * sinc(x / a) on |x| < a, zero elsewhere."""
    if a < 1:
        raise ValueError("a must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    w = np.sinc(x) * np.sinc(x / a)
    # exact zeros at the nonzero integers, so same-length resampling is an exact copy
    w = np.where((np.abs(x) < a) & ((x == 0) | (x != np.round(x))), w, 0.0)
    return float(w) if w.ndim == 0 else w


def _linear(x):
    return np.maximum(0.0, 1.0 - np.abs(x))


def _cubic(x):
    # Catmull-Rom (B=0, C=0.5)
    ax = np.abs(x)
    inner = (1.5 * ax - 2.5) * ax * ax + 1.0
    outer = ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    return np.where(ax < 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def _box(x):
    return ((x >= -0.5) & (x < 0.5)).astype(np.float64)


def filter_kernel(spec):
    """Return ``(kernel, support)`` for a resample spec."""
    if spec.filter == "lanczos":
        a = spec.lanczos_a
        return (lambda x: lanczos_weight(x, a)), float(a)
    if spec.filter == "linear":
        return _linear, 1.0
    if spec.filter == "cubic":
        return _cubic, 2.0
    return _box, 0.5


def resample_weights(src_len, dst_len, spec=ResampleSpec()):
    """Tap indices and normalised weights, both shaped ``(dst_len, taps)``."""
    if src_len < 1 or dst_len < 1:
        raise ValueError(f"lengths must be >= 1, got {src_len} -> {dst_len}")
    kernel, support = filter_kernel(spec)
    scale = src_len / dst_len
    fscale = scale if (spec.antialias and scale > 1.0) else 1.0
    support *= fscale

    centre = (np.arange(dst_len, dtype=np.float64) + 0.5) * scale - 0.5
    first = np.floor(centre - support).astype(np.int64)
    taps = int(math.ceil(2.0 * support)) + 2
    idx = first[:, None] + np.arange(taps, dtype=np.int64)[None, :]
    w = kernel((idx - centre[:, None]) / fscale)
    total = w.sum(axis=1, keepdims=True)
    if np.any(total == 0):
        raise ValueError("resampling kernel has zero mass for some output sample")
    w = w / total
    np.clip(idx, 0, src_len - 1, out=idx)
    return idx, w


def _resample_axis(x, n, spec, axis):
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    idx, w = resample_weights(x.shape[-1], n, spec)
    out = np.einsum("...jt,jt->...j", x[..., idx], w)
    return np.moveaxis(out, -1, axis)


def resample_1d(sig, target_len, spec=ResampleSpec()):
    """Resample a 1D signal to ``target_len`` samples (never quantised)."""
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    if isinstance(sig, Signal):
        return Signal(_resample_axis(sig.samples, target_len, spec, -1), sig.normalisation)
    return _resample_axis(sig, target_len, spec, -1)


def resample_2d(grid, out_rows, out_cols, spec=ResampleSpec()):
    """Separable 2D resample: every row first, then every column."""
    if out_rows < 1 or out_cols < 1:
        raise ValueError("output dimensions must be >= 1")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2D grid, got shape {grid.shape}")
    tmp = _resample_axis(grid, out_cols, spec, 1)
    return _resample_axis(tmp, out_rows, spec, 0)


def heuristic_width(n_bytes):
    kib = n_bytes / 1024.0
    for bound, width in _WIDTH_TABLE:
        if kib < bound:
            return width
    return 1024


def heuristic_reshape(arr):
    """Lay bytes out row-major in a grid whose width depends on file size.

    The last row is zero-padded.
    """
    arr = np.asarray(arr)
    if arr.size == 0:
        raise ValueError("empty input")
    cols = heuristic_width(arr.size)
    rows = -(-arr.size // cols)
    grid = np.zeros(rows * cols, dtype=np.float64)
    grid[: arr.size] = arr
    return grid.reshape(rows, cols)


def quantize_clip(values):
    """Round half to even, then clip to [0, 255]."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    return np.clip(np.rint(values), 0, 255).astype(np.int64)


def compute_corpus_stats(signals):
    """Population mean and std over the concatenation of all signals.

    ``signals`` is a manifest of signal files or an iterable of arrays/Signals.
    Two passes (sum, then squared deviation) in a fixed order.
    """
    from .ingest import DatasetManifest
    if isinstance(signals, DatasetManifest):
        from .formats import read_signal_file
        paths = signals.paths

        def load():
            return (read_signal_file(p).samples for p in paths)
    else:
        items = [s.samples if isinstance(s, Signal) else np.asarray(s) for s in signals]

        def load():
            return iter(items)

    total, count = 0.0, 0
    for s in load():
        total += math.fsum(np.asarray(s, dtype=np.float64))
        count += len(s)
    if count == 0:
        raise ValueError("empty corpus")
    mean = total / count
    sq = 0.0
    for s in load():
        d = np.asarray(s, dtype=np.float64) - mean
        sq += math.fsum(d * d)
    std = math.sqrt(sq / count)
    if std == 0:
        raise ValueError("degenerate corpus: all samples equal")
    return CorpusStats(mean, std)


def znormalize(sig, stats):
    samples = sig.samples if isinstance(sig, Signal) else np.asarray(sig, dtype=np.float64)
    return Signal((samples - stats.mean) / stats.std, Z_NORMALISED)


def denormalize(sig, stats):
    samples = sig.samples if isinstance(sig, Signal) else np.asarray(sig, dtype=np.float64)
    return Signal(samples * stats.std + stats.mean, UNIT_RANGE)


def binary_to_signal(arr, length=65536, spec=ResampleSpec()):
    """Integer byte array -> unit-range float signal of ``length`` samples."""
    return resample_1d(minmax_normalize(arr), length, spec)


def byteplot(arr, size=256, spec=ResampleSpec()):
    """Integer byte array -> ``size x size`` uint8 greyscale image."""
    grid = heuristic_reshape(arr)
    return quantize_clip(resample_2d(grid, size, size, spec)).astype(np.uint8)
