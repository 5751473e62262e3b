"""Round-trip noise measurements for the signal and byteplot paths.

Everything is measured on the 0-255 byte scale. SNR is
``10 log10(sum(ref^2) / sum((ref - approx)^2))`` and is +inf for an exact match.
"""
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ingest import load_binary
from .sigproc import (ResampleSpec, heuristic_reshape, minmax_normalize, quantize_clip,
                      resample_1d, resample_2d)

__all__ = [
    "NoiseReport",
    "NoiseConfig",
    "NoiseTable",
    "mse",
    "snr_db",
    "roundtrip_signal_noise",
    "roundtrip_image_noise",
    "total_noise",
    "file_noise",
    "corpus_noise_table",
]

PATHS = ("image", "signal")
SOURCES = ("resize", "quantise", "resize_plus_quantise")


@dataclass(frozen=True)
class NoiseReport:
    path: str
    source: str
    mse: float
    snr_db: float

    def __post_init__(self):
        if self.mse < 0:
            raise ValueError("mse must be non-negative")


@dataclass(frozen=True)
class NoiseConfig:
    target_len: int = 65536
    image_size: int = 256
    spec: ResampleSpec = ResampleSpec()
    fmt: str = "raw"


@dataclass
class NoiseTable:
    rows: list
    n_files: int
    failures: list = field(default_factory=list)

    def get(self, path, source):
        for r in self.rows:
            if r.path == path and r.source == source:
                return r
        raise KeyError((path, source))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "source", "mean_mse", "mean_snr_db"])
        for r in self.rows:
            w.writerow([r.path, r.source, repr(float(r.mse)), repr(float(r.snr_db))])
        return buf.getvalue()


def _pair(ref, approx):
    ref = np.asarray(ref, dtype=np.float64).ravel()
    approx = np.asarray(approx, dtype=np.float64).ravel()
    if ref.shape != approx.shape:
        raise ValueError(f"length mismatch: {ref.size} vs {approx.size}")
    if ref.size == 0:
        raise ValueError("empty input")
    return ref, approx


def mse(ref, approx):
    ref, approx = _pair(ref, approx)
    d = ref - approx
    return float(np.mean(d * d))


def snr_db(ref, approx):
    ref, approx = _pair(ref, approx)
    power = float(np.sum(ref * ref))
    if power == 0:
        raise ValueError("SNR undefined for an all-zero reference")
    d = ref - approx
    err = float(np.sum(d * d))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(power / err)


def _report(path, source, ref, approx):
    m = mse(ref, approx)
    return NoiseReport(path, source, m, math.inf if m == 0 else snr_db(ref, approx))


def roundtrip_signal_noise(arr, target_len=65536, spec=ResampleSpec()):
    arr = np.asarray(arr, dtype=np.float64)
    n = arr.size
    if n == 0:
        raise ValueError("empty input")
    down = resample_1d(minmax_normalize(arr), target_len, spec).samples * 255.0
    up = resample_1d(down / 255.0, n, spec) * 255.0
    q = quantize_clip(down)
    up_q = resample_1d(q / 255.0, n, spec) * 255.0
    return [
        _report("signal", "resize", arr, up),
        _report("signal", "quantise", down, q),
        _report("signal", "resize_plus_quantise", arr, up_q),
    ]


def roundtrip_image_noise(arr, out_rows=256, out_cols=256, spec=ResampleSpec()):
    arr = np.asarray(arr, dtype=np.float64)
    n = arr.size
    if n == 0:
        raise ValueError("empty input")
    grid = heuristic_reshape(arr)
    rows, cols = grid.shape
    small = resample_2d(grid, out_rows, out_cols, spec)
    back = resample_2d(small, rows, cols, spec).ravel()[:n]
    q = quantize_clip(small)
    back_q = resample_2d(q, rows, cols, spec).ravel()[:n]
    return [
        _report("image", "resize", arr, back),
        _report("image", "quantise", small, q),
        _report("image", "resize_plus_quantise", arr, back_q),
    ]


def total_noise(reports):
    """Noise a model actually sees: signals skip quantisation, images do not."""
    path = reports[0].path
    source = "resize" if path == "signal" else "resize_plus_quantise"
    return next(r for r in reports if r.source == source)


def file_noise(path, config=NoiseConfig()):
    arr = load_binary(path, config.fmt)
    return (roundtrip_image_noise(arr, config.image_size, config.image_size, config.spec)
            + roundtrip_signal_noise(arr, config.target_len, config.spec))


def _safe_file_noise(args):
    path, config = args
    try:
        return file_noise(path, config), None
    except Exception as e:  # reported per file, never fatal
        return None, f"{path}: {e}"


def corpus_noise_table(manifest, config=NoiseConfig(), workers=None):
    """Mean per-file MSE and mean per-file SNR (dB) for each (path, source)."""
    paths = manifest.paths if hasattr(manifest, "paths") else list(manifest)
    if workers is None:
        workers = int(os.environ.get("BINSIGNAL_WORKERS", "1"))
    jobs = [(p, config) for p in paths]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_safe_file_noise, jobs))
    else:
        results = [_safe_file_noise(j) for j in jobs]

    sums = {(p, s): [0.0, 0.0] for p in PATHS for s in SOURCES}
    ok, failures = 0, []
    for reports, err in results:
        if err is not None:
            failures.append(err)
            continue
        ok += 1
        for r in reports:
            acc = sums[(r.path, r.source)]
            acc[0] += r.mse
            acc[1] += r.snr_db
    rows = []
    for p in PATHS:
        for s in SOURCES:
            m, snr = sums[(p, s)]
            rows.append(NoiseReport(p, s, m / ok if ok else math.nan, snr / ok if ok else math.nan))
    return NoiseTable(rows, ok, failures)
