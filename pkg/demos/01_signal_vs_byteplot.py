"""
A binary as a signal and as a byteplot
======================================

Run with ``python3 demos/01_signal_vs_byteplot.py``.
"""

import numpy as np

from binsignal.noisebench import roundtrip_image_noise, roundtrip_signal_noise
from binsignal.sigproc import binary_to_signal, byteplot, heuristic_reshape
from binsignal.synthetic import structured_binary

# a synthetic executable-like file: zero padding, code, strings, tables, ramps
rng = np.random.default_rng(7)
data = structured_binary(rng, 120_000, 120_000)
print("bytes:", data.size, "first 16:", data[:16])

# signal path: divide by 255, Lanczos-resample to a fixed length, keep floats
sig = binary_to_signal(data, 65536)
print("signal:", sig.samples.shape, sig.samples.dtype, "range", sig.samples.min(), sig.samples.max())

# image path: wrap into rows of a size-dependent width, resample, round to 0..255
grid = heuristic_reshape(data)
img = byteplot(data, 256)
print("byteplot grid:", grid.shape, "->", img.shape, img.dtype)

# how much of the file survives a downsample/upsample round trip on each path
for r in roundtrip_signal_noise(data) + roundtrip_image_noise(data):
    print(f"{r.path:6s} {r.source:22s} mse {r.mse:9.2f}  snr {r.snr_db:6.2f} dB")

# the signal is never rounded, so its quantise row is what rounding *would* cost
