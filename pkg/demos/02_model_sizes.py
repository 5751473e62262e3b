"""
Parameter and MAC counts of the 1D ResNets
==========================================

Run with ``python3 demos/02_model_sizes.py``. Counts are analytic, no weights
are allocated.
"""

from binsignal.model_builder import build_model, parse_model_name, summarize

# 47 classes, input of 65536 samples
for name in ("resnet1d18", "resnet1d34", "resnet1d50", "resnet1d101", "resnet1d152", "resnet1dv2-152d-se"):
    s = summarize(parse_model_name(name, class_count=47))
    print(f"{name:20s} {s.params_m:7.2f} M params {s.gmacs:6.2f} G MACs")

# kernel flattening keeps parameters, stride squaring keeps compute
print()
for stride2 in (True, False):
    for kernel2 in (True, False):
        s = summarize(parse_model_name("resnet1d18", class_count=47,
                                       square_stride=stride2, square_kernel=kernel2))
        print(f"stride^2={stride2!s:5} kernel^2={kernel2!s:5} {s.params_m:6.2f} M {s.gmacs:6.2f} G")

# how the length shrinks through the network
m = build_model(parse_model_name("resnet1d18"), materialize=False)
print("\nstage lengths at 65536:", m.stage_lengths(65536), "total stride", m.total_stride())
for n, conv in list(m.conv_layers())[:4]:
    print(f"{n:28s} 2D {conv.source.kernel_h}x{conv.source.kernel_w}/s{conv.source.stride_h}"
          f" -> 1D k{conv.spec.kernel}/s{conv.spec.stride}")
