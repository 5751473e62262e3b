"""ResNet1D construction from 2D ResNet definitions.

Each network is described by the 2D layers of the ResNet it derives from
(7x7/3x3 kernels, stride-2 downsampling). Every 2D conv and pooling window is
mapped to 1D by flattening the kernel (k x k -> k^2) and squaring the stride
(s x s -> s^2), which keeps the parameter count of every conv and the total
downsampling factor of the network. Either half of the rule can be switched off
to reproduce the conversion ablation.
"""
import re
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .layers import (Activation, BasicBlock, Bottleneck, ClassificationHead, Conv1d, ConvLayerSpec,
                     GroupNorm, GroupNormSpec, MaxPool1d, Module, PreActBlock, Sequential, default_groups)

__all__ = [
    "Conv2DConfig",
    "ModelConfig",
    "ModelSummary",
    "ResNet1D",
    "BLOCK_TYPES",
    "DEPTH_PRESETS",
    "convert_2d_to_1d",
    "convert_window",
    "build_model",
    "count_params",
    "count_macs",
    "summarize",
    "parse_model_name",
    "preset_names",
]

BLOCK_TYPES = ("V1", "V1_5", "V2", "V2_SE")
STEMS = ("standard", "deep")

DEPTH_PRESETS = {
    18: (2, 2, 2, 2),
    34: (3, 4, 6, 3),
    50: (3, 4, 6, 3),
    101: (3, 4, 23, 3),
    152: (3, 8, 36, 3),
}
_BASIC_DEPTHS = (18, 34)


@dataclass(frozen=True)
class Conv2DConfig:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    groups: int = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")

    @classmethod
    def square(cls, cin, cout, kernel, stride=1, groups=1):
        return cls(cin, cout, kernel, kernel, stride, stride, groups)

    @property
    def param_count(self):
        return self.kernel_h * self.kernel_w * (self.in_channels // self.groups) * self.out_channels


def convert_window(kernel_h, kernel_w, stride_h, stride_w, square_kernel=True, square_stride=True,
                   strict=True):
    """(kernel, stride) of the 1D equivalent of a 2D window."""
    if strict and (kernel_h != kernel_w or stride_h != stride_w):
        raise ValueError(f"non-square window {kernel_h}x{kernel_w} stride {stride_h}x{stride_w}; "
                         "pass strict=False to multiply the two sides")
    kernel = kernel_h * kernel_w if square_kernel else kernel_h
    stride = stride_h * stride_w if square_stride else stride_h
    return kernel, stride


def convert_2d_to_1d(cfg, square_kernel=True, square_stride=True, strict=True):
    kernel, stride = convert_window(cfg.kernel_h, cfg.kernel_w, cfg.stride_h, cfg.stride_w,
                                    square_kernel, square_stride, strict)
    return ConvLayerSpec(cfg.in_channels, cfg.out_channels, kernel, stride, cfg.groups)


@dataclass(frozen=True)
class ModelConfig:
    block_type: str = "V2_SE"
    depths: tuple = (3, 8, 36, 3)
    base_width: int = 64
    stem: str = "deep"
    activation: str = "gelu"
    class_count: int = 2
    input_length: int = 65536
    in_channels: int = 1
    # 2D stride of the first block of each stage, before conversion
    stage_strides: tuple = (1, 2, 2, 2)
    square_kernel: bool = True
    square_stride: bool = True
    se_ratio: int = 2
    depthwise: bool = False
    # upper bound on GroupNorm groups; each norm uses the largest divisor of its width up to this
    norm_groups: int = 32
    bottleneck: bool = None

    def __post_init__(self):
        if self.block_type not in BLOCK_TYPES:
            raise ValueError(f"block_type must be one of {BLOCK_TYPES}, got {self.block_type!r}")
        if self.stem not in STEMS:
            raise ValueError(f"stem must be one of {STEMS}, got {self.stem!r}")
        if self.activation not in ("relu", "gelu"):
            raise ValueError(f"activation must be relu or gelu, got {self.activation!r}")
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "stage_strides", tuple(int(s) for s in self.stage_strides))
        if len(self.depths) != 4 or min(self.depths) < 1:
            raise ValueError(f"depths must be four counts >= 1, got {self.depths}")
        if len(self.stage_strides) != 4 or min(self.stage_strides) < 1:
            raise ValueError(f"stage_strides must be four strides >= 1, got {self.stage_strides}")
        if min(self.class_count, self.base_width, self.input_length, self.norm_groups) < 1:
            raise ValueError("class_count, base_width, input_length and norm_groups must be >= 1")
        if self.bottleneck is None:
            basic = self.block_type == "V1" and sum(self.depths) <= sum(DEPTH_PRESETS[34])
            object.__setattr__(self, "bottleneck", not basic)
        if self.block_type in ("V1_5", "V2", "V2_SE") and not self.bottleneck:
            raise ValueError(f"{self.block_type} blocks are always bottlenecks")
        if self.stem == "deep" and self.base_width < 2:
            raise ValueError("deep stem needs base_width >= 2")

    @property
    def stem_windows(self):
        """2D (kernel, stride) of the stem convs, then of the max pool."""
        if self.stem == "standard":
            return [(7, 2)], (3, 2)
        return [(3, 2), (3, 1), (3, 1)], (3, 2)

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kw = {}
        types = {f.name: f for f in fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            k, v = line.split("=", 1)
            if k not in types:
                continue
            default = types[k].default
            if isinstance(default, tuple):
                kw[k] = tuple(int(x) for x in v.split(","))
            elif isinstance(default, bool) or default is None:
                kw[k] = v == "True"
            elif isinstance(default, int):
                kw[k] = int(v)
            else:
                kw[k] = v
        return cls(**kw)


@dataclass(frozen=True)
class ModelSummary:
    parameter_count: int
    mac_count: int

    @property
    def params_m(self):
        return self.parameter_count / 1e6

    @property
    def gmacs(self):
        return self.mac_count / 1e9


class ResNet1D(Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        sk, ss = cfg.square_kernel, cfg.square_stride
        act = cfg.activation
        preact = cfg.block_type in ("V2", "V2_SE")

        conv_windows, pool_window = cfg.stem_windows
        w = cfg.base_width
        widths = [w] if cfg.stem == "standard" else [w // 2, w // 2, w]
        stem, cin = [], cfg.in_channels
        for i, ((k2, s2), cout) in enumerate(zip(conv_windows, widths)):
            src = Conv2DConfig.square(cin, cout, k2, s2)
            stem.append(Conv1d(convert_2d_to_1d(src, sk, ss), source=src))
            last = i == len(conv_windows) - 1
            if not (last and preact):
                stem += [GroupNorm(cout), Activation(act)]
            cin = cout
        pk2, ps2 = pool_window
        pk, ps = convert_window(pk2, pk2, ps2, ps2, sk, ss)
        stem.append(MaxPool1d(pk, ps))
        self.stem = Sequential(*stem)

        block_k, _ = convert_window(3, 3, 1, 1, sk, ss)
        stages = []
        for i, (depth, s2d) in enumerate(zip(cfg.depths, cfg.stage_strides)):
            planes = w * 2 ** i
            cout = planes * 4 if cfg.bottleneck else planes
            blocks = []
            for j in range(depth):
                s2 = s2d if j == 0 else 1
                stride = convert_window(1, 1, s2, s2, sk, ss)[1]
                sources = self._sources(cin, planes, cout, s2, cfg.bottleneck, preact)
                if not cfg.bottleneck:
                    blk = BasicBlock(cin, cout, stride, block_k, act, sources)
                elif preact:
                    blk = PreActBlock(cin, planes, cout, stride, block_k, act,
                                      cfg.se_ratio if cfg.block_type == "V2_SE" else None,
                                      cfg.depthwise, sources)
                else:
                    blk = Bottleneck(cin, planes, cout, stride, block_k, act,
                                     "reduce" if cfg.block_type == "V1" else "spatial", sources)
                blocks.append(blk)
                cin = cout
            stages.append(Sequential(*blocks))
        self.stages = Sequential(*stages)
        self.head = ClassificationHead(cin, cfg.class_count, act, pre_norm=preact)
        self.out_channels = cin
        for _, m in self.named_modules():
            if isinstance(m, GroupNorm):
                c = m.spec.channels
                m.spec = GroupNormSpec(c, default_groups(c, cfg.norm_groups), m.spec.eps)

    @staticmethod
    def _sources(cin, planes, cout, stride, bottleneck, preact):
        sq = Conv2DConfig.square
        if not bottleneck:
            src = {"conv1": sq(cin, cout, 3, stride), "conv2": sq(cout, cout, 3)}
        else:
            src = {"conv1": sq(cin, planes, 1), "conv2": sq(planes, planes, 3, stride),
                   "conv3": sq(planes, cout, 1)}
        if stride != 1 or cin != cout:
            src["shortcut"] = sq(cin, cout, 1, 1 if preact else stride)
        return src

    def forward(self, x):
        return self.head(self.stages(self.stem(x)))

    def features(self, x):
        return self.stages(self.stem(x))

    def macs(self, length):
        m1, length = self.stem.macs(length)
        m2, length = self.stages.macs(length)
        m3, _ = self.head.macs(length)
        return m1 + m2 + m3, 1

    def stage_lengths(self, length=None):
        length = self.cfg.input_length if length is None else length
        _, length = self.stem.macs(length)
        out = [length]
        for stage in self.stages.layers:
            _, length = stage.macs(length)
            out.append(length)
        return out

    def total_stride(self):
        cfg = self.cfg
        total = 1
        for layer in self.stem.layers:
            if isinstance(layer, Conv1d):
                total *= layer.spec.stride
            elif isinstance(layer, MaxPool1d):
                total *= layer.stride
        for s in cfg.stage_strides:
            total *= convert_window(1, 1, s, s, cfg.square_kernel, cfg.square_stride)[1]
        return total

    def conv_layers(self):
        return [(n, m) for n, m in self.named_modules() if isinstance(m, Conv1d)]

    def state_dict(self):
        return {n: t.data for n, t in self.named_parameters()}

    def load_state_dict(self, tensors):
        own = dict(self.named_parameters())
        if set(own) != set(tensors):
            missing, extra = sorted(set(own) - set(tensors)), sorted(set(tensors) - set(own))
            raise ValueError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, t in own.items():
            arr = np.asarray(tensors[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = np.array(arr, dtype=np.float32)
            t.grad = None
        return self


def build_model(cfg, seed=0, materialize=True, dtype=np.float32):
    """Build a ResNet1D. With ``materialize=False`` weights stay shape-only placeholders."""
    model = ResNet1D(cfg)
    total = model.total_stride()
    if cfg.input_length % total:
        raise ValueError(f"input_length {cfg.input_length} is not divisible by the total stride {total}")
    if materialize:
        model.initialize(np.random.default_rng(seed), dtype)
    return model


def _as_model(model_or_cfg):
    if isinstance(model_or_cfg, ModelConfig):
        return build_model(model_or_cfg, materialize=False)
    return model_or_cfg


def count_params(model):
    """Trainable scalars of a model (or of the model a config describes)."""
    return int(_as_model(model).param_count())


def count_macs(model, input_length=None):
    """Multiply-accumulates of one forward pass on one sample.

    Convolutions (output positions x output channels x kernel x in/groups)
    and linear layers only.
    """
    model = _as_model(model)
    if input_length is None:
        input_length = model.cfg.input_length if hasattr(model, "cfg") else None
    return int(model.macs(input_length)[0])


def summarize(cfg):
    model = _as_model(cfg)
    return ModelSummary(count_params(model), count_macs(model, cfg.input_length))


_NAME = re.compile(r"^resnet1d(?:v(1|1\.5|1_5|2))?(se)?-?(18|34|50|101|152)(d)?(-?se)?$")


def parse_model_name(name, **overrides):
    """Config for names like ``resnet1d18``, ``resnet1dv1.5-18``, ``resnet1dv2-152d-se``.

    Version defaults to V1, the stem to standard. ``d`` selects the deep stem and
    ``se`` (V2 only) the squeeze-and-excitation blocks.
    """
    m = _NAME.match(name.strip().lower())
    if not m:
        raise ValueError(f"unknown model {name!r}; valid names look like: {', '.join(preset_names())}")
    version, se_a, depth, deep, se_b = m.groups()
    version = {None: "V1", "1": "V1", "1.5": "V1_5", "1_5": "V1_5", "2": "V2"}[version]
    if se_a or se_b:
        if version != "V2":
            raise ValueError(f"{name!r}: squeeze-and-excitation is only defined for V2 blocks")
        version = "V2_SE"
    depth = int(depth)
    kw = dict(block_type=version, depths=DEPTH_PRESETS[depth],
              stem="deep" if deep else "standard",
              activation="gelu" if version == "V2_SE" else "relu",
              bottleneck=None if version == "V1" else True)
    if version == "V1":
        kw["bottleneck"] = depth not in _BASIC_DEPTHS
    kw.update(overrides)
    return ModelConfig(**kw)


def preset_names():
    names = [f"resnet1d{d}" for d in DEPTH_PRESETS]
    names += [f"resnet1dv1.5-{d}" for d in DEPTH_PRESETS]
    names += [f"resnet1dv2-{d}" for d in DEPTH_PRESETS]
    names += [f"resnet1dv2-{d}-se" for d in DEPTH_PRESETS]
    names += [f"resnet1dv2-{d}d-se" for d in DEPTH_PRESETS]
    return names
