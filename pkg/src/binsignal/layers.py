"""Network layers built on :mod:`binsignal.autodiff`.

Parameters are created lazily: a freshly constructed module holds zero-cost
broadcast placeholders with the right shapes, so very large models can be
described and counted without allocating weights. :meth:`Module.initialize`
allocates and fills them.

Every module reports its multiply-accumulate cost through
``macs(length) -> (macs, out_length)``; normalisation, activation, pooling and
additions are free under that convention.
"""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "ConvLayerSpec",
    "GroupNormSpec",
    "SESpec",
    "Module",
    "Conv1d",
    "GroupNorm",
    "Linear",
    "Activation",
    "MaxPool1d",
    "AvgPool1d",
    "SqueezeExcite",
    "BasicBlock",
    "Bottleneck",
    "PreActBlock",
    "ClassificationHead",
    "Sequential",
    "default_groups",
    "group_norm_forward",
    "se_forward",
    "residual_block_forward",
    "classification_head_forward",
]


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.groups < 1:
            raise ValueError(f"kernel, stride and groups must be >= 1: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(f"channels must be divisible by groups: {self}")

    @property
    def param_count(self):
        n = self.out_channels * (self.in_channels // self.groups) * self.kernel
        return n + (self.out_channels if self.bias else 0)


@dataclass(frozen=True)
class GroupNormSpec:
    channels: int
    groups: int
    eps: float = 1e-5

    def __post_init__(self):
        if self.groups < 1 or self.channels % self.groups:
            raise ValueError(f"channels ({self.channels}) must be divisible by groups ({self.groups})")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class SESpec:
    channels: int
    reduction_ratio: int = 2

    @property
    def hidden(self):
        return max(1, self.channels // self.reduction_ratio)


def default_groups(channels, max_groups=32):
    """Largest divisor of ``channels`` not above ``max_groups``."""
    for g in range(min(max_groups, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class Module:
    def __init__(self):
        self._params = {}
        self._inits = {}
        self._children = {}

    def __setattr__(self, name, value):
        if isinstance(value, Module) and name != "_children":
            self.__dict__.setdefault("_children", {})[name] = value
        object.__setattr__(self, name, value)

    def param(self, name, shape, fan_in=None, fill=None):
        t = Tensor(np.broadcast_to(np.zeros((), dtype=np.float32), tuple(shape)), requires_grad=True)
        self._params[name] = t
        self._inits[name] = ("fill", fill) if fill is not None else ("normal", fan_in)
        object.__setattr__(self, name, t)
        return t

    def named_parameters(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for cname, child in self._children.items():
            yield from child.named_modules(f"{prefix}{cname}.")

    def initialize(self, rng, dtype=np.float32):
        """He-normal weights (variance 2/fan_in); constant fills where declared."""
        for _, m in self.named_modules():
            for name, t in m._params.items():
                kind, arg = m._inits[name]
                if kind == "fill":
                    t.data = np.full(t.shape, arg, dtype=dtype)
                else:
                    t.data = (rng.standard_normal(t.shape) * np.sqrt(2.0 / arg)).astype(dtype)
                t.grad = None
        return self

    def astype(self, dtype):
        for t in self.parameters():
            t.data = np.ascontiguousarray(t.data, dtype=dtype)
        return self

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def param_count(self):
        return sum(t.size for t in self.parameters())

    def macs(self, length):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def macs(self, length):
        total = 0
        for layer in self.layers:
            m, length = layer.macs(length)
            total += m
        return total, length


class Conv1d(Module):
    """1D convolution with symmetric ``kernel // 2`` zero padding by default."""

    def __init__(self, spec, padding=None, source=None):
        super().__init__()
        self.spec = spec
        self.padding = spec.kernel // 2 if padding is None else padding
        self.source = source
        self.param("weight", (spec.out_channels, spec.in_channels // spec.groups, spec.kernel),
                   fan_in=spec.in_channels // spec.groups * spec.kernel)
        if spec.bias:
            self.param("bias", (spec.out_channels,), fill=0.0)

    def forward(self, x):
        s = self.spec
        return ad.conv1d(x, self.weight, getattr(self, "bias", None), s.stride, self.padding, s.groups)

    def out_length(self, length):
        return ad.conv_output_length(length, self.spec.kernel, self.spec.stride, self.padding)

    def macs(self, length):
        s = self.spec
        lout = self.out_length(length)
        return lout * s.out_channels * s.kernel * (s.in_channels // s.groups), lout


class GroupNorm(Module):
    def __init__(self, channels, groups=None, eps=1e-5):
        super().__init__()
        self.spec = GroupNormSpec(channels, default_groups(channels) if groups is None else groups, eps)
        self.param("weight", (channels,), fill=1.0)
        self.param("bias", (channels,), fill=0.0)

    def forward(self, x):
        return ad.group_norm(x, self.weight, self.bias, self.spec.groups, self.spec.eps)

    def macs(self, length):
        return 0, length


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.param("weight", (out_features, in_features), fan_in=in_features)
        if bias:
            self.param("bias", (out_features,), fill=0.0)

    def forward(self, x):
        return ad.linear(x, self.weight, getattr(self, "bias", None))

    def macs(self, length):
        return self.in_features * self.out_features, length


class Activation(Module):
    def __init__(self, kind="gelu"):
        super().__init__()
        if kind not in ("relu", "gelu"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x):
        return x.gelu() if self.kind == "gelu" else x.relu()

    def macs(self, length):
        return 0, length


class MaxPool1d(Module):
    def __init__(self, kernel, stride, padding=None):
        super().__init__()
        self.kernel, self.stride = kernel, stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x):
        return ad.max_pool1d(x, self.kernel, self.stride, self.padding)

    def macs(self, length):
        return 0, ad.conv_output_length(length, self.kernel, self.stride, self.padding)


class AvgPool1d(Module):
    def __init__(self, kernel, stride=None):
        super().__init__()
        self.kernel, self.stride = kernel, stride or kernel

    def forward(self, x):
        return ad.avg_pool1d(x, self.kernel, self.stride)

    def macs(self, length):
        return 0, ad.conv_output_length(length, self.kernel, self.stride)


class SqueezeExcite(Module):
    """Channel gate: mean over length -> linear down -> ReLU -> linear up -> sigmoid -> rescale."""

    def __init__(self, channels, reduction_ratio=2):
        super().__init__()
        self.spec = SESpec(channels, reduction_ratio)
        self.down = Linear(channels, self.spec.hidden)
        self.up = Linear(self.spec.hidden, channels)

    def gate(self, x):
        s = ad.global_avg_pool(x)
        return self.up(self.down(s).relu()).sigmoid()

    def forward(self, x):
        s = self.gate(x)
        return x * s.reshape(s.shape[0], s.shape[1], 1)

    def macs(self, length):
        return self.down.macs(1)[0] + self.up.macs(1)[0], length


def _conv(cin, cout, kernel=1, stride=1, groups=1, source=None):
    return Conv1d(ConvLayerSpec(cin, cout, kernel, stride, groups), source=source)


class BasicBlock(Module):
    """Post-activation block: two k-convs, projection shortcut when the shape changes."""

    def __init__(self, cin, cout, stride, kernel, act="relu", sources=None):
        super().__init__()
        src = sources or {}
        self.conv1 = _conv(cin, cout, kernel, stride, source=src.get("conv1"))
        self.norm1 = GroupNorm(cout)
        self.conv2 = _conv(cout, cout, kernel, 1, source=src.get("conv2"))
        self.norm2 = GroupNorm(cout)
        self.act = Activation(act)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = Sequential(_conv(cin, cout, 1, stride, source=src.get("shortcut")), GroupNorm(cout))

    def forward(self, x):
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        res = x if self.shortcut is None else self.shortcut(x)
        return self.act(out + res)

    def macs(self, length):
        m1, l1 = self.conv1.macs(length)
        m2, l2 = self.conv2.macs(l1)
        m3 = self.shortcut.macs(length)[0] if self.shortcut is not None else 0
        return m1 + m2 + m3, l2


class Bottleneck(Module):
    """Post-activation bottleneck: 1-conv reduce, k-conv, 1-conv expand.

    ``stride_on`` picks where downsampling happens: ``"reduce"`` on the first
    pointwise conv, ``"spatial"`` on the k-conv.
    """

    def __init__(self, cin, width, cout, stride, kernel, act="relu", stride_on="spatial", sources=None):
        super().__init__()
        src = sources or {}
        s1, s2 = (stride, 1) if stride_on == "reduce" else (1, stride)
        self.conv1 = _conv(cin, width, 1, s1, source=src.get("conv1"))
        self.norm1 = GroupNorm(width)
        self.conv2 = _conv(width, width, kernel, s2, source=src.get("conv2"))
        self.norm2 = GroupNorm(width)
        self.conv3 = _conv(width, cout, 1, 1, source=src.get("conv3"))
        self.norm3 = GroupNorm(cout)
        self.act = Activation(act)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = Sequential(_conv(cin, cout, 1, stride, source=src.get("shortcut")), GroupNorm(cout))

    def forward(self, x):
        out = self.act(self.norm1(self.conv1(x)))
        out = self.act(self.norm2(self.conv2(out)))
        out = self.norm3(self.conv3(out))
        res = x if self.shortcut is None else self.shortcut(x)
        return self.act(out + res)

    def macs(self, length):
        m1, l1 = self.conv1.macs(length)
        m2, l2 = self.conv2.macs(l1)
        m3, l3 = self.conv3.macs(l2)
        m4 = self.shortcut.macs(length)[0] if self.shortcut is not None else 0
        return m1 + m2 + m3 + m4, l3


class PreActBlock(Module):
    """Pre-activation bottleneck with optional squeeze-and-excitation.

    GroupNorm -> activation -> [SE], then two branches:
    main: pointwise reduce -> GN -> act -> k-conv (strided) -> GN -> act -> pointwise expand;
    residual: average pool (kernel = stride) and a pointwise conv when the shape
    changes, otherwise the untouched input.
    """

    def __init__(self, cin, width, cout, stride, kernel, act="gelu", se_ratio=None,
                 depthwise=False, sources=None):
        super().__init__()
        src = sources or {}
        self.stride = stride
        self.norm0 = GroupNorm(cin)
        self.act = Activation(act)
        self.se = SqueezeExcite(cin, se_ratio) if se_ratio else None
        self.reduce = _conv(cin, width, 1, source=src.get("conv1"))
        self.norm1 = GroupNorm(width)
        self.spatial = _conv(width, width, kernel, stride, groups=width if depthwise else 1,
                             source=src.get("conv2"))
        self.norm2 = GroupNorm(width)
        self.expand = _conv(width, cout, 1, source=src.get("conv3"))
        self.pool = AvgPool1d(stride) if stride != 1 else None
        self.project = _conv(cin, cout, 1, source=src.get("shortcut")) if cin != cout else None

    def forward(self, x):
        pre = self.act(self.norm0(x))
        if self.se is not None:
            pre = self.se(pre)
        out = self.act(self.norm1(self.reduce(pre)))
        out = self.act(self.norm2(self.spatial(out)))
        out = self.expand(out)
        if self.pool is None and self.project is None:
            res = x
        else:
            res = pre
            if self.pool is not None:
                res = self.pool(res)
            if self.project is not None:
                res = self.project(res)
        return out + res

    def macs(self, length):
        total = self.se.macs(length)[0] if self.se is not None else 0
        m, l1 = self.reduce.macs(length)
        total += m
        m, l2 = self.spatial.macs(l1)
        total += m
        m, l3 = self.expand.macs(l2)
        total += m
        if self.project is not None:
            lres = self.pool.macs(length)[1] if self.pool is not None else length
            total += self.project.macs(lres)[0]
        return total, l3


class ClassificationHead(Module):
    """[GroupNorm -> activation] -> mean over length -> linear."""

    def __init__(self, channels, class_count, act="gelu", pre_norm=True):
        super().__init__()
        self.norm = GroupNorm(channels) if pre_norm else None
        self.act = Activation(act) if pre_norm else None
        self.fc = Linear(channels, class_count)

    def forward(self, x):
        if self.norm is not None:
            x = self.act(self.norm(x))
        return self.fc(ad.global_avg_pool(x))

    def macs(self, length):
        return self.fc.macs(1)[0], 1


def group_norm_forward(x, spec, weight=None, bias=None):
    c = spec.channels
    w = Tensor(np.ones(c)) if weight is None else weight
    b = Tensor(np.zeros(c)) if bias is None else bias
    return ad.group_norm(ad.tensor(x), w, b, spec.groups, spec.eps)


def se_forward(x, module):
    return module(ad.tensor(x))


def residual_block_forward(x, block):
    return block(ad.tensor(x))


def classification_head_forward(features, head):
    return head(ad.tensor(features))
