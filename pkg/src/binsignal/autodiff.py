"""A small reverse-mode autodiff engine over numpy arrays.

Only the primitives the 1D ResNets need are implemented. Every op is a
:class:`Function` with a ``forward`` on raw arrays and a ``backward`` that maps
the output gradient to one gradient per tensor input.
"""
import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, ndtr

__all__ = [
    "Tensor",
    "Function",
    "no_grad",
    "tensor",
    "conv1d",
    "max_pool1d",
    "avg_pool1d",
    "global_avg_pool",
    "group_norm",
    "linear",
    "conv_output_length",
    "finite_difference_check",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _shape_error(op, *shapes):
    return ValueError(f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes))


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._ctx = None
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # graph traversal

    def backward(self):
        if self.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("graph already consumed by a previous backward(); recompute the forward pass")
        if self._ctx is None:
            if self.requires_grad:
                self._accumulate(np.ones_like(self.data))
            return

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for p in node._ctx.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            ctx = node._ctx
            if ctx is None:
                if g is not None:
                    node._accumulate(g)
                continue
            if g is not None:
                for p, pg in zip(ctx.parents, ctx.backward(g)):
                    if pg is None or not p.requires_grad:
                        continue
                    pg = np.asarray(pg, dtype=p.dtype)
                    if pg.shape != p.shape:
                        raise RuntimeError(f"{type(ctx).__name__}: gradient shape {pg.shape} != {p.shape}")
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg
            node._ctx = None
            node._consumed = True

    def _accumulate(self, g):
        self.grad = g.copy() if self.grad is None else self.grad + g

    # operators

    def __add__(self, other):
        return Add.apply(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(tensor(other)))

    def __rsub__(self, other):
        return Add.apply(tensor(other), Neg.apply(self))

    def __neg__(self):
        return Neg.apply(self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return Mul.apply(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    @property
    def T(self):
        return Transpose.apply(self)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def relu(self):
        return ReLU.apply(self)

    def gelu(self):
        return GELU.apply(self)

    def sigmoid(self):
        return Sigmoid.apply(self)

    def log_softmax(self, axis=-1):
        return LogSoftmax.apply(self, axis=axis)

    def softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)


def tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


class Function:
    """Base class: subclasses implement ``forward`` and ``backward``."""

    def __init__(self, parents):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs, **kwargs):
        ref = next((t for t in inputs if isinstance(t, Tensor)), None)
        dtype = ref.dtype if ref is not None else None
        tensors = tuple(t if isinstance(t, Tensor) or t is None else Tensor(t, dtype=dtype) for t in inputs)
        ctx = cls(tuple(t for t in tensors if t is not None))
        out = Tensor(ctx.forward(*[None if t is None else t.data for t in tensors], **kwargs))
        if _GRAD_ENABLED and any(p.requires_grad for p in ctx.parents):
            out.requires_grad = True
            out._ctx = ctx
        return out

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Add(Function):
    def forward(self, a, b):
        try:
            out = a + b
        except ValueError:
            raise _shape_error("add", a.shape, b.shape) from None
        self.shapes = a.shape, b.shape
        return out

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Mul(Function):
    def forward(self, a, b):
        try:
            out = a * b
        except ValueError:
            raise _shape_error("multiply", a.shape, b.shape) from None
        self.a, self.b = a, b
        return out

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise _shape_error("matmul", a.shape, b.shape)
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        ga = g @ np.swapaxes(self.b, -1, -2)
        gb = np.swapaxes(self.a, -1, -2) @ g
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Transpose(Function):
    def forward(self, a):
        return np.swapaxes(a, -1, -2)

    def backward(self, g):
        return (np.swapaxes(g, -1, -2),)


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise _shape_error("reshape", a.shape, shape) from None

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.in_shape).copy(),)


class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return a * self.mask

    def backward(self, g):
        return (g * self.mask,)


class GELU(Function):
    """Exact x * Phi(x)."""

    def forward(self, a):
        self.a = a
        self.cdf = ndtr(a).astype(a.dtype)
        return a * self.cdf

    def backward(self, g):
        pdf = np.exp(-0.5 * self.a * self.a) / np.sqrt(2 * np.pi)
        return (g * (self.cdf + self.a * pdf),)


class Sigmoid(Function):
    def forward(self, a):
        self.out = expit(a).astype(a.dtype)
        return self.out

    def backward(self, g):
        return (g * self.out * (1 - self.out),)


class LogSoftmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        z = a - a.max(axis=axis, keepdims=True)
        out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
        self.out = out
        return out

    def backward(self, g):
        return (g - np.exp(self.out) * g.sum(axis=self.axis, keepdims=True),)


def conv_output_length(length, kernel, stride=1, padding=0):
    return (length + 2 * padding - kernel) // stride + 1


def _windows(xp, kernel, stride, lout):
    return sliding_window_view(xp, kernel, axis=2)[:, :, : stride * (lout - 1) + 1 : stride, :]


def _col2im(dwin, stride, padded_len):
    b, c, lout, k = dwin.shape
    dxp = np.zeros((b, c, padded_len), dtype=dwin.dtype)
    span = stride * (lout - 1) + 1
    for j in range(k):
        dxp[:, :, j : j + span : stride] += dwin[:, :, :, j]
    return dxp


class Conv1d(Function):
    def forward(self, x, w, b=None, stride=1, padding=0, groups=1):
        if x.ndim != 3 or w.ndim != 3:
            raise _shape_error("conv1d", x.shape, w.shape)
        bsz, cin, length = x.shape
        cout, cg, k = w.shape
        if cin % groups or cout % groups or cg != cin // groups:
            raise _shape_error(f"conv1d(groups={groups})", x.shape, w.shape)
        lout = conv_output_length(length, k, stride, padding)
        if lout < 1:
            raise _shape_error(f"conv1d(kernel={k}, padding={padding})", x.shape, w.shape)
        self.stride, self.padding, self.groups = stride, padding, groups
        self.x_shape, self.w, self.has_bias = x.shape, w, b is not None
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
        self.padded_len = xp.shape[2]
        win = _windows(xp, k, stride, lout)
        if groups == 1:
            cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(bsz * lout, cin * k)
            out = (cols @ w.reshape(cout, cin * k).T).reshape(bsz, lout, cout).transpose(0, 2, 1)
            self.cols = cols
        else:
            wg = w.reshape(groups, cout // groups, cg, k)
            xg = win.reshape(bsz, groups, cg, lout, k)
            out = np.einsum("bgclk,gock->bgol", xg, wg, optimize=True).reshape(bsz, cout, lout)
            self.win = xg
        self.lout = lout
        if b is not None:
            out = out + b[None, :, None]
        return np.ascontiguousarray(out)

    def backward(self, g):
        bsz, cin, length = self.x_shape
        cout, cg, k = self.w.shape
        lout, groups = self.lout, self.groups
        if groups == 1:
            g2 = g.transpose(0, 2, 1).reshape(bsz * lout, cout)
            dw = (g2.T @ self.cols).reshape(self.w.shape)
            dwin = (g2 @ self.w.reshape(cout, cin * k)).reshape(bsz, lout, cin, k).transpose(0, 2, 1, 3)
        else:
            wg = self.w.reshape(groups, cout // groups, cg, k)
            gg = g.reshape(bsz, groups, cout // groups, lout)
            dw = np.einsum("bgol,bgclk->gock", gg, self.win, optimize=True).reshape(self.w.shape)
            dwin = np.einsum("bgol,gock->bgclk", gg, wg, optimize=True).reshape(bsz, cin, lout, k)
        dxp = _col2im(dwin, self.stride, self.padded_len)
        p = self.padding
        dx = dxp[:, :, p : p + length] if p else dxp
        grads = [dx, dw]
        if self.has_bias:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)


class MaxPool1d(Function):
    def forward(self, x, kernel, stride, padding=0):
        if x.ndim != 3:
            raise _shape_error("max_pool1d", x.shape)
        lout = conv_output_length(x.shape[2], kernel, stride, padding)
        if lout < 1:
            raise _shape_error(f"max_pool1d(kernel={kernel})", x.shape)
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf) if padding else x
        win = _windows(xp, kernel, stride, lout)
        self.arg = win.argmax(axis=-1)
        self.stride, self.padding, self.kernel = stride, padding, kernel
        self.x_shape, self.padded_len = x.shape, xp.shape[2]
        return np.take_along_axis(win, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        dwin = (self.arg[..., None] == np.arange(self.kernel)) * g[..., None]
        dxp = _col2im(dwin.astype(g.dtype), self.stride, self.padded_len)
        p = self.padding
        return (dxp[:, :, p : p + self.x_shape[2]] if p else dxp,)


class AvgPool1d(Function):
    """Average pooling; zero padding is counted in the denominator."""

    def forward(self, x, kernel, stride, padding=0):
        if x.ndim != 3:
            raise _shape_error("avg_pool1d", x.shape)
        lout = conv_output_length(x.shape[2], kernel, stride, padding)
        if lout < 1:
            raise _shape_error(f"avg_pool1d(kernel={kernel})", x.shape)
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
        self.stride, self.padding, self.kernel = stride, padding, kernel
        self.x_shape, self.padded_len, self.lout = x.shape, xp.shape[2], lout
        return _windows(xp, kernel, stride, lout).mean(axis=-1, dtype=np.float64).astype(x.dtype)

    def backward(self, g):
        dwin = np.broadcast_to((g / self.kernel)[..., None], g.shape + (self.kernel,))
        dxp = _col2im(np.ascontiguousarray(dwin), self.stride, self.padded_len)
        p = self.padding
        return (dxp[:, :, p : p + self.x_shape[2]] if p else dxp,)


class GroupNorm(Function):
    """Normalise each (sample, group) over its channels and length, then scale/shift per channel."""

    def forward(self, x, weight, bias, groups, eps=1e-5):
        if x.ndim != 3 or x.shape[1] % groups:
            raise _shape_error(f"group_norm(groups={groups})", x.shape)
        if weight.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
            raise _shape_error("group_norm affine", x.shape, weight.shape)
        b, c, length = x.shape
        xg = x.reshape(b, groups, -1).astype(np.float64)
        mean = xg.mean(axis=-1, keepdims=True)
        var = xg.var(axis=-1, keepdims=True)
        rstd = 1.0 / np.sqrt(var + eps)
        xhat = ((xg - mean) * rstd).reshape(b, c, length)
        self.xhat, self.rstd, self.weight, self.groups = xhat, rstd, weight, groups
        return (xhat * weight[None, :, None] + bias[None, :, None]).astype(x.dtype)

    def backward(self, g):
        b, c, length = g.shape
        g64 = g.astype(np.float64)
        dw = (g64 * self.xhat).sum(axis=(0, 2))
        db = g64.sum(axis=(0, 2))
        dxhat = (g64 * self.weight[None, :, None]).reshape(b, self.groups, -1)
        xhat = self.xhat.reshape(b, self.groups, -1)
        n = dxhat.shape[-1]
        dx = (self.rstd / n) * (n * dxhat - dxhat.sum(-1, keepdims=True)
                                - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return dx.reshape(b, c, length), dw, db


def conv1d(x, weight, bias=None, stride=1, padding=0, groups=1):
    return Conv1d.apply(x, weight, bias, stride=stride, padding=padding, groups=groups)


def max_pool1d(x, kernel, stride=None, padding=0):
    return MaxPool1d.apply(x, kernel=kernel, stride=stride or kernel, padding=padding)


def avg_pool1d(x, kernel, stride=None, padding=0):
    return AvgPool1d.apply(x, kernel=kernel, stride=stride or kernel, padding=padding)


def global_avg_pool(x):
    """(B, C, L) -> (B, C)."""
    return x.mean(axis=-1)


def group_norm(x, weight, bias, groups, eps=1e-5):
    return GroupNorm.apply(x, weight, bias, groups=groups, eps=eps)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    out = x @ weight.T
    return out if bias is None else out + bias


def finite_difference_check(f, inputs, step=1e-5, max_coords=None, seed=0, grads=None):
    """Largest relative error between analytic and central-difference gradients.

    ``f`` is a zero-argument callable returning a scalar Tensor computed from
    ``inputs`` (tensors with ``requires_grad``). Their ``data`` is perturbed in
    place and restored. ``grads`` overrides the analytic gradients (used to
    check the checker). ``max_coords`` samples that many coordinates per input.
    Error per coordinate: |a - n| / (|a| + |n| + 1e-12).
    """
    inputs = list(inputs)
    for t in inputs:
        if not (t.data.flags.c_contiguous and t.data.flags.writeable):
            t.data = np.array(t.data, order="C")
    if grads is None:
        for t in inputs:
            t.grad = None
        loss = f()
        loss.backward()
        grads = [np.zeros(t.shape) if t.grad is None else np.array(t.grad, dtype=np.float64) for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, grads):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        for i in coords:
            v = flat[i]
            with no_grad():
                flat[i] = v + step
                fp = float(f().item())
                flat[i] = v - step
                fm = float(f().item())
            flat[i] = v
            num = (fp - fm) / (2 * step)
            err = abs(a[i] - num) / (abs(a[i]) + abs(num) + 1e-12)
            worst = max(worst, err)
    return worst
