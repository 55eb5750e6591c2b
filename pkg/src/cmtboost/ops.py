"""Differentiable primitive operators.

Every public function takes and returns :class:`~cmtboost.tensor.Tensor`
objects. Accumulation orders are fixed, so results are bit-reproducible.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from . import _kernels
from .tensor import DimensionError, Function, ParameterError, Tensor, unbroadcast

_SQRT2 = math.sqrt(2.0)

# When a list, non-smooth ops append their smallest distance to a kink
# (max-pool top-2 gap, |relu input|); used to validate finite differences.
kink_probe: Optional[list] = None
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


# ---------------------------------------------------------------------------
# elementwise arithmetic


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return unbroadcast(g, self.shapes[0]), unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        return unbroadcast(g, self.shapes[0]), unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return unbroadcast(g * self.b, self.a.shape), unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -g * self.a / (self.b * self.b)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    return Add.apply(a, _as_tensor(b, a))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    return Sub.apply(a, _as_tensor(b, a))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    return Mul.apply(a, _as_tensor(b, a))


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    return Div.apply(a, _as_tensor(b, a))


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


# ---------------------------------------------------------------------------
# shape manipulation and reductions


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.inv = np.argsort(axes)
        return np.ascontiguousarray(a.transpose(axes))

    def backward(self, g):
        return (np.ascontiguousarray(g.transpose(self.inv)),)


class GetItem(Function):
    def forward(self, a, index):
        self.in_shape, self.dtype, self.index = a.shape, a.dtype, index
        return np.array(a[index])

    def backward(self, g):
        out = np.zeros(self.in_shape, dtype=self.dtype)
        np.add.at(out, self.index, g)
        return (out,)


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.in_shape).copy(),)


class Mean(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        if axis is None:
            self.count = a.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            self.count = int(np.prod([a.shape[i] for i in axes]))
        return np.asarray(a.mean(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g / self.count, self.in_shape).copy(),)


class Take(Function):
    """Gather ``table[..., index]`` along the last axis of a 2-D table."""

    def forward(self, table, index):
        self.table_shape, self.index = table.shape, index
        return table[:, index]

    def backward(self, g):
        rows, size = self.table_shape
        flat = self.index.reshape(-1)
        out = np.empty(self.table_shape, dtype=g.dtype)
        for r in range(rows):
            out[r] = np.bincount(flat, weights=g[r].reshape(-1), minlength=size)
        return (out,)


def reshape(a: Tensor, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor, axes) -> Tensor:
    return Transpose.apply(a, axes=tuple(axes))


def getitem(a: Tensor, index) -> Tensor:
    return GetItem.apply(a, index=index)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Return ``table[:, index]`` for a 2-D table and an integer index array."""
    if table.ndim != 2:
        raise DimensionError(f"take expects a 2-D table, got {table.shape}")
    index = np.asarray(index, dtype=np.intp)
    return Take.apply(table, index=index)


# ---------------------------------------------------------------------------
# linear algebra


class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.a, self.b
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


class Linear(Function):
    def forward(self, x, w, b=None):
        self.x, self.w, self.has_bias = x, w, b is not None
        out = x @ w
        if b is not None:
            out = out + b
        return out

    def backward(self, g):
        x2 = self.x.reshape(-1, self.x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ self.w.T).reshape(self.x.shape)
        gw = x2.T @ g2
        if self.has_bias:
            return gx, gw, g2.sum(axis=0)
        return gx, gw


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} != ({weight.shape[1]},)")
        return Linear.apply(x, weight, bias)
    return Linear.apply(x, weight)


# ---------------------------------------------------------------------------
# convolution and pooling


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _check_window(H, W, kh, kw, stride, pad, op):
    if kh < 1 or kw < 1:
        raise ParameterError(f"{op}: kernel size must be >= 1")
    if stride < 1:
        raise ParameterError(f"{op}: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ParameterError(f"{op}: pad must be >= 0, got {pad}")
    if H + 2 * pad < kh or W + 2 * pad < kw:
        raise DimensionError(f"{op}: window {kh}x{kw} larger than padded input {H}x{W} (pad {pad})")


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


class Conv2d(Function):
    def forward(self, x, w, b=None, stride=1, pad=0):
        self.x_shape, self.stride, self.pad, self.has_bias = x.shape, stride, pad, b is not None
        self.w = w
        O, C, kh, kw = w.shape
        N, _, H, W = x.shape
        Ho, Wo = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
        if kh == 1 and kw == 1 and pad == 0:
            xs = x[:, :, ::stride, ::stride] if stride > 1 else x
            cols = np.ascontiguousarray(xs.transpose(0, 2, 3, 1)).reshape(-1, C)
        else:
            view = sliding_window_view(_pad(x, pad), (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
            # im2col rows are output pixels (n, i, j); columns are (c, a, b)
            cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, C * kh * kw)
        self.cols = cols
        out = cols @ w.reshape(O, -1).T
        if b is not None:
            out += b
        return np.ascontiguousarray(out.reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward(self, g):
        w, s, p = self.w, self.stride, self.pad
        O, C, kh, kw = w.shape
        N, _, H, W = self.x_shape
        Ho, Wo = g.shape[2], g.shape[3]
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        gw = (g2.T @ self.cols).reshape(w.shape)
        gcols = g2 @ w.reshape(O, -1)
        if kh == 1 and kw == 1 and p == 0:
            gxs = gcols.reshape(N, Ho, Wo, C).transpose(0, 3, 1, 2)
            if s > 1:
                gx = np.zeros(self.x_shape, dtype=g.dtype)
                gx[:, :, ::s, ::s] = gxs
            else:
                gx = np.ascontiguousarray(gxs)
        else:
            gcols = gcols.reshape(N, Ho, Wo, C, kh, kw)
            gxp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=g.dtype)
            for a in range(kh):
                for c in range(kw):
                    gxp[:, :, a:a + s * (Ho - 1) + 1:s, c:c + s * (Wo - 1) + 1:s] += \
                        gcols[:, :, :, :, a, c].transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gxp[:, :, p:p + H, p:p + W]) if p else gxp
        grads = [gx, gw]
        if self.has_bias:
            grads.append(g2.sum(axis=0))
        return grads


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation over ``[N, Cin, H, W]`` with zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    O, C, kh, kw = weight.shape
    if x.shape[1] != C:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, weight expects {C}")
    _check_window(x.shape[2], x.shape[3], kh, kw, stride, pad, "conv2d")
    if bias is not None:
        if bias.shape != (O,):
            raise DimensionError(f"conv2d: bias {bias.shape} != ({O},)")
        return Conv2d.apply(x, weight, bias, stride=stride, pad=pad)
    return Conv2d.apply(x, weight, stride=stride, pad=pad)


class DepthwiseConv2d(Function):
    def forward(self, x, w, b=None, stride=1, pad=0):
        self.x_shape, self.stride, self.pad, self.has_bias = x.shape, stride, pad, b is not None
        self.w = np.ascontiguousarray(w)
        C, _, kh, kw = w.shape
        N, _, H, W = x.shape
        Ho, Wo = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
        self.xp = np.ascontiguousarray(_pad(x, pad))
        out = np.empty((N, C, Ho, Wo), dtype=x.dtype)
        if stride == 1:
            _kernels.depthwise_forward_s1(self.xp, self.w, out)
        else:
            _kernels.depthwise_forward(self.xp, self.w, stride, out)
        if b is not None:
            out += b.reshape(1, C, 1, 1)
        return out

    def backward(self, g):
        p = self.pad
        H, W = self.x_shape[2], self.x_shape[3]
        gxp = np.zeros(self.xp.shape, dtype=g.dtype)
        gw = np.zeros_like(self.w)
        g = np.ascontiguousarray(g)
        if self.stride == 1:
            _kernels.depthwise_backward_s1(self.xp, self.w, g, gxp, gw)
        else:
            _kernels.depthwise_backward(self.xp, self.w, g, self.stride, gxp, gw)
        gx = np.ascontiguousarray(gxp[:, :, p:p + H, p:p + W]) if p else gxp
        grads = [gx, gw]
        if self.has_bias:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                     stride: int = 1, pad: int = 0) -> Tensor:
    """Per-channel convolution; ``weight`` is ``[C, 1, kh, kw]``."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != 1:
        raise DimensionError(f"depthwise_conv2d: bad shapes {x.shape}, {weight.shape}")
    C, _, kh, kw = weight.shape
    if x.shape[1] != C:
        raise DimensionError(f"depthwise_conv2d: weight has {C} kernels for {x.shape[1]} channels")
    _check_window(x.shape[2], x.shape[3], kh, kw, stride, pad, "depthwise_conv2d")
    if bias is not None:
        if bias.shape != (C,):
            raise DimensionError(f"depthwise_conv2d: bias {bias.shape} != ({C},)")
        return DepthwiseConv2d.apply(x, weight, bias, stride=stride, pad=pad)
    return DepthwiseConv2d.apply(x, weight, stride=stride, pad=pad)


class MaxPool2d(Function):
    def forward(self, x, k, stride):
        self.x_shape, self.k, self.stride = x.shape, k, stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        flat = win.reshape(win.shape[:4] + (k * k,))
        # argmax returns the first maximum in row-major window order
        self.arg = flat.argmax(axis=-1)
        if kink_probe is not None and k > 1:
            top2 = np.partition(flat, -2, axis=-1)[..., -2:]
            kink_probe.append(("max_pool", float((top2[..., 1] - top2[..., 0]).min())))
        return np.take_along_axis(flat, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        k, s = self.k, self.stride
        Ho, Wo = g.shape[2], g.shape[3]
        gx = np.zeros(self.x_shape, dtype=g.dtype)
        for a in range(k):
            for c in range(k):
                sel = np.where(self.arg == a * k + c, g, 0)
                gx[:, :, a:a + s * (Ho - 1) + 1:s, c:c + s * (Wo - 1) + 1:s] += sel
        return (gx,)


class AvgPool2d(Function):
    def forward(self, x, k, stride):
        self.x_shape, self.k, self.stride = x.shape, k, stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        return win.sum(axis=(4, 5)) / (k * k)

    def backward(self, g):
        k, s = self.k, self.stride
        Ho, Wo = g.shape[2], g.shape[3]
        gx = np.zeros(self.x_shape, dtype=g.dtype)
        share = g / (k * k)
        for a in range(k):
            for c in range(k):
                gx[:, :, a:a + s * (Ho - 1) + 1:s, c:c + s * (Wo - 1) + 1:s] += share
        return (gx,)


def pool2d(x: Tensor, mode: str = "max", k: int = 2, stride: int = 2) -> Tensor:
    """Unpadded max or mean pooling over ``k x k`` windows."""
    if x.ndim != 4:
        raise DimensionError(f"pool2d expects 4-D input, got {x.shape}")
    if k < 1 or stride < 1:
        raise ParameterError(f"pool2d: k and stride must be >= 1 (k={k}, stride={stride})")
    if x.shape[2] < k or x.shape[3] < k:
        raise DimensionError(f"pool2d: window {k} larger than input {x.shape[2]}x{x.shape[3]}")
    if mode == "max":
        return MaxPool2d.apply(x, k=k, stride=stride)
    if mode == "avg":
        return AvgPool2d.apply(x, k=k, stride=stride)
    raise ParameterError(f"pool2d: unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# normalization and activations


class LayerNorm(Function):
    def forward(self, x, gamma, beta, axis, eps):
        self.axis = axis
        shape = [1] * x.ndim
        shape[axis] = x.shape[axis]
        self.pshape = tuple(shape)
        mu = x.mean(axis=axis, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=axis, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        self.gamma = gamma
        return self.xhat * gamma.reshape(self.pshape) + beta.reshape(self.pshape)

    def backward(self, g):
        ax = self.axis
        red = tuple(i for i in range(g.ndim) if i != ax)
        ggamma = (g * self.xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        dxhat = g * self.gamma.reshape(self.pshape)
        m1 = dxhat.mean(axis=ax, keepdims=True)
        m2 = (dxhat * self.xhat).mean(axis=ax, keepdims=True)
        gx = self.inv * (dxhat - m1 - self.xhat * m2)
        return gx, ggamma, gbeta


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               axis: Optional[int] = None) -> Tensor:
    """Normalize each token over its channel axis, then apply ``gamma``/``beta``.

    The channel axis defaults to 1 for 4-D image tensors and the last axis
    otherwise.
    """
    if eps <= 0:
        raise ParameterError("layer_norm: eps must be > 0")
    if axis is None:
        axis = 1 if x.ndim == 4 else x.ndim - 1
    axis = axis % x.ndim
    C = x.shape[axis]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} != ({C},)")
    return LayerNorm.apply(x, gamma, beta, axis=axis, eps=eps)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        if kink_probe is not None and x.size:
            kink_probe.append(("relu", float(np.abs(x).min())))
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, g):
        return (np.where(self.mask, g, 0).astype(g.dtype, copy=False),)


class GELU(Function):
    def forward(self, x):
        self.x = x
        self.cdf = (0.5 * (1.0 + erf(x / _SQRT2))).astype(x.dtype, copy=False)
        return x * self.cdf

    def backward(self, g):
        x = self.x
        pdf = (_INV_SQRT_2PI * np.exp(-0.5 * x * x)).astype(x.dtype, copy=False)
        return (g * (self.cdf + x * pdf),)


class Sigmoid(Function):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.out = out
        return out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, g):
        y = self.out
        return (y * (g - (g * y).sum(axis=self.axis, keepdims=True)),)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the error-function CDF."""
    return GELU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


# ---------------------------------------------------------------------------
# structural ops, regularization and loss


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        bounds = np.cumsum(self.sizes)[:-1]
        return [np.ascontiguousarray(p) for p in np.split(g, bounds, axis=self.axis)]


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    return Concat.apply(*tensors, axis=axis)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s (``[N, Ca+Cb, H, W]``)."""
    if a.ndim != 4 or b.ndim != 4:
        raise DimensionError(f"concat_channels expects 4-D tensors, got {a.shape}, {b.shape}")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    return Concat.apply(a, b, axis=1)


class Dropout(Function):
    def forward(self, x, p, seed):
        rng = np.random.default_rng(seed)
        keep = rng.random(x.shape) >= p
        self.mask = (keep / (1.0 - p)).astype(x.dtype)
        return x * self.mask

    def backward(self, g):
        return (g * self.mask,)


def dropout(x: Tensor, p: float, training: bool, seed: int = 0) -> Tensor:
    """Inverted dropout; the identity in eval mode or when ``p == 0``."""
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    return Dropout.apply(x, p=p, seed=seed)


class CrossEntropy(Function):
    def forward(self, logits, labels):
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - lse
        self.probs = np.exp(logp)
        self.labels = labels
        n = logits.shape[0]
        return np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def backward(self, g):
        n = self.probs.shape[0]
        grad = self.probs.copy()
        grad[np.arange(n), self.labels] -= 1.0
        return (grad * (g / n),)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    K = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ParameterError(f"cross_entropy: labels must lie in [0, {K})")
    return CrossEntropy.apply(logits, labels=labels)
