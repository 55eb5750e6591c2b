"""Architectural blocks of the CB-Res-RBCMT network.

Every block is a :class:`~cmtboost.nn.Module` built from the primitives in
:mod:`cmtboost.ops`. ``out_shape`` gives the static per-sample output shape
``(C, H, W)`` for a given input shape without running a forward pass.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import ops
from .nn import Module, param
from .tensor import DimensionError, ParameterError, Tensor

_ACTIVATIONS = {"gelu": ops.gelu, "relu": ops.relu}


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


class StemBlock(Module):
    """3x3/stride-2 conv to ``width`` channels, then two 3x3/stride-1 convs."""

    def __init__(self, in_channels: int, width: int, activation: str = "gelu"):
        super().__init__()
        self.in_channels, self.width, self.activation = in_channels, width, activation
        self.conv1_w = param(width, in_channels, 3, 3)
        self.conv1_b = param(width, init="zero")
        self.conv2_w = param(width, width, 3, 3)
        self.conv2_b = param(width, init="zero")
        self.conv3_w = param(width, width, 3, 3)
        self.conv3_b = param(width, init="zero")

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"stem expects {self.in_channels} channels, got {x.shape[1]}")
        act = _ACTIVATIONS[self.activation]
        x = act(ops.conv2d(x, self.conv1_w, self.conv1_b, stride=2, pad=1))
        x = act(ops.conv2d(x, self.conv2_w, self.conv2_b, stride=1, pad=1))
        return act(ops.conv2d(x, self.conv3_w, self.conv3_b, stride=1, pad=1))

    def out_shape(self, shape):
        _, H, W = shape
        return (self.width, _conv_out(H, 3, 2, 1), _conv_out(W, 3, 2, 1))


class LPU(Module):
    """Local perception unit: depthwise 3x3 conv plus identity."""

    def __init__(self, channels: int):
        super().__init__()
        self.dw_w = param(channels, 1, 3, 3)
        self.dw_b = param(channels, init="zero")

    def forward(self, c: Tensor) -> Tensor:
        return ops.depthwise_conv2d(c, self.dw_w, self.dw_b, stride=1, pad=1) + c

    def out_shape(self, shape):
        return tuple(shape)


def lightweight_attention(q: Tensor, k: Tensor, v: Tensor, bias: Optional[Tensor] = None,
                          return_weights: bool = False):
    """``softmax(q k^T / sqrt(d_h) + bias) v`` over the last two axes.

    ``q`` is ``[..., n, d_h]``, ``k`` and ``v`` are ``[..., n', d_h]`` and
    ``bias`` broadcasts against ``[..., n, n']``.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} disagree")
    n, n_kv = q.shape[-2], k.shape[-2]
    if bias is not None and tuple(bias.shape[-2:]) != (n, n_kv):
        raise DimensionError(f"attention bias {bias.shape} does not match ({n}, {n_kv})")
    axes = list(range(k.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = ops.matmul(q, ops.transpose(k, axes)) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        scores = scores + bias
    weights = ops.softmax(scores, axis=-1)
    out = ops.matmul(weights, v)
    return (out, weights) if return_weights else out


def relative_position_index(grid: tuple[int, int], reduced: tuple[int, int], r: int) -> np.ndarray:
    """Table index for every (query token, reduced key token) pair.

    A query at (i, j) sits at (i // r, j // r) in reduced-grid units; the
    offset to key (a, b) is looked up in a ``(2H'-1) x (2W'-1)`` table.
    """
    H, W = grid
    Hr, Wr = reduced
    qi = np.repeat(np.arange(H) // r, W)
    qj = np.tile(np.arange(W) // r, H)
    ka = np.repeat(np.arange(Hr), Wr)
    kb = np.tile(np.arange(Wr), Hr)
    drow = qi[:, None] - ka[None, :] + (Hr - 1)
    dcol = qj[:, None] - kb[None, :] + (Wr - 1)
    return (drow * (2 * Wr - 1) + dcol).astype(np.intp)


class LMHSA(Module):
    """Lightweight multi-head self-attention with depthwise k/v reduction.

    Queries come from every token; keys and values come from a stride-``r``
    3x3 depthwise reduction of the input. A zero-initialized per-head bias
    table indexed by relative offset is added to the attention logits.
    """

    def __init__(self, dim: int, heads: int, reduction: int, grid: tuple[int, int]):
        super().__init__()
        if heads < 1 or dim % heads:
            raise ParameterError(f"embedding dim {dim} is not divisible by {heads} heads")
        if reduction < 1:
            raise ParameterError(f"k/v reduction stride must be >= 1, got {reduction}")
        H, W = grid
        self.dim, self.heads, self.reduction, self.grid = dim, heads, reduction, (H, W)
        self.reduced = (_conv_out(H, 3, reduction, 1), _conv_out(W, 3, reduction, 1))
        if min(self.reduced) < 1 or min(H, W) < 1:
            raise ParameterError(f"reduction {reduction} collapses grid {grid}")
        Hr, Wr = self.reduced
        self.wq = param(dim, dim)
        self.bq = param(dim, init="zero")
        self.reduce_w = param(dim, 1, 3, 3)
        self.reduce_b = param(dim, init="zero")
        # no key bias: it shifts every logit in a row equally and softmax cancels it
        self.wk = param(dim, dim)
        self.wv = param(dim, dim)
        self.bv = param(dim, init="zero")
        self.wo = param(dim, dim)
        self.bo = param(dim, init="zero")
        self.pos_bias = param(heads, (2 * Hr - 1) * (2 * Wr - 1), init="zero")
        self.bias_index = relative_position_index(self.grid, self.reduced, reduction)

    def position_bias(self) -> Tensor:
        """Per-head bias ``[h, n, n']`` gathered from the table."""
        return ops.take(self.pos_bias, self.bias_index)

    def _split_heads(self, t: Tensor, N: int, n: int) -> Tensor:
        dh = self.dim // self.heads
        return t.reshape(N, n, self.heads, dh).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        N, C, H, W = x.shape
        if C != self.dim or (H, W) != self.grid:
            raise DimensionError(f"LMHSA built for {self.dim}x{self.grid}, got {x.shape}")
        n = H * W
        tokens = x.reshape(N, C, n).transpose(0, 2, 1)
        q = ops.linear(tokens, self.wq, self.bq)
        xr = ops.depthwise_conv2d(x, self.reduce_w, self.reduce_b, stride=self.reduction, pad=1)
        n_kv = xr.shape[2] * xr.shape[3]
        kv_tokens = xr.reshape(N, C, n_kv).transpose(0, 2, 1)
        k = ops.linear(kv_tokens, self.wk)
        v = ops.linear(kv_tokens, self.wv, self.bv)
        heads = lightweight_attention(self._split_heads(q, N, n), self._split_heads(k, N, n_kv),
                                      self._split_heads(v, N, n_kv), self.position_bias())
        merged = heads.transpose(0, 2, 1, 3).reshape(N, n, C)
        out = ops.linear(merged, self.wo, self.bo)
        return out.transpose(0, 2, 1).reshape(N, C, H, W)

    def out_shape(self, shape):
        return tuple(shape)


class IRFFN(Module):
    """Inverted residual FFN: 1x1 expand, GELU, depthwise 3x3 + skip, GELU, 1x1 project."""

    def __init__(self, channels: int, ratio: int = 4):
        super().__init__()
        hidden = channels * ratio
        self.expand_w = param(hidden, channels, 1, 1)
        self.expand_b = param(hidden, init="zero")
        self.dw_w = param(hidden, 1, 3, 3)
        self.dw_b = param(hidden, init="zero")
        self.project_w = param(channels, hidden, 1, 1)
        self.project_b = param(channels, init="zero")

    def forward(self, c: Tensor) -> Tensor:
        u = ops.gelu(ops.conv2d(c, self.expand_w, self.expand_b))
        u = ops.gelu(ops.depthwise_conv2d(u, self.dw_w, self.dw_b, stride=1, pad=1) + u)
        return ops.conv2d(u, self.project_w, self.project_b)

    def out_shape(self, shape):
        return tuple(shape)


class CMTBlock(Module):
    """``y = LPU(c)``; ``z = LMHSA(LN(y)) + y``; ``out = IRFFN(LN(z)) + z``."""

    def __init__(self, dim: int, heads: int, reduction: int, grid: tuple[int, int],
                 ffn_ratio: int = 4, eps: float = 1e-5):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.lpu = LPU(dim)
        self.norm1_g = param(dim, init="one")
        self.norm1_b = param(dim, init="zero")
        self.lmhsa = LMHSA(dim, heads, reduction, grid)
        self.norm2_g = param(dim, init="one")
        self.norm2_b = param(dim, init="zero")
        self.irffn = IRFFN(dim, ffn_ratio)

    def forward(self, c: Tensor) -> Tensor:
        if c.shape[1] != self.dim:
            raise DimensionError(f"CMT block expects {self.dim} channels, got {c.shape[1]}")
        y = self.lpu(c)
        z = self.lmhsa(ops.layer_norm(y, self.norm1_g, self.norm1_b, self.eps)) + y
        return self.irffn(ops.layer_norm(z, self.norm2_g, self.norm2_b, self.eps)) + z

    def out_shape(self, shape):
        return tuple(shape)


class RBBlock(Module):
    """Region/boundary downsampler: conv, channel layer norm and activation,
    then max- and avg-pool branches concatenated along channels (2C out, half
    resolution). It doubles as the inter-stage embedding."""

    def __init__(self, channels: int, activation: str = "gelu", eps: float = 1e-5):
        super().__init__()
        self.channels, self.activation, self.eps = channels, activation, eps
        self.conv_w = param(channels, channels, 3, 3)
        self.conv_b = param(channels, init="zero")
        self.norm_g = param(channels, init="one")
        self.norm_b = param(channels, init="zero")

    def forward(self, c: Tensor) -> Tensor:
        H, W = c.shape[2], c.shape[3]
        if H % 2 or W % 2 or H < 2 or W < 2:
            raise DimensionError(f"RB block needs even spatial dims >= 2, got {H}x{W}")
        u = ops.conv2d(c, self.conv_w, self.conv_b, stride=1, pad=1)
        u = _ACTIVATIONS[self.activation](ops.layer_norm(u, self.norm_g, self.norm_b, self.eps))
        return ops.concat_channels(ops.pool2d(u, "max", 2, 2), ops.pool2d(u, "avg", 2, 2))

    def out_shape(self, shape):
        C, H, W = shape
        if H % 2 or W % 2:
            raise DimensionError(f"RB block needs even spatial dims, got {H}x{W}")
        return (2 * C, H // 2, W // 2)


class ResidualBlockMN(Module):
    """``y = N(act(M(x))) + shortcut(x)``.

    M is a 1x1 channel projection, N a 3x3 conv carrying the stride. The
    shortcut is the identity when shapes match, else a strided 1x1 projection.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 activation: str = "relu"):
        super().__init__()
        self.in_channels, self.out_channels, self.stride = in_channels, out_channels, stride
        self.activation = activation
        self.m_w = param(out_channels, in_channels, 1, 1)
        self.m_b = param(out_channels, init="zero")
        self.n_w = param(out_channels, out_channels, 3, 3)
        self.n_b = param(out_channels, init="zero")
        self.projected = stride != 1 or in_channels != out_channels
        if self.projected:
            self.shortcut_w = param(out_channels, in_channels, 1, 1)

    def transform(self, x: Tensor) -> Tensor:
        u = _ACTIVATIONS[self.activation](ops.conv2d(x, self.m_w, self.m_b))
        return ops.conv2d(u, self.n_w, self.n_b, stride=self.stride, pad=1)

    def shortcut(self, x: Tensor) -> Tensor:
        if not self.projected:
            return x
        return ops.conv2d(x, self.shortcut_w, stride=self.stride)

    def forward(self, x: Tensor) -> Tensor:
        return self.transform(x) + self.shortcut(x)

    def out_shape(self, shape):
        _, H, W = shape
        s = self.stride
        return (self.out_channels, _conv_out(H, 3, s, 1), _conv_out(W, 3, s, 1))


class ResidualBranch(Module):
    """CNN side stream: its own stride-2 stem then four stride-2 M/N blocks."""

    def __init__(self, in_channels: int, width: int, channels, activation: str = "relu"):
        super().__init__()
        self.in_channels, self.width, self.activation = in_channels, width, activation
        self.channels = list(channels)
        self.stem_w = param(width, in_channels, 3, 3)
        self.stem_b = param(width, init="zero")
        prev = width
        for i, ch in enumerate(self.channels):
            setattr(self, f"block{i}", ResidualBlockMN(prev, ch, stride=2, activation=activation))
            prev = ch

    @property
    def blocks(self) -> list[ResidualBlockMN]:
        return [getattr(self, f"block{i}") for i in range(len(self.channels))]

    def stem(self, x: Tensor) -> Tensor:
        return _ACTIVATIONS[self.activation](ops.conv2d(x, self.stem_w, self.stem_b, stride=2, pad=1))

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for block in self.blocks:
            x = block(x)
        return x

    def out_shape(self, shape):
        _, H, W = shape
        shape = (self.width, _conv_out(H, 3, 2, 1), _conv_out(W, 3, 2, 1))
        for block in self.blocks:
            shape = block.out_shape(shape)
        return shape


def channel_boost(c_rbcmt: Tensor, x_res: Tensor) -> Tensor:
    """Concatenate transformer-stream channels (first) with residual-branch channels."""
    if c_rbcmt.shape[2:] != x_res.shape[2:]:
        raise DimensionError(
            f"channel boost needs equal spatial dims, got {c_rbcmt.shape} and {x_res.shape}")
    return ops.concat_channels(c_rbcmt, x_res)


class PixelAttention(Module):
    """Spatial sigmoid gate ``[N, 1, H, W]`` multiplied into every channel."""

    def __init__(self, channels: int, ratio: int = 8, residual_add: bool = False):
        super().__init__()
        if channels < 1 or ratio < 1:
            raise ParameterError("pixel attention needs channels >= 1 and ratio >= 1")
        hidden = max(1, channels // ratio)
        self.residual_add = residual_add
        self.squeeze_w = param(hidden, channels, 1, 1)
        self.squeeze_b = param(hidden, init="zero")
        self.excite_w = param(1, hidden, 1, 1)
        self.excite_b = param(1, init="zero")

    def gate(self, c: Tensor) -> Tensor:
        u = ops.relu(ops.conv2d(c, self.squeeze_w, self.squeeze_b))
        return ops.sigmoid(ops.conv2d(u, self.excite_w, self.excite_b))

    def forward(self, c: Tensor) -> Tensor:
        out = self.gate(c) * c
        if self.residual_add:
            out = out + c
        return out

    def out_shape(self, shape):
        return tuple(shape)


class ClassifierHead(Module):
    """Global average pool, dropout, hidden FC + ReLU, output FC."""

    def __init__(self, channels: int, hidden: int = 256, classes: int = 2, dropout: float = 0.3):
        super().__init__()
        if not 0 <= dropout < 1:
            raise ParameterError(f"dropout must be in [0, 1), got {dropout}")
        self.p, self.hidden_size, self.classes = dropout, hidden, classes
        self.fc1_w = param(channels, hidden)
        self.fc1_b = param(hidden, init="zero")
        self.fc2_w = param(hidden, classes)
        self.fc2_b = param(classes, init="zero")

    def logits(self, c: Tensor, training: bool = False, seed: int = 0) -> tuple[Tensor, Tensor]:
        """Return pre-softmax scores and the hidden-layer activations."""
        pooled = ops.mean(c, axis=(2, 3))
        pooled = ops.dropout(pooled, self.p, training, seed)
        hidden = ops.relu(ops.linear(pooled, self.fc1_w, self.fc1_b))
        return ops.linear(hidden, self.fc2_w, self.fc2_b), hidden

    def forward(self, c: Tensor, training: bool = False, seed: int = 0) -> Tensor:
        scores, _ = self.logits(c, training, seed)
        return ops.softmax(scores, axis=1)


# -- functional entry points -----------------------------------------------

def stem_forward(img: Tensor, stem: StemBlock) -> Tensor:
    return stem(img)


def lpu_forward(c: Tensor, lpu: LPU) -> Tensor:
    return lpu(c)


def lmhsa_forward(x: Tensor, params: LMHSA) -> Tensor:
    return params(x)


def irffn_forward(c: Tensor, params: IRFFN) -> Tensor:
    return params(c)


def cmt_block_forward(c: Tensor, block: CMTBlock) -> Tensor:
    return block(c)


def rb_forward(c: Tensor, block: RBBlock) -> Tensor:
    return block(c)


def residual_block_forward(x: Tensor, block: ResidualBlockMN) -> Tensor:
    return block(x)


def pixel_attention_forward(c_boosted: Tensor, pa: PixelAttention) -> Tensor:
    return pa(c_boosted)


def classifier_head_forward(c: Tensor, head: ClassifierHead, training: bool = False,
                            seed: int = 0) -> Tensor:
    return head(c, training, seed)
