"""The gradient-check battery: primitives, blocks and a tiny end-to-end model.

Every check runs in 64-bit with central differences (h = 1e-5) on a scalar
loss ``sum(f(inputs) * R)`` with a fixed random weighting ``R``, so every
output element contributes a distinct gradient. Inputs to non-smooth ops
(ReLU, max-pool) are drawn away from their kinks; finite differences across
a kink measure the kink, not the backward rule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ops
from .blocks import (LMHSA, LPU, IRFFN, ClassifierHead, CMTBlock, PixelAttention, RBBlock,
                     ResidualBlockMN, ResidualBranch, StemBlock, channel_boost,
                     lightweight_attention)
from .gradcheck import gradcheck
from .model import ModelConfig, build_model
from .nn import Module, init_params
from .tensor import Tensor, precision

PRIMITIVE_TOL = 1e-6
BLOCK_TOL = 1e-4
END_TO_END_TOL = 1e-3
H = 1e-5


@dataclass
class CheckResult:
    name: str
    category: str
    error: float
    tolerance: float
    seconds: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tolerance


def _weighted(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    r = Tensor(rng.standard_normal(out.shape))
    return lambda y: ops.sum(y * r)


def _check(name: str, category: str, tol: float, build, seed: int,
           max_entries: Optional[int] = None) -> CheckResult:
    """``build(rng)`` returns ``(fn, inputs)`` where ``fn()`` gives a tensor."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    with precision(64):
        fn, inputs = build(rng)
        loss_of = _weighted(fn(), rng)
        err = gradcheck(lambda: loss_of(fn()), inputs, h=H, max_entries=max_entries, seed=seed)
    return CheckResult(name, category, err, tol, time.perf_counter() - start)


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape))


def _away_from_zero(rng, *shape, margin=0.1) -> Tensor:
    v = rng.uniform(margin, 1.5, size=shape)
    return Tensor(v * rng.choice([-1.0, 1.0], size=shape))


def _distinct(rng, *shape, gap=0.05) -> Tensor:
    """Entries are a shuffled grid spaced ``gap`` apart: no pooling ties."""
    n = int(np.prod(shape))
    return Tensor((rng.permutation(n) * gap - n * gap / 2).reshape(shape))


def _prim(name, build, seed=0, max_entries=None):
    return lambda: _check(name, "primitive", PRIMITIVE_TOL, build, seed, max_entries)


PRIMITIVES = [
    _prim("add", lambda r: ((a := _t(r, 3, 4), b := _t(r, 4)) and (lambda: a + b), [a, b])),
    _prim("sub", lambda r: ((a := _t(r, 2, 3), b := _t(r, 2, 1)) and (lambda: a - b), [a, b])),
    _prim("mul", lambda r: ((a := _t(r, 3, 4), b := _t(r, 3, 4)) and (lambda: a * b), [a, b])),
    _prim("div", lambda r: ((a := _t(r, 3, 4), b := _away_from_zero(r, 3, 4, margin=0.5))
                            and (lambda: a / b), [a, b])),
    _prim("exp", lambda r: ((a := _t(r, 3, 4)) and (lambda: ops.exp(a)), [a])),
    _prim("log", lambda r: ((a := Tensor(r.uniform(0.5, 2.0, (3, 4)))) and (lambda: ops.log(a)), [a])),
    _prim("matmul", lambda r: ((a := _t(r, 2, 3, 4), b := _t(r, 4, 5))
                               and (lambda: ops.matmul(a, b)), [a, b])),
    _prim("linear", lambda r: ((x := _t(r, 3, 4), w := _t(r, 4, 5), b := _t(r, 5))
                               and (lambda: ops.linear(x, w, b)), [x, w, b])),
    _prim("reshape_transpose", lambda r: ((a := _t(r, 2, 3, 4))
                                          and (lambda: ops.transpose(ops.reshape(a, (6, 4)), (1, 0))), [a])),
    _prim("getitem", lambda r: ((a := _t(r, 4, 5)) and (lambda: a[1:3, ::2]), [a])),
    _prim("sum", lambda r: ((a := _t(r, 3, 4, 2)) and (lambda: ops.sum(a, axis=1)), [a])),
    _prim("mean", lambda r: ((a := _t(r, 2, 3, 4, 4)) and (lambda: ops.mean(a, axis=(2, 3))), [a])),
    _prim("take", lambda r: ((t := _t(r, 2, 7)) and (lambda: ops.take(t, np.array([[0, 3, 3], [6, 1, 0]]))), [t])),
    _prim("conv2d", lambda r: ((x := _t(r, 2, 3, 5, 5), w := _t(r, 4, 3, 3, 3), b := _t(r, 4))
                               and (lambda: ops.conv2d(x, w, b, stride=1, pad=1)), [x, w, b])),
    _prim("conv2d_stride2", lambda r: ((x := _t(r, 1, 2, 6, 6), w := _t(r, 3, 2, 3, 3), b := _t(r, 3))
                                       and (lambda: ops.conv2d(x, w, b, stride=2, pad=1)), [x, w, b])),
    _prim("conv2d_1x1", lambda r: ((x := _t(r, 2, 3, 4, 4), w := _t(r, 5, 3, 1, 1), b := _t(r, 5))
                                   and (lambda: ops.conv2d(x, w, b)), [x, w, b])),
    _prim("depthwise", lambda r: ((x := _t(r, 2, 3, 5, 5), w := _t(r, 3, 1, 3, 3), b := _t(r, 3))
                                  and (lambda: ops.depthwise_conv2d(x, w, b, stride=1, pad=1)), [x, w, b])),
    _prim("depthwise_stride2", lambda r: ((x := _t(r, 1, 2, 7, 7), w := _t(r, 2, 1, 3, 3), b := _t(r, 2))
                                          and (lambda: ops.depthwise_conv2d(x, w, b, stride=2, pad=1)), [x, w, b])),
    _prim("max_pool", lambda r: ((x := _distinct(r, 2, 2, 4, 4)) and (lambda: ops.pool2d(x, "max", 2, 2)), [x])),
    _prim("avg_pool", lambda r: ((x := _t(r, 2, 2, 4, 4)) and (lambda: ops.pool2d(x, "avg", 2, 2)), [x])),
    _prim("layer_norm", lambda r: ((x := _t(r, 2, 4, 3, 3), g := _t(r, 4), b := _t(r, 4))
                                   and (lambda: ops.layer_norm(x, g, b)), [x, g, b])),
    _prim("relu", lambda r: ((x := _away_from_zero(r, 3, 5)) and (lambda: ops.relu(x)), [x])),
    _prim("gelu", lambda r: ((x := _t(r, 3, 5, scale=2.0)) and (lambda: ops.gelu(x)), [x])),
    _prim("sigmoid", lambda r: ((x := _t(r, 3, 5, scale=3.0)) and (lambda: ops.sigmoid(x)), [x])),
    _prim("softmax", lambda r: ((x := _t(r, 3, 5)) and (lambda: ops.softmax(x, axis=-1)), [x])),
    _prim("concat", lambda r: ((a := _t(r, 2, 2, 3, 3), b := _t(r, 2, 3, 3, 3))
                               and (lambda: ops.concat_channels(a, b)), [a, b])),
    _prim("dropout", lambda r: ((x := _t(r, 4, 6)) and (lambda: ops.dropout(x, 0.3, True, seed=7)), [x])),
    _prim("cross_entropy", lambda r: ((z := _t(r, 4, 3)) and (lambda: ops.cross_entropy(z, [0, 2, 1, 2])), [z])),
]


def _jitter_zero_params(module: Module, rng: np.random.Generator, scale: float = 0.05) -> None:
    """Give zero-initialized tensors (biases, bias tables) small random values so
    their gradients are exercised and ReLU/max-pool inputs leave exact ties."""
    for p in module.parameters():
        if p.init == "zero":
            p.data[...] = scale * rng.standard_normal(p.shape)


def _block(name, make, in_shape, seed=0, max_entries=None):
    def build(rng):
        m = make()
        m.astype(np.float64)
        init_params(m, seed)
        _jitter_zero_params(m, rng)
        x = _t(rng, *in_shape)
        return (lambda: m(x)), [x] + m.parameters()
    return lambda: _check(name, "block", BLOCK_TOL, build, seed, max_entries)


def _attention(rng):
    q, k, v = _t(rng, 2, 5, 3), _t(rng, 2, 2, 3), _t(rng, 2, 2, 3)
    bias = _t(rng, 2, 5, 2, scale=0.3)
    return (lambda: lightweight_attention(q, k, v, bias)), [q, k, v, bias]


def _channel_boost(rng):
    a, b = _t(rng, 1, 3, 2, 2), _t(rng, 1, 2, 2, 2)
    return (lambda: channel_boost(a, b)), [a, b]


class _ResidualSmall(Module):
    def __init__(self):
        super().__init__()
        self.branch = ResidualBranch(1, 4, [4, 6, 6, 8])

    def forward(self, x):
        return self.branch(x)


BLOCKS = [
    _block("stem", lambda: StemBlock(2, 4), (1, 2, 8, 8)),
    _block("lpu", lambda: LPU(3), (2, 3, 4, 4)),
    lambda: _check("lightweight_attention", "block", BLOCK_TOL, _attention, 0),
    _block("lmhsa", lambda: LMHSA(4, 2, 2, (4, 4)), (1, 4, 4, 4)),
    _block("irffn", lambda: IRFFN(4, 2), (1, 4, 3, 3)),
    _block("cmt_block", lambda: CMTBlock(4, 2, 2, (4, 4), 2), (1, 4, 4, 4)),
    _block("rb_block", lambda: RBBlock(3), (1, 3, 4, 4)),
    _block("residual_block_identity", lambda: ResidualBlockMN(3, 3, 1), (1, 3, 4, 4)),
    _block("residual_block_projected", lambda: ResidualBlockMN(2, 4, 2), (1, 2, 4, 4)),
    _block("residual_branch", _ResidualSmall, (1, 1, 32, 32), max_entries=8),
    lambda: _check("channel_boost", "block", BLOCK_TOL, _channel_boost, 0),
    _block("pixel_attention", lambda: PixelAttention(8, 4), (1, 8, 3, 3)),
    _block("classifier_head", lambda: ClassifierHead(4, 6, 2, 0.3), (2, 4, 2, 2)),
]

END_TO_END_SEED = 0


def tiny_config(seed: int = END_TO_END_SEED) -> ModelConfig:
    """Smallest desk-shaped model: every stage, the residual branch and the head."""
    return ModelConfig(input_height=32, input_width=32, base_width=8,
                       residual_channels=[8, 16, 24, 32], head_hidden=16, seed=seed)


def end_to_end(seed: int = END_TO_END_SEED, max_entries: int = 6) -> CheckResult:
    """Cross-entropy of the tiny model w.r.t. the input and every parameter
    tensor (``max_entries`` sampled entries each)."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    with precision(64):
        m = build_model(tiny_config(seed), dtype=np.float64)
        _jitter_zero_params(m, rng)
        x = Tensor(rng.random((1,) + m.cfg.input_shape))
        ops.kink_probe = []
        try:
            m.logits(x)
            margin = min((v for _, v in ops.kink_probe), default=float("inf"))
        finally:
            ops.kink_probe = None
        err = gradcheck(lambda: ops.cross_entropy(m.logits(x)[0], [1]), [x] + m.parameters(),
                        h=H, max_entries=max_entries, seed=seed)
    return CheckResult("end_to_end_tiny_model", "end-to-end", err, END_TO_END_TOL,
                       time.perf_counter() - start, f"min kink margin {margin:.2e}")


def run_battery(include_end_to_end: bool = True) -> list[CheckResult]:
    results = [check() for check in PRIMITIVES + BLOCKS]
    if include_end_to_end:
        results.append(end_to_end())
    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        note = f"  ({r.note})" if r.note else ""
        lines.append(f"{r.name:<{width}}  {r.category:<10}  max rel err {r.error:.3e}  "
                     f"<= {r.tolerance:.0e}  {status}  {r.seconds:.2f}s{note}")
    return "\n".join(lines)
