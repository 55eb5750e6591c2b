"""Shared brute-force oracles and fixtures."""

import numpy as np
import pytest

from cmtboost.tensor import precision


def conv2d_oracle(x, w, b, stride, pad):
    """Direct nested-loop convolution (zero padding)."""
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((N, C, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += xp[n, c, i * stride + a, j * stride + bb] * w[o, c, a, bb]
                    out[n, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def depthwise_oracle(x, w, b, stride, pad):
    N, C, H, W = x.shape
    out = [conv2d_oracle(x[:, c:c + 1], w[c:c + 1], None if b is None else b[c:c + 1], stride, pad)
           for c in range(C)]
    return np.concatenate(out, axis=1)


def pool_oracle(x, mode, k, stride):
    N, C, H, W = x.shape
    Ho, Wo = (H - k) // stride + 1, (W - k) // stride + 1
    out = np.zeros((N, C, Ho, Wo))
    for n in range(N):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    win = [x[n, c, i * stride + a, j * stride + bb] for a in range(k) for bb in range(k)]
                    out[n, c, i, j] = max(win) if mode == "max" else sum(win) / len(win)
    return out


@pytest.fixture
def f64():
    with precision(64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
