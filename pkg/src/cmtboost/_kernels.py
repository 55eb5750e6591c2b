"""Compiled inner loops for the depthwise convolution.

Loop order is fixed and no floating-point reassociation is allowed, so the
results are bit-reproducible across runs.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def depthwise_forward(xp, w, stride, out):
    N, C, Ho, Wo = out.shape
    kh, kw = w.shape[2], w.shape[3]
    for n in range(N):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    out[n, c, i, j] = 0
            for a in range(kh):
                for b in range(kw):
                    wv = w[c, 0, a, b]
                    for i in range(Ho):
                        row = xp[n, c, i * stride + a]
                        o = out[n, c, i]
                        for j in range(Wo):
                            o[j] += row[j * stride + b] * wv


@numba.njit(cache=True)
def depthwise_backward(xp, w, g, stride, gxp, gw):
    N, C, Ho, Wo = g.shape
    kh, kw = w.shape[2], w.shape[3]
    # per-column partial sums keep the weight-gradient loop vectorizable
    part = np.zeros(Wo, dtype=np.float64)
    for c in range(C):
        for a in range(kh):
            for b in range(kw):
                wv = w[c, 0, a, b]
                part[:] = 0.0
                for n in range(N):
                    for i in range(Ho):
                        grow = g[n, c, i]
                        xrow = xp[n, c, i * stride + a]
                        gxrow = gxp[n, c, i * stride + a]
                        for j in range(Wo):
                            part[j] += grow[j] * xrow[j * stride + b]
                            gxrow[j * stride + b] += grow[j] * wv
                acc = 0.0
                for j in range(Wo):
                    acc += part[j]
                gw[c, 0, a, b] = acc


@numba.njit(cache=True)
def depthwise_forward_s1(xp, w, out):
    N, C, Ho, Wo = out.shape
    kh, kw = w.shape[2], w.shape[3]
    for n in range(N):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    out[n, c, i, j] = 0
            for a in range(kh):
                for b in range(kw):
                    wv = w[c, 0, a, b]
                    for i in range(Ho):
                        row = xp[n, c, i + a, b:b + Wo]
                        o = out[n, c, i]
                        for j in range(Wo):
                            o[j] += row[j] * wv


@numba.njit(cache=True)
def depthwise_backward_s1(xp, w, g, gxp, gw):
    N, C, Ho, Wo = g.shape
    kh, kw = w.shape[2], w.shape[3]
    part = np.zeros(Wo, dtype=np.float64)
    for c in range(C):
        for a in range(kh):
            for b in range(kw):
                wv = w[c, 0, a, b]
                part[:] = 0.0
                for n in range(N):
                    for i in range(Ho):
                        grow = g[n, c, i]
                        xrow = xp[n, c, i + a, b:b + Wo]
                        gxrow = gxp[n, c, i + a, b:b + Wo]
                        for j in range(Wo):
                            part[j] += grow[j] * xrow[j]
                            gxrow[j] += grow[j] * wv
                acc = 0.0
                for j in range(Wo):
                    acc += part[j]
                gw[c, 0, a, b] = acc
