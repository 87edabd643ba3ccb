"""Compiled inner loops for conv/pool/matmul, forward and backward.

Determinism contract, shared by every kernel here:

  * prange spans independent OUTPUT elements only; no reduction is ever
    split across threads, so results are identical for any thread count.
  * Each output element is one sequential accumulation in a documented
    index order (stated per kernel below).
  * No fastmath: numba then performs no reassociation and no multiply-add
    contraction, so every product and every add rounds separately, exactly
    like the scalar reference loops in the tests.

Inputs are NHWC, weights are [KH, KW, Cin, Cout] (depthwise [KH, KW, C]).
Callers preallocate outputs; kernels specialize lazily for float32/float64.
Padding offsets are the top/left margins; out-of-range taps are skipped,
which is bit-equivalent to multiplying by a zero pad.
"""

import numpy as np

from . import threads  # noqa: F401  (threading layer must be set pre-numba)
from numba import njit, prange

_JIT = dict(parallel=True, cache=True)


@njit(cache=True)
def mul_add(a, b, c):
    """a*b + c with two separate roundings.

    Exists so tests can certify the compiler never contracts this pattern
    into a fused multiply-add behind the engine's back.
    """
    return a * b + c


@njit(cache=True)
def colsum(x, out):
    """out[j] = sum over ascending i of x[i, j].

    One streaming row-major sweep, deliberately serial: per-column order is
    then a plain sequential accumulation no matter what the thread setting
    is. Used by the fixed-order reduce for leading-axis reductions.
    """
    L, M = x.shape
    for j in range(M):
        out[j] = 0.0
    for i in range(L):
        xr = x[i]
        for j in range(M):
            out[j] += xr[j]


@njit(**_JIT)
def rowsum(x, out):
    """out[m] = sum over ascending j of x[m, j]; rows are independent."""
    M, L = x.shape
    for m in prange(M):
        out[m] = 0.0
        xr = x[m]
        for j in range(L):
            out[m] += xr[j]


@njit(**_JIT)
def conv2d_fwd(x, w, stride, pad_t, pad_l, y):
    """y[n,oh,ow,f] = sum over ascending (kh, kw, ci) of x*w."""
    N, H, W, Ci = x.shape
    KH, KW = w.shape[0], w.shape[1]
    OH, OW, Co = y.shape[1], y.shape[2], y.shape[3]
    for p in prange(N * OH * OW):
        n = p // (OH * OW)
        rem = p % (OH * OW)
        oh = rem // OW
        ow = rem % OW
        ih0 = oh * stride - pad_t
        iw0 = ow * stride - pad_l
        yr = y[n, oh, ow]
        for f in range(Co):
            yr[f] = 0.0
        for kh in range(KH):
            ih = ih0 + kh
            if ih < 0 or ih >= H:
                continue
            for kw in range(KW):
                iw = iw0 + kw
                if iw < 0 or iw >= W:
                    continue
                xr = x[n, ih, iw]
                wr = w[kh, kw]
                for ci in range(Ci):
                    xv = xr[ci]
                    wc = wr[ci]
                    for f in range(Co):
                        yr[f] += xv * wc[f]


@njit(**_JIT)
def conv2d_bwd_input(g, w, stride, pad_t, pad_l, dx):
    """dx[n,ih,iw,ci] accumulated over ascending (kh, kw, f)."""
    N, H, W, Ci = dx.shape
    KH, KW = w.shape[0], w.shape[1]
    OH, OW, Co = g.shape[1], g.shape[2], g.shape[3]
    for q in prange(N * H * W):
        n = q // (H * W)
        rem = q % (H * W)
        ih = rem // W
        iw = rem % W
        dxr = dx[n, ih, iw]
        for ci in range(Ci):
            dxr[ci] = 0.0
        for kh in range(KH):
            ohn = ih + pad_t - kh
            if ohn < 0 or ohn % stride != 0:
                continue
            oh = ohn // stride
            if oh >= OH:
                continue
            for kw in range(KW):
                own = iw + pad_l - kw
                if own < 0 or own % stride != 0:
                    continue
                ow = own // stride
                if ow >= OW:
                    continue
                gr = g[n, oh, ow]
                wr = w[kh, kw]
                for ci in range(Ci):
                    wc = wr[ci]
                    acc = dxr[ci]
                    for f in range(Co):
                        acc += gr[f] * wc[f]
                    dxr[ci] = acc


@njit(**_JIT)
def conv2d_bwd_weights(x, g, stride, pad_t, pad_l, dw):
    """dw[kh,kw,ci,f] accumulated over ascending (n, oh, ow)."""
    N, H, W, Ci = x.shape
    KH, KW = dw.shape[0], dw.shape[1]
    OH, OW, Co = g.shape[1], g.shape[2], g.shape[3]
    for t in prange(KH * KW * Ci):
        kh = t // (KW * Ci)
        rem = t % (KW * Ci)
        kw = rem // Ci
        ci = rem % Ci
        dwr = dw[kh, kw, ci]
        for f in range(Co):
            dwr[f] = 0.0
        for n in range(N):
            for oh in range(OH):
                ih = oh * stride - pad_t + kh
                if ih < 0 or ih >= H:
                    continue
                for ow in range(OW):
                    iw = ow * stride - pad_l + kw
                    if iw < 0 or iw >= W:
                        continue
                    xv = x[n, ih, iw, ci]
                    gr = g[n, oh, ow]
                    for f in range(Co):
                        dwr[f] += xv * gr[f]


@njit(**_JIT)
def depthwise_fwd(x, w, stride, pad_t, pad_l, y):
    """y[n,oh,ow,c] = sum over ascending (kh, kw) of x*w, per channel."""
    N, H, W, C = x.shape
    KH, KW = w.shape[0], w.shape[1]
    OH, OW = y.shape[1], y.shape[2]
    for p in prange(N * OH * OW):
        n = p // (OH * OW)
        rem = p % (OH * OW)
        oh = rem // OW
        ow = rem % OW
        ih0 = oh * stride - pad_t
        iw0 = ow * stride - pad_l
        yr = y[n, oh, ow]
        for c in range(C):
            yr[c] = 0.0
        for kh in range(KH):
            ih = ih0 + kh
            if ih < 0 or ih >= H:
                continue
            for kw in range(KW):
                iw = iw0 + kw
                if iw < 0 or iw >= W:
                    continue
                xr = x[n, ih, iw]
                wr = w[kh, kw]
                for c in range(C):
                    yr[c] += xr[c] * wr[c]


@njit(**_JIT)
def depthwise_bwd_input(g, w, stride, pad_t, pad_l, dx):
    """dx[n,ih,iw,c] accumulated over ascending (kh, kw), per channel."""
    N, H, W, C = dx.shape
    KH, KW = w.shape[0], w.shape[1]
    OH, OW = g.shape[1], g.shape[2]
    for q in prange(N * H * W):
        n = q // (H * W)
        rem = q % (H * W)
        ih = rem // W
        iw = rem % W
        dxr = dx[n, ih, iw]
        for c in range(C):
            dxr[c] = 0.0
        for kh in range(KH):
            ohn = ih + pad_t - kh
            if ohn < 0 or ohn % stride != 0:
                continue
            oh = ohn // stride
            if oh >= OH:
                continue
            for kw in range(KW):
                own = iw + pad_l - kw
                if own < 0 or own % stride != 0:
                    continue
                ow = own // stride
                if ow >= OW:
                    continue
                gr = g[n, oh, ow]
                wr = w[kh, kw]
                for c in range(C):
                    dxr[c] += gr[c] * wr[c]


@njit(**_JIT)
def depthwise_bwd_weights(x, g, stride, pad_t, pad_l, dw):
    """dw[kh,kw,c] accumulated over ascending (n, oh, ow), per channel."""
    N, H, W, C = x.shape
    KH, KW = dw.shape[0], dw.shape[1]
    OH, OW = g.shape[1], g.shape[2]
    for t in prange(KH * KW):
        kh = t // KW
        kw = t % KW
        dwr = dw[kh, kw]
        for c in range(C):
            dwr[c] = 0.0
        for n in range(N):
            for oh in range(OH):
                ih = oh * stride - pad_t + kh
                if ih < 0 or ih >= H:
                    continue
                for ow in range(OW):
                    iw = ow * stride - pad_l + kw
                    if iw < 0 or iw >= W:
                        continue
                    xr = x[n, ih, iw]
                    gr = g[n, oh, ow]
                    for c in range(C):
                        dwr[c] += xr[c] * gr[c]


@njit(**_JIT)
def matmul(a, b, y):
    """y[m,j] = sum over ascending k of a[m,k]*b[k,j]. Never BLAS."""
    M, K = a.shape
    Nc = b.shape[1]
    for m in prange(M):
        yr = y[m]
        for j in range(Nc):
            yr[j] = 0.0
        for k in range(K):
            av = a[m, k]
            br = b[k]
            for j in range(Nc):
                yr[j] += av * br[j]


@njit(**_JIT)
def maxpool_fwd(x, ksize, stride, pad_t, pad_l, y, arg):
    """Window max with first-hit tie-break in ascending (kh, kw) scan order.

    arg stores the flat spatial index ih*W + iw of the winning cell, for the
    backward scatter. Every window contains at least one valid cell for the
    supported output geometries.
    """
    N, H, W, C = x.shape
    OH, OW = y.shape[1], y.shape[2]
    for p in prange(N * OH * OW):
        n = p // (OH * OW)
        rem = p % (OH * OW)
        oh = rem // OW
        ow = rem % OW
        ih0 = oh * stride - pad_t
        iw0 = ow * stride - pad_l
        for c in range(C):
            best = -np.inf
            bi = -1
            for kh in range(ksize):
                ih = ih0 + kh
                if ih < 0 or ih >= H:
                    continue
                for kw in range(ksize):
                    iw = iw0 + kw
                    if iw < 0 or iw >= W:
                        continue
                    v = x[n, ih, iw, c]
                    if v > best:
                        best = v
                        bi = ih * W + iw
            y[n, oh, ow, c] = best
            arg[n, oh, ow, c] = bi


@njit(**_JIT)
def maxpool_bwd(g, arg, dx):
    """Scatter-add pooled gradients back through the argmax indices.

    Windows overlap, so writes can collide; each (image, channel) plane is
    owned by one thread and scanned in ascending (oh, ow) order.
    """
    N, OH, OW, C = g.shape
    W = dx.shape[2]
    for t in prange(N * C):
        n = t // C
        c = t % C
        for oh in range(OH):
            for ow in range(OW):
                fi = arg[n, oh, ow, c]
                ih = fi // W
                iw = fi % W
                dx[n, ih, iw, c] += g[n, oh, ow, c]
