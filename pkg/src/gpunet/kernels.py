"""Numba-compiled inner loops for convolution, transposed convolution and pooling.

Determinism contract
--------------------
Every kernel here fixes its floating point evaluation order exactly, so runs
are bit-identical across processes for a given dtype:

* Convolution forward accumulates each output element over (input channel,
  kernel row, kernel column) in that order, one fused multiply-free chain of
  ``acc = acc + w*x`` adds, and the bias (when present) is added once at the
  very end by the caller. The fast k=3 and k=1 paths below walk taps in the
  same per-element order as the generic path, only batching work across
  output columns, so all paths agree bitwise.
* The weight-gradient kernels reduce over (batch, output row, output column)
  using four fixed accumulator lanes (lane = column block position) combined
  as ((a0+a1)+a2)+a3; the lane assignment depends only on indices, never on
  data or alignment.
* ``fastmath`` stays off everywhere: it would license reassociation and the
  order above is the whole point.

Shapes follow numpy NCHW. ``xp`` arguments are pre-padded by the caller;
kernels never bounds-check the spatial walk on the fast paths.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_fwd_generic(xp, w, y, stride, dilation):
    """Accumulate conv taps into y (pre-zeroed). Any kernel size and stride."""
    b, c, hp, wp = xp.shape
    n, cg, k, _ = w.shape
    oh, ow = y.shape[2], y.shape[3]
    groups = c // cg
    npg = n // groups
    for bi in range(b):
        for ni in range(n):
            g = ni // npg
            for oi in range(oh):
                yrow = y[bi, ni, oi]
                for cj in range(cg):
                    ci = g * cg + cj
                    for kh in range(k):
                        xrow = xp[bi, ci, oi * stride + kh * dilation]
                        for kw in range(k):
                            wv = w[ni, cj, kh, kw]
                            off = kw * dilation
                            if stride == 1:
                                for oj in range(ow):
                                    yrow[oj] += wv * xrow[off + oj]
                            else:
                                for oj in range(ow):
                                    yrow[oj] += wv * xrow[off + oj * stride]


@njit(cache=True)
def conv2d_fwd_k3s1(xp, w, y, dilation):
    """Fused 3x3 stride-1 path: all nine taps of one input channel per pass."""
    b, c, hp, wp = xp.shape
    n, cg, k, _ = w.shape
    oh, ow = y.shape[2], y.shape[3]
    groups = c // cg
    npg = n // groups
    d = dilation
    d2 = 2 * dilation
    for bi in range(b):
        for ni in range(n):
            g = ni // npg
            for oi in range(oh):
                yrow = y[bi, ni, oi]
                for cj in range(cg):
                    ci = g * cg + cj
                    x0 = xp[bi, ci, oi]
                    x1 = xp[bi, ci, oi + d]
                    x2 = xp[bi, ci, oi + d2]
                    w00 = w[ni, cj, 0, 0]
                    w01 = w[ni, cj, 0, 1]
                    w02 = w[ni, cj, 0, 2]
                    w10 = w[ni, cj, 1, 0]
                    w11 = w[ni, cj, 1, 1]
                    w12 = w[ni, cj, 1, 2]
                    w20 = w[ni, cj, 2, 0]
                    w21 = w[ni, cj, 2, 1]
                    w22 = w[ni, cj, 2, 2]
                    for oj in range(ow):
                        acc = yrow[oj]
                        acc = acc + w00 * x0[oj]
                        acc = acc + w01 * x0[oj + d]
                        acc = acc + w02 * x0[oj + d2]
                        acc = acc + w10 * x1[oj]
                        acc = acc + w11 * x1[oj + d]
                        acc = acc + w12 * x1[oj + d2]
                        acc = acc + w20 * x2[oj]
                        acc = acc + w21 * x2[oj + d]
                        acc = acc + w22 * x2[oj + d2]
                        yrow[oj] = acc


@njit(cache=True)
def conv2d_fwd_k1s1(xp, w, y):
    """Fused 1x1 stride-1 path: four input channels per pass over a row."""
    b, c, hp, wp = xp.shape
    n, cg, k, _ = w.shape
    oh, ow = y.shape[2], y.shape[3]
    groups = c // cg
    npg = n // groups
    for bi in range(b):
        for ni in range(n):
            g = ni // npg
            c0 = g * cg
            nblk = cg // 4
            for oi in range(oh):
                yrow = y[bi, ni, oi]
                for blk in range(nblk):
                    cj = blk * 4
                    wa = w[ni, cj, 0, 0]
                    wb = w[ni, cj + 1, 0, 0]
                    wc = w[ni, cj + 2, 0, 0]
                    wd = w[ni, cj + 3, 0, 0]
                    xa = xp[bi, c0 + cj, oi]
                    xb = xp[bi, c0 + cj + 1, oi]
                    xc = xp[bi, c0 + cj + 2, oi]
                    xd = xp[bi, c0 + cj + 3, oi]
                    for oj in range(ow):
                        acc = yrow[oj]
                        acc = acc + wa * xa[oj]
                        acc = acc + wb * xb[oj]
                        acc = acc + wc * xc[oj]
                        acc = acc + wd * xd[oj]
                        yrow[oj] = acc
                for cj in range(nblk * 4, cg):
                    wv = w[ni, cj, 0, 0]
                    xrow = xp[bi, c0 + cj, oi]
                    for oj in range(ow):
                        yrow[oj] += wv * xrow[oj]


@njit(cache=True)
def conv2d_dw_generic(xp, gy, dw, stride, dilation):
    """Weight gradient, any kernel/stride. Four-lane reduction per weight."""
    b, c, hp, wp = xp.shape
    n, cg, k, _ = dw.shape
    oh, ow = gy.shape[2], gy.shape[3]
    groups = c // cg
    npg = n // groups
    nblk = ow // 4
    rem = nblk * 4
    for ni in range(n):
        g = ni // npg
        for cj in range(cg):
            ci = g * cg + cj
            for kh in range(k):
                for kw in range(k):
                    a0 = dw[ni, cj, kh, kw]  # pre-zeroed by the caller, fixes dtype
                    a1 = a0
                    a2 = a0
                    a3 = a0
                    off = kw * dilation
                    for bi in range(b):
                        for oi in range(oh):
                            gyrow = gy[bi, ni, oi]
                            xrow = xp[bi, ci, oi * stride + kh * dilation]
                            if stride == 1:
                                for blk in range(nblk):
                                    oj = blk * 4
                                    a0 = a0 + gyrow[oj] * xrow[off + oj]
                                    a1 = a1 + gyrow[oj + 1] * xrow[off + oj + 1]
                                    a2 = a2 + gyrow[oj + 2] * xrow[off + oj + 2]
                                    a3 = a3 + gyrow[oj + 3] * xrow[off + oj + 3]
                                for oj in range(rem, ow):
                                    a0 = a0 + gyrow[oj] * xrow[off + oj]
                            else:
                                for blk in range(nblk):
                                    oj = blk * 4
                                    a0 = a0 + gyrow[oj] * xrow[off + oj * stride]
                                    a1 = a1 + gyrow[oj + 1] * xrow[off + (oj + 1) * stride]
                                    a2 = a2 + gyrow[oj + 2] * xrow[off + (oj + 2) * stride]
                                    a3 = a3 + gyrow[oj + 3] * xrow[off + (oj + 3) * stride]
                                for oj in range(rem, ow):
                                    a0 = a0 + gyrow[oj] * xrow[off + oj * stride]
                    dw[ni, cj, kh, kw] = ((a0 + a1) + a2) + a3


@njit(cache=True)
def conv2d_dw_k3s1(xp, gy, dw, dilation):
    """Weight gradient, 3x3 stride-1: three kernel columns share row loads.

    Per-accumulator chains are ordered exactly as in conv2d_dw_generic, so the
    two kernels agree bitwise.
    """
    b, c, hp, wp = xp.shape
    n, cg, k, _ = dw.shape
    oh, ow = gy.shape[2], gy.shape[3]
    groups = c // cg
    npg = n // groups
    nblk = ow // 4
    rem = nblk * 4
    d = dilation
    d2 = 2 * dilation
    for ni in range(n):
        g = ni // npg
        for cj in range(cg):
            ci = g * cg + cj
            for kh in range(k):
                z = dw[ni, cj, kh, 0]  # pre-zeroed by the caller, fixes dtype
                a00 = z; a01 = z; a02 = z; a03 = z
                a10 = z; a11 = z; a12 = z; a13 = z
                a20 = z; a21 = z; a22 = z; a23 = z
                for bi in range(b):
                    for oi in range(oh):
                        gyrow = gy[bi, ni, oi]
                        xrow = xp[bi, ci, oi + kh * d]
                        for blk in range(nblk):
                            oj = blk * 4
                            g0 = gyrow[oj]
                            g1 = gyrow[oj + 1]
                            g2 = gyrow[oj + 2]
                            g3 = gyrow[oj + 3]
                            a00 = a00 + g0 * xrow[oj]
                            a01 = a01 + g1 * xrow[oj + 1]
                            a02 = a02 + g2 * xrow[oj + 2]
                            a03 = a03 + g3 * xrow[oj + 3]
                            a10 = a10 + g0 * xrow[oj + d]
                            a11 = a11 + g1 * xrow[oj + 1 + d]
                            a12 = a12 + g2 * xrow[oj + 2 + d]
                            a13 = a13 + g3 * xrow[oj + 3 + d]
                            a20 = a20 + g0 * xrow[oj + d2]
                            a21 = a21 + g1 * xrow[oj + 1 + d2]
                            a22 = a22 + g2 * xrow[oj + 2 + d2]
                            a23 = a23 + g3 * xrow[oj + 3 + d2]
                        for oj in range(rem, ow):
                            gv = gyrow[oj]
                            a00 = a00 + gv * xrow[oj]
                            a10 = a10 + gv * xrow[oj + d]
                            a20 = a20 + gv * xrow[oj + d2]
                dw[ni, cj, kh, 0] = ((a00 + a01) + a02) + a03
                dw[ni, cj, kh, 1] = ((a10 + a11) + a12) + a13
                dw[ni, cj, kh, 2] = ((a20 + a21) + a22) + a23


@njit(cache=True)
def conv2d_dx_strided(gy, w, dxp, stride, dilation):
    """Data gradient via scatter into the padded-input buffer. Any stride.

    Slow path: only used when stride > 1 (the stride-1 case goes through the
    forward kernels with flipped weights instead).
    """
    b, n, oh, ow = gy.shape
    _, cg, k, _ = w.shape
    c = dxp.shape[1]
    groups = c // cg
    npg = n // groups
    for bi in range(b):
        for ni in range(n):
            g = ni // npg
            for cj in range(cg):
                ci = g * cg + cj
                for kh in range(k):
                    for kw in range(k):
                        wv = w[ni, cj, kh, kw]
                        for oi in range(oh):
                            ih = oi * stride + kh * dilation
                            for oj in range(ow):
                                dxp[bi, ci, ih, oj * stride + kw * dilation] += wv * gy[bi, ni, oi, oj]


@njit(cache=True)
def tconv2d_fwd(x, w, y, stride, padding):
    """Transposed convolution forward, gather form.

    Each output element accumulates over (input channel, kernel row, kernel
    column) in that order, matching the convolution contract.
    """
    b, c, ih, iw = x.shape
    n, k = w.shape[1], w.shape[2]
    oh, ow = y.shape[2], y.shape[3]
    for bi in range(b):
        for ni in range(n):
            for oi in range(oh):
                for oj in range(ow):
                    acc = y[bi, ni, oi, oj]
                    for ci in range(c):
                        for kh in range(k):
                            t = oi + padding - kh
                            if t < 0 or t % stride != 0:
                                continue
                            ii = t // stride
                            if ii >= ih:
                                continue
                            for kw in range(k):
                                u = oj + padding - kw
                                if u < 0 or u % stride != 0:
                                    continue
                                jj = u // stride
                                if jj >= iw:
                                    continue
                                acc = acc + x[bi, ci, ii, jj] * w[ci, ni, kh, kw]
                    y[bi, ni, oi, oj] = acc


@njit(cache=True)
def tconv2d_dx(gy, w, dx, stride, padding):
    """Transposed convolution data gradient (a plain strided convolution of gy)."""
    b, n, oh, ow = gy.shape
    c, k = w.shape[0], w.shape[2]
    ih, iw = dx.shape[2], dx.shape[3]
    for bi in range(b):
        for ci in range(c):
            for ii in range(ih):
                for jj in range(iw):
                    acc = dx[bi, ci, ii, jj]
                    for ni in range(n):
                        for kh in range(k):
                            oi = ii * stride - padding + kh
                            if oi < 0 or oi >= oh:
                                continue
                            for kw in range(k):
                                oj = jj * stride - padding + kw
                                if oj < 0 or oj >= ow:
                                    continue
                                acc = acc + gy[bi, ni, oi, oj] * w[ci, ni, kh, kw]
                    dx[bi, ci, ii, jj] = acc


@njit(cache=True)
def tconv2d_dw(x, gy, dw, stride, padding):
    """Transposed convolution weight gradient, single accumulator per weight."""
    b, c, ih, iw = x.shape
    n, oh, ow = gy.shape[1], gy.shape[2], gy.shape[3]
    k = dw.shape[2]
    for ci in range(c):
        for ni in range(n):
            for kh in range(k):
                for kw in range(k):
                    acc = dw[ci, ni, kh, kw]  # pre-zeroed by the caller, fixes dtype
                    for bi in range(b):
                        for ii in range(ih):
                            oi = ii * stride - padding + kh
                            if oi < 0 or oi >= oh:
                                continue
                            for jj in range(iw):
                                oj = jj * stride - padding + kw
                                if oj < 0 or oj >= ow:
                                    continue
                                acc = acc + x[bi, ci, ii, jj] * gy[bi, ni, oi, oj]
                    dw[ci, ni, kh, kw] = acc


@njit(cache=True)
def maxpool_fwd(x, y, idx, kernel, stride):
    """Max pooling; ties resolve to the first maximum in row-major window order."""
    b, c, h, w = x.shape
    oh, ow = y.shape[2], y.shape[3]
    for bi in range(b):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    best = x[bi, ci, oi * stride, oj * stride]
                    bidx = (oi * stride) * w + oj * stride
                    for kh in range(kernel):
                        ii = oi * stride + kh
                        for kw in range(kernel):
                            jj = oj * stride + kw
                            v = x[bi, ci, ii, jj]
                            if v > best:
                                best = v
                                bidx = ii * w + jj
                    y[bi, ci, oi, oj] = best
                    idx[bi, ci, oi, oj] = bidx
