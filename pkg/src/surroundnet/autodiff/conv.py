"""Stride-1 cross-correlations: dense/grouped 2-D and single-kernel 1-D.

Two lowering strategies are used for dense 2-D convolution.  When the layer
widens or keeps the channel count, input patches are gathered into columns and
multiplied by the weight matrix.  When it narrows (Cout < Cin), every tap is
multiplied on the full padded grid first and the Cout * kh * kw partial maps are
shifted into place, which moves far less memory.  Both compute the same
correlation.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _result

# 1-D lines up to this length use a banded-matrix product instead of tap loops
_BANDED_MAX = 1024


def _pads2d(padding) -> tuple[int, int, int, int]:
    if isinstance(padding, (int, np.integer)):
        return (int(padding),) * 4
    padding = tuple(int(p) for p in padding)
    if len(padding) == 2:
        return padding[0], padding[0], padding[1], padding[1]
    if len(padding) == 4:
        return padding
    raise ValueError(f"padding must be an int, (ph, pw) or (top, bottom, left, right); got {padding}")


def _im2col(xp: np.ndarray, kh: int, kw: int, d: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    if kh == kw == 1:
        return np.ascontiguousarray(xp[:, :, :ho, :wo]).reshape(n, c, ho * wo)
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i * d:i * d + ho, j * d:j * d + wo]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(dcols: np.ndarray, shape: tuple, kh: int, kw: int, d: int, ho: int, wo: int) -> np.ndarray:
    n, c = shape[:2]
    dxp = np.zeros(shape, dtype=dcols.dtype)
    dc = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i * d:i * d + ho, j * d:j * d + wo] += dc[:, :, i, j]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding=0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding and stride 1.

    ``x`` is (N, Cin, H, W), ``weight`` is (Cout, Cin // groups, kh, kw).
    Output extent is ``H + top + bottom - dilation * (kh - 1)`` (same for W).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", x.shape, weight.shape)
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups or cin_g != cin // groups:
        raise ShapeError(f"conv2d(groups={groups})", x.shape, weight.shape)
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError("conv2d bias", bias.shape, (cout,))
    pt, pb, pl, pr = _pads2d(padding)
    ho = h + pt + pb - dilation * (kh - 1)
    wo = w + pl + pr - dilation * (kw - 1)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d output", x.shape, weight.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    dtype = np.result_type(x.dtype, weight.dtype)
    if groups == 1 and cout < cin and kh * kw > 1:
        out, rule = _narrowing(x, weight, xp, dilation, ho, wo, dtype)
    else:
        out, rule = _gathering(x, weight, xp, dilation, groups, ho, wo, dtype)
    if bias is not None:
        out += bias.data[None, :, None, None]

    crop = (slice(None), slice(None), slice(pt, pt + h), slice(pl, pl + w))

    def full_rule(g):
        gx, gw = rule(g)
        if gx is not None:
            gx = gx[crop]
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    if bias is None:
        return _result(out, (x, weight), lambda g: full_rule(g)[:2])
    return _result(out, (x, weight, bias), full_rule)


def _gathering(x, weight, xp, d, groups, ho, wo, dtype):
    n = x.shape[0]
    cin = x.shape[1]
    cout, cin_g, kh, kw = weight.shape
    cols = _im2col(xp, kh, kw, d, ho, wo)
    kk = cin_g * kh * kw
    cout_g = cout // groups
    w2 = weight.data.reshape(cout, kk)
    out = np.empty((n, cout, ho * wo), dtype=dtype)
    for gi in range(groups):
        oc = slice(gi * cout_g, (gi + 1) * cout_g)
        out[:, oc] = np.matmul(w2[oc], cols[:, gi * kk:(gi + 1) * kk])

    def rule(g):
        g3 = g.reshape(n, cout, ho * wo)
        gx = gw = None
        if weight.requires_grad:
            gw = np.zeros((cout, kk), dtype=dtype)
            for gi in range(groups):
                oc = slice(gi * cout_g, (gi + 1) * cout_g)
                for b in range(n):
                    gw[oc] += g3[b, oc] @ cols[b, gi * kk:(gi + 1) * kk].T
            gw = gw.reshape(weight.shape)
        if x.requires_grad:
            dcols = np.empty((n, cin * kh * kw, ho * wo), dtype=dtype)
            for gi in range(groups):
                oc = slice(gi * cout_g, (gi + 1) * cout_g)
                dcols[:, gi * kk:(gi + 1) * kk] = np.matmul(w2[oc].T, g3[:, oc])
            gx = _col2im(dcols, xp.shape, kh, kw, d, ho, wo)
        return gx, gw

    return out.reshape(n, cout, ho, wo), rule


def _narrowing(x, weight, xp, d, ho, wo, dtype):
    n, cin, hp, wp = xp.shape
    cout, _, kh, kw = weight.shape
    # (Cout*kh*kw, Cin): one row per (output channel, tap)
    wt = weight.data.transpose(0, 2, 3, 1).reshape(cout * kh * kw, cin)
    x3 = xp.reshape(n, cin, hp * wp)
    z = np.matmul(wt, x3).reshape(n, cout, kh, kw, hp, wp)
    out = np.zeros((n, cout, ho, wo), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            out += z[:, :, i, j, i * d:i * d + ho, j * d:j * d + wo]
    del z

    def rule(g):
        gz = np.zeros((n, cout, kh, kw, hp, wp), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                gz[:, :, i, j, i * d:i * d + ho, j * d:j * d + wo] = g
        gz = gz.reshape(n, cout * kh * kw, hp * wp)
        gx = gw = None
        if x.requires_grad:
            gx = np.matmul(wt.T, gz).reshape(n, cin, hp, wp)
        if weight.requires_grad:
            acc = np.zeros((cout * kh * kw, cin), dtype=dtype)
            for b in range(n):
                acc += gz[b] @ x3[b].T
            gw = acc.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        return gx, gw

    return out, rule


def _banded(k: np.ndarray, length: int, lo: int, pl: int) -> np.ndarray:
    """Matrix T with (line @ T)[o] = sum_j k[j] * padded_line[o + j]."""
    t = np.zeros((length, lo), dtype=k.dtype)
    o = np.arange(lo)
    for j in range(k.shape[0]):
        i = o + j - pl
        ok = (i >= 0) & (i < length)
        t[i[ok], o[ok]] = k[j]
    return t


def conv1d(x: Tensor, weight: Tensor, padding="same", axis: int = -1) -> Tensor:
    """Correlate every line of ``x`` along ``axis`` with one odd-length kernel.

    ``padding`` is ``"same"`` (``(k - 1) // 2`` zeros per side), an int, or a
    ``(left, right)`` pair.
    """
    if weight.ndim != 1:
        raise ShapeError("conv1d weight", weight.shape, ("k",))
    k = weight.shape[0]
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel length must be odd, got {k}")
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for rank {x.ndim}")
    ax = axis % x.ndim
    if isinstance(padding, str):
        if padding != "same":
            raise ValueError(f"unknown padding {padding!r}")
        pl = pr = (k - 1) // 2
    elif isinstance(padding, (int, np.integer)):
        pl = pr = int(padding)
    else:
        pl, pr = (int(p) for p in padding)
    length = x.shape[ax]
    lo = length + pl + pr - k + 1
    if lo < 1:
        raise ShapeError("conv1d output", x.shape, weight.shape)
    dtype = np.result_type(x.dtype, weight.dtype)
    if length <= _BANDED_MAX:
        return _conv1d_banded(x, weight, ax, pl, lo, dtype)
    return _conv1d_taps(x, weight, ax, pl, pr, lo, dtype)


def _conv1d_banded(x, weight, ax, pl, lo, dtype):
    length = x.shape[ax]
    k = weight.shape[0]
    t = _banded(weight.data.astype(dtype), length, lo, pl)
    last = ax == x.ndim - 1
    xd = x.data.astype(dtype, copy=False)
    # contract over `ax`: lines along the last axis multiply T on the right,
    # lines along the second-to-last multiply T^T on the left
    if last:
        out = xd @ t
    elif ax == x.ndim - 2:
        out = t.T @ xd
    else:
        out = np.moveaxis(np.moveaxis(xd, ax, -1) @ t, -1, ax)

    def rule(g):
        gx = gw = None
        if x.requires_grad:
            if last:
                gx = g @ t.T
            elif ax == x.ndim - 2:
                gx = t @ g
            else:
                gx = np.moveaxis(np.moveaxis(g, ax, -1) @ t.T, -1, ax)
        if weight.requires_grad:
            # dT[i, o] = sum over lines of x[i] * g[o]; dk[j] sums the band i - o = j - pl
            xl = np.moveaxis(xd, ax, -1).reshape(-1, length).astype(np.float64)
            gl = np.moveaxis(g, ax, -1).reshape(-1, lo).astype(np.float64)
            dt = xl.T @ gl
            o = np.arange(lo)
            gw = np.zeros(k)
            for j in range(k):
                i = o + j - pl
                ok = (i >= 0) & (i < length)
                gw[j] = dt[i[ok], o[ok]].sum()
        return gx, gw

    return _result(np.ascontiguousarray(out), (x, weight), rule)


def _conv1d_taps(x, weight, ax, pl, pr, lo, dtype):
    length = x.shape[ax]
    k = weight.shape[0]
    widths = [(0, 0)] * x.ndim
    widths[ax] = (pl, pr)
    xp = np.pad(x.data, widths)
    wv = weight.data.astype(np.float64)

    def window(j):
        index = [slice(None)] * x.ndim
        index[ax] = slice(j, j + lo)
        return tuple(index)

    acc = np.zeros(x.shape[:ax] + (lo,) + x.shape[ax + 1:], dtype=dtype)
    for j in range(k):
        acc += (wv[j] * xp[window(j)]).astype(dtype, copy=False)

    def rule(g):
        gx = gw = None
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=dtype)
            for j in range(k):
                dxp[window(j)] += wv[j] * g
            index = [slice(None)] * x.ndim
            index[ax] = slice(pl, pl + length)
            gx = dxp[tuple(index)]
        if weight.requires_grad:
            gw = np.array([np.sum(g * xp[window(j)], dtype=np.float64) for j in range(k)])
        return gx, gw

    return _result(acc, (x, weight), rule)
