"""Differentiable operations.

Layout conventions (channels last throughout):

* sequences are ``(..., T, C)``; ``conv1d`` and ``conv_transpose1d`` slide
  over ``T``;
* planes are ``(..., F, T, C)``; ``conv2d`` and ``avg_pool2d`` act on
  ``(F, T)``;
* 1-D kernels are ``(K, C_in, C_out)``, 2-D kernels ``(K_F, K_T, C_in, C_out)``.

Shape laws: ``conv1d`` maps ``T -> floor((T - K) / s) + 1`` with valid
padding and ``T -> ceil(T / s)`` with same padding; ``conv_transpose1d``
(stride fixed to the kernel length) maps ``T -> T * K``.

The only broadcasting supported is adding a bias vector over the last axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, check_finite, record


def _dims_error(op, message, *tensors):
    return DimensionError(op, message, [t.dims if isinstance(t, Tensor) else np.shape(t) for t in tensors])


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    bias = a.dims != b.dims
    if bias and not (b.data.ndim == 1 and a.data.ndim >= 1 and b.dims[0] == a.dims[-1]):
        raise _dims_error("add", "operands must match or be (…, C) + (C,)", a, b)
    check_finite("add", a.data, b.data)
    lead = tuple(range(a.data.ndim - 1))

    def vjp(g):
        return g, (g.sum(axis=lead) if bias else g)

    return record("add", a.data + b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.dims != b.dims:
        raise _dims_error("mul", "operands must have identical dims", a, b)
    check_finite("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return g * bd, g * ad

    return record("mul", ad * bd, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    check_finite("scale", x.data)

    def vjp(g):
        return (g * c,)

    return record("scale", x.data * x.data.dtype.type(c), (x,), vjp)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    check_finite("relu", x.data)
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return record("relu", x.data * mask, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    check_finite("sigmoid", x.data)
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)

    def vjp(g):
        return (g * y * (1 - y),)

    return record("sigmoid", y, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    check_finite("softmax", x.data)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise _dims_error("softmax", f"axis {axis} out of range", x)
    y = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (x,), vjp)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    check_finite("sum", x.data)
    shape, dtype = x.dims, x.dtype

    def vjp(g):
        return (np.broadcast_to(g.reshape(()), shape).astype(dtype),)

    return record("sum", np.asarray(x.data.sum(), dtype=dtype), (x,), vjp)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element."""
    pred, target = as_tensor(pred), as_tensor(target, dtype=as_tensor(pred).dtype)
    if pred.dims != target.dims:
        raise _dims_error("mse_loss", "prediction and target dims differ", pred, target)
    check_finite("mse_loss", pred.data, target.data)
    diff = pred.data - target.data
    n = diff.size

    def vjp(g):
        d = diff * (2.0 * g.reshape(()) / n)
        return d, -d

    loss = np.asarray(np.mean(diff * diff), dtype=pred.dtype)
    return record("mse_loss", loss, (pred, target), vjp)


# ---------------------------------------------------------------------------
# structural


def reshape(x: Tensor, dims: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    dims = tuple(dims)
    try:
        y = x.data.reshape(dims)
    except ValueError:
        raise _dims_error("reshape", f"cannot reshape to {dims}", x) from None
    shape = x.dims

    def vjp(g):
        return (g.reshape(shape),)

    return record("reshape", y, (x,), vjp)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(a % x.data.ndim for a in axes) != list(range(x.data.ndim)):
        raise _dims_error("transpose", f"bad axes {axes}", x)
    inverse = tuple(np.argsort([a % x.data.ndim for a in axes]))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return record("transpose", np.ascontiguousarray(np.transpose(x.data, axes)), (x,), vjp)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0 or idx.min() < 0 or idx.max() >= x.dims[axis]:
        raise _dims_error("take", f"indices out of range for axis {axis}", x)
    shape = x.dims
    ax = axis % x.data.ndim
    contiguous = bool(np.all(np.diff(idx) == 1))

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        if contiguous:
            sl = [slice(None)] * len(shape)
            sl[ax] = slice(int(idx[0]), int(idx[-1]) + 1)
            out[tuple(sl)] = g
        else:
            np.add.at(out, (slice(None),) * ax + (idx,), g)
        return (out,)

    return record("take", np.take(x.data, idx, axis=ax), (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join along the channel (last) axis by default."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat", "nothing to concatenate")
    ref = tensors[0].dims
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.dims) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.dims, ref)) if i != ax):
            raise _dims_error("concat", f"dims must agree except on axis {axis}", *tensors)
    for t in tensors:
        check_finite("concat", t.data)
    splits = np.cumsum([t.dims[ax] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return record("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(…, n, k) @ (…, k, m)`` with equal leading dims, or ``(…, n, k) @ (k, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise _dims_error("matmul", "inner dims differ", a, b)
    shared = bd.ndim == 2
    if not shared and ad.shape[:-2] != bd.shape[:-2]:
        raise _dims_error("matmul", "leading dims differ", a, b)
    check_finite("matmul", ad, bd)

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return record("matmul", ad @ bd, (a, b), vjp)


_ATTENTION_ROWS = 128


def attention(q: Tensor, k: Tensor, v: Tensor, scale_by: float) -> Tensor:
    """``softmax(scale_by * q kᵀ) v`` over the key axis, as one fused op.

    Query rows are processed in blocks so each slice of the ``T × T`` weight
    matrix stays cache-sized. Only per-row maxima and normalisers are kept;
    the backward pass recomputes each weight block instead of storing it.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    qd, kd, vd = q.data, k.data, v.data
    if qd.ndim < 2 or qd.shape != kd.shape or kd.shape[:-1] != vd.shape[:-1]:
        raise _dims_error("attention", "q and k must match; v must share their length", q, k, v)
    check_finite("attention", qd, kd, vd)
    lead, t = qd.shape[:-2], qd.shape[-2]
    c = qd.dtype.type(scale_by)
    q3 = (qd * c).reshape((-1,) + qd.shape[-2:])
    k3 = kd.reshape((-1,) + kd.shape[-2:])
    v3 = vd.reshape((-1,) + vd.shape[-2:])
    out = np.empty(v3.shape, dtype=np.result_type(qd, vd))
    row_max = np.empty(q3.shape[:-1] + (1,), dtype=qd.dtype)
    row_sum = np.empty_like(row_max)
    buf = np.empty((min(_ATTENTION_ROWS, t), t), dtype=qd.dtype)
    for n in range(q3.shape[0]):
        kt = np.ascontiguousarray(k3[n].T)
        for i in range(0, t, _ATTENTION_ROWS):
            j = min(i + _ATTENTION_ROWS, t)
            p = buf[:j - i]
            np.matmul(q3[n, i:j], kt, out=p)
            m = p.max(axis=1, keepdims=True)
            p -= m
            np.exp(p, out=p)
            r = p.sum(axis=1, keepdims=True)
            np.matmul(p, v3[n], out=out[n, i:j])
            out[n, i:j] /= r
            row_max[n, i:j] = m
            row_sum[n, i:j] = r

    def vjp(g):
        g3 = g.reshape(out.shape)
        gq = np.empty_like(q3)
        gk = np.zeros_like(k3)
        gv = np.zeros_like(v3)
        e_buf = np.empty_like(buf)
        w_buf = np.empty_like(buf)
        for n in range(q3.shape[0]):
            kt = np.ascontiguousarray(k3[n].T)
            vt = np.ascontiguousarray(v3[n].T)
            gr = g3[n] / row_sum[n]
            # Σ_j w_ij (g_i · v_j) = g_i · out_i
            rowdot = np.einsum("ij,ij->i", g3[n], out[n])[:, None] / row_sum[n]
            for i in range(0, t, _ATTENTION_ROWS):
                j = min(i + _ATTENTION_ROWS, t)
                e, gw = e_buf[:j - i], w_buf[:j - i]
                np.matmul(q3[n, i:j], kt, out=e)
                e -= row_max[n, i:j]
                np.exp(e, out=e)
                gv[n] += e.T @ gr[i:j]
                np.matmul(gr[i:j], vt, out=gw)
                gw -= rowdot[i:j]
                gw *= e
                gq[n, i:j] = gw @ k3[n]
                gk[n] += gw.T @ q3[n, i:j]
        gq *= c
        return gq.reshape(qd.shape), gk.reshape(kd.shape), gv.reshape(vd.shape)

    return record("attention", out.reshape(lead + (t, vd.shape[-1])), (q, k, v), vjp)


# ---------------------------------------------------------------------------
# convolutions


def conv_output_length(length: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-length // stride)
    return (length - kernel) // stride + 1


def _pad_amounts(length: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = conv_output_length(length, kernel, stride, padding)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


def conv1d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: str = "same",
    pad_mode: str = "zeros",
) -> Tensor:
    """1-D convolution over the time axis of ``(…, T, C_in)``.

    ``pad_mode="edge"`` pads same-mode convolutions by repeating the first and
    last frames instead of zeros, so a constant sequence stays constant.
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    if padding not in ("same", "valid") or pad_mode not in ("zeros", "edge"):
        raise DimensionError("conv1d", f"unknown padding {padding!r}/{pad_mode!r}")
    if xd.ndim < 2 or wd.ndim != 3 or xd.shape[-1] != wd.shape[1] or stride < 1:
        raise _dims_error("conv1d", "expected x (…, T, C_in) and w (K, C_in, C_out)", x, w)
    if b is not None:
        b = as_tensor(b)
        if b.dims != (wd.shape[2],):
            raise _dims_error("conv1d", "bias must be (C_out,)", w, b)
    length = xd.shape[-2]
    kernel, cin, cout = wd.shape
    out_len = conv_output_length(length, kernel, stride, padding)
    if out_len < 1:
        raise _dims_error("conv1d", f"input length {length} shorter than kernel {kernel}", x, w)
    check_finite("conv1d", xd, wd)
    left, right = _pad_amounts(length, kernel, stride, padding)
    lead = xd.shape[:-2]
    if left or right:
        xp = np.zeros(lead + (length + left + right, cin), dtype=xd.dtype)
        xp[..., left:left + length, :] = xd
        if pad_mode == "edge":
            xp[..., :left, :] = xd[..., :1, :]
            xp[..., left + length:, :] = xd[..., -1:, :]
    else:
        xp = xd
    span = stride * (out_len - 1) + 1
    y = np.zeros(lead + (out_len, cout), dtype=xd.dtype)
    for j in range(kernel):
        y += xp[..., j:j + span:stride, :] @ wd[j]
    if b is not None:
        check_finite("conv1d", b.data)
        y += b.data

    def vjp(g):
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        g2 = g.reshape(-1, cout)
        for j in range(kernel):
            xs = xp[..., j:j + span:stride, :]
            gw[j] = xs.reshape(-1, cin).T @ g2
            gxp[..., j:j + span:stride, :] += g @ wd[j].T
        gx = gxp[..., left:left + length, :].copy()
        if pad_mode == "edge" and (left or right):
            gx[..., :1, :] += gxp[..., :left, :].sum(axis=-2, keepdims=True)
            gx[..., -1:, :] += gxp[..., left + length:, :].sum(axis=-2, keepdims=True)
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return record("conv1d", y, parents, vjp)


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Transposed 1-D convolution with stride equal to the kernel length.

    Each input step ``t`` writes the ``K`` output steps ``t*K … t*K+K-1``, so
    the windows never overlap and ``T`` maps to ``T * K``.
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    if xd.ndim < 2 or wd.ndim != 3 or xd.shape[-1] != wd.shape[1]:
        raise _dims_error("conv_transpose1d", "expected x (…, T, C_in) and w (K, C_in, C_out)", x, w)
    if b is not None:
        b = as_tensor(b)
        if b.dims != (wd.shape[2],):
            raise _dims_error("conv_transpose1d", "bias must be (C_out,)", w, b)
    check_finite("conv_transpose1d", xd, wd)
    kernel, cin, cout = wd.shape
    lead, length = xd.shape[:-2], xd.shape[-2]
    wm = np.ascontiguousarray(wd.transpose(1, 0, 2)).reshape(cin, kernel * cout)
    y = (xd @ wm).reshape(lead + (length * kernel, cout))
    if b is not None:
        check_finite("conv_transpose1d", b.data)
        y += b.data

    def vjp(g):
        gr = g.reshape(lead + (length, kernel * cout))
        gx = gr @ wm.T
        gwm = xd.reshape(-1, cin).T @ gr.reshape(-1, kernel * cout)
        gw = gwm.reshape(cin, kernel, cout).transpose(1, 0, 2)
        gb = g.reshape(-1, cout).sum(axis=0) if b is not None else None
        return gx, np.ascontiguousarray(gw), gb

    parents = (x, w) if b is None else (x, w, b)
    return record("conv_transpose1d", y, parents, vjp)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1, same-padded 2-D convolution over the ``(F, T)`` plane."""
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    if xd.ndim < 3 or wd.ndim != 4 or xd.shape[-1] != wd.shape[2]:
        raise _dims_error("conv2d", "expected x (…, F, T, C_in) and w (K_F, K_T, C_in, C_out)", x, w)
    if b is not None:
        b = as_tensor(b)
        if b.dims != (wd.shape[3],):
            raise _dims_error("conv2d", "bias must be (C_out,)", w, b)
    check_finite("conv2d", xd, wd)
    kf, kt, cin, cout = wd.shape
    lead = xd.shape[:-3]
    nf, nt = xd.shape[-3], xd.shape[-2]
    pf, pt = _pad_amounts(nf, kf, 1, "same"), _pad_amounts(nt, kt, 1, "same")
    xp = np.zeros(lead + (nf + kf - 1, nt + kt - 1, cin), dtype=xd.dtype)
    xp[..., pf[0]:pf[0] + nf, pt[0]:pt[0] + nt, :] = xd
    taps = [(i, j) for i in range(kf) for j in range(kt)]
    # im2col: every tap's shifted view side by side, then one matmul
    cols = np.empty(lead + (nf, nt, len(taps) * cin), dtype=xd.dtype)
    for n, (i, j) in enumerate(taps):
        cols[..., n * cin:(n + 1) * cin] = xp[..., i:i + nf, j:j + nt, :]
    wm = wd.reshape(kf * kt * cin, cout)
    y = cols @ wm
    if b is not None:
        check_finite("conv2d", b.data)
        y += b.data

    def vjp(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.reshape(-1, wm.shape[0]).T @ g2).reshape(wd.shape)
        gcols = g @ wm.T
        gxp = np.zeros_like(xp)
        for n, (i, j) in enumerate(taps):
            gxp[..., i:i + nf, j:j + nt, :] += gcols[..., n * cin:(n + 1) * cin]
        gx = gxp[..., pf[0]:pf[0] + nf, pt[0]:pt[0] + nt, :]
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return record("conv2d", y, parents, vjp)


def avg_pool2d(x: Tensor, pool: tuple[int, int]) -> Tensor:
    """Non-overlapping average pooling over ``(F, T)``; sizes must divide evenly."""
    x = as_tensor(x)
    xd = x.data
    pf, pt = pool
    if xd.ndim < 3 or xd.shape[-3] % pf or xd.shape[-2] % pt:
        raise _dims_error("avg_pool2d", f"plane not divisible by pool {pool}", x)
    check_finite("avg_pool2d", xd)
    lead = xd.shape[:-3]
    nf, nt, c = xd.shape[-3:]
    blocks = xd.reshape(lead + (nf // pf, pf, nt // pt, pt, c))
    y = blocks.mean(axis=(-4, -2))
    n = pf * pt

    def vjp(g):
        gx = np.broadcast_to(g[..., :, None, :, None, :] / n, blocks.shape)
        return (np.ascontiguousarray(gx).reshape(xd.shape),)

    return record("avg_pool2d", y.astype(xd.dtype, copy=False), (x,), vjp)
