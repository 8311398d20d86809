"""Differentiable operations: arithmetic, convolutions, pooling, normalization.

Convolutions use the cross-correlation convention (no kernel flip) and are
computed tap by tap: for every kernel offset a (channels_out, channels_in)
matrix product is applied to a strided slice of the padded input.  The tap
loop has a fixed order and the reduction over input channels has a fixed
length, so a given output position always accumulates in the same order no
matter how long the input is.  conv1d goes through ``np.einsum`` instead of
BLAS so that this holds bit-exactly; temporal shift equivariance away from
the boundaries is therefore exact, not approximate.

Reductions (sums, means, normalization statistics) accumulate in float64 and
round once to float32 storage.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, ConfigurationError
from .tensor import Tensor, _result, DTYPE


def _triple(v, what):
    if np.isscalar(v):
        v = (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ConfigurationError(f"{what} must be an int or a 3-sequence, got {v!r}")
    return v


def _check_positive(v, what):
    if any(x < 1 for x in v):
        raise ConfigurationError(f"{what} components must be >= 1, got {v}")


AXIS_NAMES_3D = ("depth", "height", "width")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _coerce_const(other):
    """Non-tensor operands become plain float32 arrays (no gradient)."""
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=DTYPE))

def _binary_shapes(a, b, opname):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{opname}: operand shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = _coerce_const(a), _coerce_const(b)
    _binary_shapes(a, b, "add")
    out_data = a.data + b.data

    def rule(dy):
        if a.requires_grad:
            a._ensure_grad()
            a.grad += dy if a.shape == dy.shape else dy.sum(dtype=np.float64).astype(DTYPE)
        if b.requires_grad:
            b._ensure_grad()
            b.grad += dy if b.shape == dy.shape else dy.sum(dtype=np.float64).astype(DTYPE)

    return _result(out_data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _coerce_const(a), _coerce_const(b)
    _binary_shapes(a, b, "sub")
    out_data = a.data - b.data

    def rule(dy):
        if a.requires_grad:
            a._ensure_grad()
            a.grad += dy if a.shape == dy.shape else dy.sum(dtype=np.float64).astype(DTYPE)
        if b.requires_grad:
            b._ensure_grad()
            b.grad -= dy if b.shape == dy.shape else dy.sum(dtype=np.float64).astype(DTYPE)

    return _result(out_data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _coerce_const(a), _coerce_const(b)
    _binary_shapes(a, b, "mul")
    out_data = a.data * b.data

    def rule(dy):
        if a.requires_grad:
            a._ensure_grad()
            g = dy * b.data
            a.grad += g if a.shape == g.shape else g.sum(dtype=np.float64).astype(DTYPE)
        if b.requires_grad:
            b._ensure_grad()
            g = dy * a.data
            b.grad += g if b.shape == g.shape else g.sum(dtype=np.float64).astype(DTYPE)

    return _result(out_data, (a, b), rule)


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two equal-shape tensors (skip connection)."""
    if a.shape != b.shape:
        raise ShapeError(f"residual_add: shapes {a.shape} and {b.shape} differ")
    return add(a, b)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, accumulated in float64, stored as a scalar."""
    out_data = np.asarray(x.data.sum(dtype=np.float64), dtype=DTYPE)

    def rule(dy):
        if x.requires_grad:
            x._ensure_grad()
            x.grad += dy.reshape(())

    return _result(out_data, (x,), rule)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out_data = x.data.reshape(shape)

    def rule(dy):
        if x.requires_grad:
            x._ensure_grad()
            x.grad += dy.reshape(x.shape)

    return _result(out_data, (x,), rule)


def stack_columns(columns) -> Tensor:
    """Stack T equal-length vectors into a (C, T) matrix."""
    columns = list(columns)
    if not columns:
        raise ShapeError("stack_columns: need at least one column")
    n = columns[0].size
    for c in columns:
        if c.ndim != 1 or c.size != n:
            raise ShapeError("stack_columns: all columns must be 1-d with equal length")
    out_data = np.stack([c.data for c in columns], axis=1)

    def rule(dy):
        for t, c in enumerate(columns):
            if c.requires_grad:
                c._ensure_grad()
                c.grad += dy[:, t]

    return _result(out_data, tuple(columns), rule)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """(M,N) @ (N,) matrix-vector product with float64 accumulation."""
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.size:
        raise ShapeError(f"matvec: incompatible shapes {w.shape} and {x.shape}")
    out_data = (w.data.astype(np.float64) @ x.data.astype(np.float64)).astype(DTYPE)

    def rule(dy):
        dy64 = dy.astype(np.float64)
        if w.requires_grad:
            w._ensure_grad()
            w.grad += np.outer(dy64, x.data).astype(DTYPE)
        if x.requires_grad:
            x._ensure_grad()
            x.grad += (w.data.astype(np.float64).T @ dy64).astype(DTYPE)

    return _result(out_data, (w, x), rule)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def rule(dy):
        if x.requires_grad:
            x._ensure_grad()
            x.grad += dy * (x.data > 0)

    return _result(out_data, (x,), rule)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias to a (C, ...) tensor."""
    if bias.ndim != 1 or bias.size != x.shape[0]:
        raise ShapeError(f"bias shape {bias.shape} does not match channel count {x.shape[0]}")
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    out_data = x.data + bias.data[expand]

    def rule(dy):
        if x.requires_grad:
            x._ensure_grad()
            x.grad += dy
        if bias.requires_grad:
            bias._ensure_grad()
            axes = tuple(range(1, dy.ndim))
            bias.grad += dy.sum(axis=axes, dtype=np.float64).astype(DTYPE)

    return _result(out_data, (x, bias), rule)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def instance_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel zero-mean unit-variance normalization with affine output.

    Statistics run over all non-channel axes of a single sample; each channel
    needs at least 2 elements.
    """
    if x.ndim < 2:
        raise ShapeError(f"instance_norm expects (C, ...) input, got shape {x.shape}")
    c = x.shape[0]
    n = int(np.prod(x.shape[1:]))
    if n < 2:
        raise ShapeError(f"instance_norm needs >= 2 elements per channel, got {n}")
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"affine parameters must have shape ({c},)")

    axes = tuple(range(1, x.ndim))
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    # statistics accumulate in float64; the elementwise math stays in storage
    # precision
    flat = x.data.reshape(c, -1)
    mean = flat.mean(axis=1, dtype=np.float64)
    sq_mean = np.einsum("cn,cn->c", flat.astype(np.float64), flat) / n
    var = sq_mean - mean * mean
    inv_std = (1.0 / np.sqrt(var + eps)).astype(DTYPE)
    xhat = (x.data - mean.astype(DTYPE)[expand]) * inv_std[expand]
    out_data = xhat * scale.data[expand] + shift.data[expand]

    def rule(dy):
        xhat_flat = xhat.reshape(c, -1)
        if scale.requires_grad:
            scale._ensure_grad()
            scale.grad += np.einsum("cn,cn->c", dy.reshape(c, -1).astype(np.float64),
                                    xhat_flat).astype(DTYPE)
        if shift.requires_grad:
            shift._ensure_grad()
            shift.grad += dy.sum(axis=axes, dtype=np.float64).astype(DTYPE)
        if x.requires_grad:
            x._ensure_grad()
            g = dy * scale.data[expand]
            g_mean = g.mean(axis=axes, dtype=np.float64).astype(DTYPE)
            gx_mean = (np.einsum("cn,cn->c", g.reshape(c, -1).astype(np.float64),
                                 xhat_flat) / n).astype(DTYPE)
            x.grad += inv_std[expand] * (g - g_mean[expand] - xhat * gx_mean[expand])

    return _result(out_data, (x, scale, shift), rule)


# ---------------------------------------------------------------------------
# 3D convolution (cross-correlation) and pooling
# ---------------------------------------------------------------------------

def _im2col3d(xp, ksz, stride, out_shape):
    """Unfold padded (C,Dp,Hp,Wp) into channel-major (C*kd*kh*kw, P) columns."""
    view = np.lib.stride_tricks.sliding_window_view(xp, ksz, axis=(1, 2, 3))
    view = view[:, ::stride[0], ::stride[1], ::stride[2]]
    c = xp.shape[0]
    return view.transpose(0, 4, 5, 6, 1, 2, 3).reshape(
        c * int(np.prod(ksz)), int(np.prod(out_shape)))


def _corr3d_raw(xp, w, stride, out_shape):
    """Correlate a padded input with a (C_out,C_in,kd,kh,kw) kernel via one GEMM.

    Runs at storage precision: the per-position inner products go through
    BLAS sgemm, which is deterministic for fixed shapes and thread count.
    """
    c_out = w.shape[0]
    cols = _im2col3d(xp, w.shape[2:], stride, out_shape)
    y = w.reshape(c_out, -1) @ cols
    return y.reshape((c_out,) + tuple(out_shape))


def conv3d(x: Tensor, kernel: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """3D cross-correlation of (C_in,D,H,W) with (C_out,C_in,kd,kh,kw).

    Output extents follow ``floor((size + 2*pad - k) / stride) + 1`` with zero
    padding.
    """
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    _check_positive(stride, "stride")
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be (C,D,H,W), got shape {x.shape}")
    if kernel.ndim != 5:
        raise ShapeError(f"conv3d kernel must be (C_out,C_in,kd,kh,kw), got shape {kernel.shape}")
    c_out, c_in, kd, kh, kw = kernel.shape
    if c_in != x.shape[0]:
        raise ShapeError(f"conv3d: kernel expects {c_in} input channels, input has {x.shape[0]}")

    ksz = (kd, kh, kw)
    out_shape = []
    for axis, (size, k, s, p) in enumerate(zip(x.shape[1:], ksz, stride, padding)):
        padded = size + 2 * p
        if k > padded:
            raise ShapeError(
                f"conv3d: kernel {k} exceeds padded input {padded} on the "
                f"{AXIS_NAMES_3D[axis]} axis")
        out_shape.append((padded - k) // s + 1)
    out_shape = tuple(out_shape)

    pad_spec = ((0, 0),) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad_spec)
    out_data = _corr3d_raw(xp, kernel.data, stride, out_shape)

    def rule(dy):
        if kernel.requires_grad:
            kernel._ensure_grad()
            cols = _im2col3d(xp, ksz, stride, out_shape)
            dw = (dy.reshape(c_out, -1) @ cols.T).reshape(kernel.shape)
            kernel.grad += dw
        if x.requires_grad:
            x._ensure_grad()
            x.grad += _conv3d_input_grad(dy, kernel.data, stride, padding,
                                         x.shape[1:], out_shape)

    return _result(out_data, (x, kernel), rule)


def _conv3d_input_grad(dy, w, stride, padding, in_shape, out_shape):
    """Gradient w.r.t. the convolution input.

    Equivalent to a transposed convolution: dy is dilated by the stride,
    padded by (k-1-p) plus the right-edge remainder, and correlated with the
    channel-transposed, spatially flipped kernel.
    """
    c_out, c_in = w.shape[:2]
    ksz = w.shape[2:]
    dil_shape = tuple((o - 1) * s + 1 for o, s in zip(out_shape, stride))
    if dil_shape == tuple(out_shape):
        dy_dil = dy
    else:
        dy_dil = np.zeros((c_out,) + dil_shape, dtype=dy.dtype)
        dy_dil[(slice(None),) + tuple(slice(None, None, s) for s in stride)] = dy
    pad_spec = ((0, 0),)
    for size, k, s, p in zip(in_shape, ksz, stride, padding):
        remainder = (size + 2 * p - k) % s
        pad_spec += ((k - 1, k - 1 + remainder),)
    z = np.pad(dy_dil, pad_spec)
    wt = w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
    padded_in = tuple(size + 2 * p for size, p in zip(in_shape, padding))
    dxp = _corr3d_raw(z, np.ascontiguousarray(wt), (1, 1, 1), padded_in)
    crop = (slice(None),) + tuple(slice(p, p + size)
                                  for p, size in zip(padding, in_shape))
    return dxp[crop]


def maxpool3d(x: Tensor, window=(2, 2, 2), stride=None) -> Tensor:
    """Max pooling over (C,D,H,W); gradient goes to the first argmax per window."""
    window = _triple(window, "window")
    if stride is None:
        stride = window
    stride = _triple(stride, "stride")
    _check_positive(window, "window")
    _check_positive(stride, "stride")
    if x.ndim != 4:
        raise ShapeError(f"maxpool3d input must be (C,D,H,W), got shape {x.shape}")
    for axis, (size, w) in enumerate(zip(x.shape[1:], window)):
        if w > size:
            raise ShapeError(
                f"maxpool3d: window {w} exceeds input {size} on the "
                f"{AXIS_NAMES_3D[axis]} axis")

    c = x.shape[0]
    out_shape = tuple((size - w) // s + 1
                      for size, w, s in zip(x.shape[1:], window, stride))
    view = np.lib.stride_tricks.sliding_window_view(x.data, window, axis=(1, 2, 3))
    view = view[:, ::stride[0], ::stride[1], ::stride[2]]
    wins = view.reshape((c,) + out_shape + (-1,))
    out_data = wins.max(axis=-1)
    argmax = wins.reshape(-1, wins.shape[-1]).argmax(axis=1)  # first max on ties

    def rule(dy):
        if not x.requires_grad:
            return
        x._ensure_grad()
        # linear index of every window's argmax inside the input array
        od, oh, ow = out_shape
        wd, wh, ww = window
        grid = np.indices((c, od, oh, ow)).reshape(4, -1)
        ud, rem = np.divmod(argmax, wh * ww)
        uh, uw = np.divmod(rem, ww)
        d_idx = grid[1] * stride[0] + ud
        h_idx = grid[2] * stride[1] + uh
        w_idx = grid[3] * stride[2] + uw
        _, dd, hh, ws = x.shape
        lin = ((grid[0] * dd + d_idx) * hh + h_idx) * ws + w_idx
        flat = np.zeros(x.size, dtype=np.float64)
        np.add.at(flat, lin, dy.ravel().astype(np.float64))
        x.grad += flat.reshape(x.shape).astype(DTYPE)

    return _result(out_data, (x,), rule)


def adaptive_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial positions of a (C,D,H,W) tensor, returning (C,)."""
    if x.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool input must be (C,D,H,W), got shape {x.shape}")
    n = int(np.prod(x.shape[1:]))
    if n < 1:
        raise ShapeError("adaptive_avg_pool: empty spatial extents")
    out_data = x.data.mean(axis=(1, 2, 3), dtype=np.float64).astype(DTYPE)

    def rule(dy):
        if x.requires_grad:
            x._ensure_grad()
            x.grad += (dy / n)[:, None, None, None]

    return _result(out_data, (x,), rule)


# ---------------------------------------------------------------------------
# 1D convolution
# ---------------------------------------------------------------------------

def same_padding(kernel_size: int) -> int:
    """Padding that preserves length at stride 1; requires an odd kernel."""
    if kernel_size % 2 == 0:
        raise ConfigurationError(
            f"same padding needs an odd kernel size, got {kernel_size}")
    return (kernel_size - 1) // 2


def conv1d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1D cross-correlation of (C_in,T) with (C_out,C_in,k).

    With stride 1 and padding (k-1)/2 for odd k the output length equals the
    input length for any T.
    """
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ConfigurationError(f"conv1d stride must be >= 1, got {stride}")
    if x.ndim != 2:
        raise ShapeError(f"conv1d input must be (C,T), got shape {x.shape}")
    if kernel.ndim != 3:
        raise ShapeError(f"conv1d kernel must be (C_out,C_in,k), got shape {kernel.shape}")
    c_out, c_in, k = kernel.shape
    if c_in != x.shape[0]:
        raise ShapeError(f"conv1d: kernel expects {c_in} input channels, input has {x.shape[0]}")
    t = x.shape[1]
    if k > t + 2 * padding:
        raise ShapeError(f"conv1d: kernel {k} exceeds padded length {t + 2 * padding}")
    t_out = (t + 2 * padding - k) // stride + 1

    xp = np.pad(x.data.astype(np.float64), ((0, 0), (padding, padding)))
    w64 = kernel.data.astype(np.float64)
    y = np.zeros((c_out, t_out), dtype=np.float64)
    for u in range(k):
        xs = xp[:, u: u + (t_out - 1) * stride + 1: stride]
        # einsum keeps each output position's accumulation order independent
        # of T, which makes interior shift equivariance bit-exact
        y += np.einsum("oc,ct->ot", w64[:, :, u], xs)
    out_data = y.astype(DTYPE)

    def rule(dy):
        dy64 = dy.astype(np.float64)
        if kernel.requires_grad:
            kernel._ensure_grad()
            dw = np.empty_like(w64)
            for u in range(k):
                xs = xp[:, u: u + (t_out - 1) * stride + 1: stride]
                dw[:, :, u] = np.einsum("ot,ct->oc", dy64, xs)
            kernel.grad += dw.astype(DTYPE)
        if x.requires_grad:
            x._ensure_grad()
            dxp = np.zeros_like(xp)
            for u in range(k):
                dxp[:, u: u + (t_out - 1) * stride + 1: stride] += np.einsum(
                    "oc,ot->ct", w64[:, :, u], dy64)
            x.grad += dxp[:, padding: padding + t].astype(DTYPE)

    return _result(out_data, (x, kernel), rule)
