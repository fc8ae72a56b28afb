"""Pure numpy kernels for same-padded dilated 1-D convolution and width-2
max pooling.

Convolutions are evaluated as one GEMM per kernel tap on a channels-last
copy of the input, which keeps every matmul dense and BLAS-friendly. These
are the fallback (and large-problem) implementations; `sleepset.kernels`
routes small-channel problems to the compiled twins in `_native` when that
extension is available.

Array layout is channels-first everywhere at the interface:
    x: (batch, c_in, length)   w: (c_out, c_in, kernel)   y: (batch, c_out, length)
Kernel widths are odd and padding is symmetric zeros, so length is preserved.
"""

import numpy as np


def _pad_amount(kernel: int, dilation: int) -> int:
    return (kernel - 1) // 2 * dilation


def conv1d_forward(x, w, b, dilation):
    batch, c_in, length = x.shape
    c_out, _, kernel = w.shape
    pad = _pad_amount(kernel, dilation)
    xp = np.zeros((batch, length + 2 * pad, c_in), dtype=x.dtype)
    xp[:, pad:pad + length, :] = x.transpose(0, 2, 1)
    y = np.empty((batch, length, c_out), dtype=x.dtype)
    y[:] = b
    for t in range(kernel):
        off = t * dilation
        y += xp[:, off:off + length, :] @ w[:, :, t].T
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def conv1d_backward_input(gy, w, dilation):
    batch, c_out, length = gy.shape
    _, c_in, kernel = w.shape
    pad = _pad_amount(kernel, dilation)
    gy_ls = gy.transpose(0, 2, 1)
    gxp = np.zeros((batch, length + 2 * pad, c_in), dtype=gy.dtype)
    for t in range(kernel):
        off = t * dilation
        gxp[:, off:off + length, :] += gy_ls @ w[:, :, t]
    return np.ascontiguousarray(gxp[:, pad:pad + length, :].transpose(0, 2, 1))


def conv1d_backward_weights(gy, x, kernel, dilation):
    batch, c_in, length = x.shape
    pad = _pad_amount(kernel, dilation)
    xp = np.zeros((batch, length + 2 * pad, c_in), dtype=x.dtype)
    xp[:, pad:pad + length, :] = x.transpose(0, 2, 1)
    gy_ls = gy.transpose(0, 2, 1)
    c_out = gy.shape[1]
    gw = np.empty((c_out, c_in, kernel), dtype=gy.dtype)
    for t in range(kernel):
        off = t * dilation
        gw[:, :, t] = np.tensordot(gy_ls, xp[:, off:off + length, :],
                                   axes=([0, 1], [0, 1]))
    gb = gy.sum(axis=(0, 2))
    return gw, gb


def maxpool2_forward(x):
    """Width-2 stride-2 max pool. Returns (pooled, argmax) where argmax is the
    0/1 within-window winner index, first index on ties."""
    batch, channels, length = x.shape
    pairs = x.reshape(batch, channels, length // 2, 2)
    # ">=" keeps the first element on ties
    first_wins = pairs[..., 0] >= pairs[..., 1]
    idx = np.where(first_wins, 0, 1).astype(np.int8)
    y = np.where(first_wins, pairs[..., 0], pairs[..., 1])
    return y, idx


def maxpool2_backward(gy, idx):
    batch, channels, half = gy.shape
    gx = np.zeros((batch, channels, half, 2), dtype=gy.dtype)
    sel = idx.astype(np.int64)
    b_ix, c_ix, l_ix = np.ogrid[:batch, :channels, :half]
    gx[b_ix, c_ix, l_ix, sel] = gy
    return gx.reshape(batch, channels, half * 2)
