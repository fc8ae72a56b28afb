"""Neural network operations on `Tensor`.

Convolution and pooling delegate to the kernel backend (compiled when
available); everything else is composed from tensor primitives so gradients
fall out of the graph.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf as _np_erf

from . import kernels
from .errors import NumericalError, ShapeError
from .tensor import (Tensor, _make, _unbroadcast,
                     stack)  # noqa: F401 (stack re-exported)

MASK_NEG = -1e9  # stands in for -inf before softmax; exp underflows to exact 0


@dataclass(frozen=True)
class AttentionMask:
    """Boolean (queries x keys) matrix; True means the query may attend."""
    allowed: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.allowed, dtype=bool)
        object.__setattr__(self, "allowed", arr)
        if arr.ndim != 2:
            raise ShapeError("attention mask must be 2-D (queries x keys)")
        if not arr.any(axis=-1).all():
            raise ShapeError("attention mask has a fully-masked query row")


def conv1d(x, w, b, dilation=1):
    """Same-padded dilated convolution: (B, Cin, L) -> (B, Cout, L)."""
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D input/weights, "
                         f"got {x.shape} and {w.shape}")
    batch, c_in, length = x.shape
    c_out, w_cin, kernel = w.shape
    if w_cin != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {c_in} "
                         f"channels, weights expect {w_cin}")
    if kernel % 2 == 0:
        raise ShapeError(f"conv1d kernel width must be odd, got {kernel}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv1d bias shape {b.shape} != ({c_out},)")
    if (kernel - 1) * dilation + 1 > length:
        raise ShapeError(f"conv1d kernel span {(kernel - 1) * dilation + 1} "
                         f"exceeds input length {length}")
    data = kernels.conv1d_forward(x.data, w.data, b.data, dilation)

    def bw(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accumulate(kernels.conv1d_backward_input(g, w.data, dilation),
                          own=True)
        if w.requires_grad or b.requires_grad:
            gw, gb = kernels.conv1d_backward_weights(g, x.data, kernel,
                                                     dilation)
            if w.requires_grad:
                w._accumulate(gw, own=True)
            if b.requires_grad:
                b._accumulate(gb, own=True)

    return _make(data, (x, w, b), bw)


# When set to a list, maxpool1d appends each call's smallest window gap.
# Gradient checks use this to verify the check point is safely away from
# argmax ties (finite differences are invalid across them).
_pool_gap_trace = None


def maxpool1d(x):
    """Width-2, stride-2 max pool; gradient goes to the first argmax on ties."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects (batch, channels, length), "
                         f"got {x.shape}")
    if x.shape[-1] % 2:
        raise ShapeError(f"maxpool1d needs an even length, got {x.shape[-1]}")
    if _pool_gap_trace is not None:
        pairs = x.data.reshape(*x.shape[:-1], -1, 2)
        _pool_gap_trace.append(float(np.abs(pairs[..., 0] -
                                            pairs[..., 1]).min()))
    data, idx = kernels.maxpool2_forward(x.data)

    def bw(g):
        x._accumulate(kernels.maxpool2_backward(np.ascontiguousarray(g), idx),
                      own=True)

    return _make(data, (x,), bw)


def affine(x, w, b):
    """x @ w + b over the trailing dimension: (..., d_in) -> (..., d_out)."""
    if w.ndim != 2:
        raise ShapeError(f"affine weights must be 2-D, got {w.shape}")
    d_in, d_out = w.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"affine input dim {x.shape[-1]} != weights d_in "
                         f"{d_in}")
    if b.shape != (d_out,):
        raise ShapeError(f"affine bias shape {b.shape} != ({d_out},)")
    if x.ndim == 1:
        return (x.reshape(1, d_in) @ w + b).reshape(d_out)
    return x @ w + b


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact-CDF GELU: x * Phi(x). Single node; d/dx = Phi(x) + x*phi(x)."""
    cdf = 0.5 * (1.0 + _np_erf(x.data * _INV_SQRT2))
    data = (x.data * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        x._accumulate(g * (cdf + x.data * pdf), own=True)

    return _make(data, (x,), bw)


def dropout(x, rate, rng=None, training=False):
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    draws = rng.random(x.shape, dtype=x.dtype.type)
    scale = (draws >= rate).astype(x.dtype)
    scale *= 1.0 / (1.0 - rate)
    return x * Tensor(scale)


def _normalize(x, gain, bias, gain_shape, axis, eps):
    """Zero-mean/unit-variance over `axis` with optional affine, fused into
    one node: for y0 = (x - mu)/sigma and dy = g * gain,
    dx = (dy - mean(dy) - y0 * mean(dy * y0)) / sigma."""
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=axis, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    y0 = centered
    y0 *= inv_sigma
    if gain is None:
        data = y0
        parents = (x,)
    else:
        gain_b = gain.data.reshape(gain_shape)
        data = y0 * gain_b + bias.data.reshape(gain_shape)
        parents = (x, gain, bias)

    def bw(g):
        if gain is not None:
            if gain.requires_grad:
                gain._accumulate(
                    _unbroadcast(g * y0, gain_shape).reshape(gain.shape))
            if bias.requires_grad:
                bias._accumulate(
                    _unbroadcast(g, gain_shape).reshape(bias.shape))
            dy = g * gain_b
        else:
            dy = g
        if x.requires_grad:
            gm = dy.mean(axis=axis, keepdims=True)
            gym = (dy * y0).mean(axis=axis, keepdims=True)
            x._accumulate((dy - gm - y0 * gym) * inv_sigma, own=True)

    return _make(data, parents, bw)


def instance_norm(x, gain=None, bias=None, eps=1e-5):
    """Normalize each (batch, channel) slice over time to zero mean/unit var."""
    if x.ndim != 3:
        raise ShapeError(f"instance_norm expects (batch, channels, length), "
                         f"got {x.shape}")
    return _normalize(x, gain, bias, (1, x.shape[1], 1), -1, eps)


def layer_norm(x, gain=None, bias=None, eps=1e-5):
    """Normalize the trailing feature dimension to zero mean/unit var."""
    return _normalize(x, gain, bias, (x.shape[-1],), -1, eps)


def softmax(x, axis=-1):
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    shifted = x - shift
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def masked_multi_head_attention(queries, keys, values, heads, mask, params):
    """Scaled dot-product attention over the last two axes.

    queries/keys/values: (..., tokens, d) with matching leading dims. `mask`
    is an AttentionMask, a broadcastable boolean array (..., tq, tk), or None
    for all-allowed. Masked keys get exactly zero attention weight, so their
    values cannot leak into any output. `params` holds the projections
    wq/bq/wk/bk/wv/bv/wo/bo.
    """
    d = queries.shape[-1]
    if d % heads:
        raise ShapeError(f"model dim {d} not divisible by {heads} heads")
    head_dim = d // heads

    q = affine(queries, params["wq"], params["bq"])
    k = affine(keys, params["wk"], params["bk"])
    v = affine(values, params["wv"], params["bv"])

    lead = q.shape[:-2]
    n_lead = len(lead)
    tq, tk = q.shape[-2], k.shape[-2]

    def split(t, tokens):
        t = t.reshape(*lead, tokens, heads, head_dim)
        axes = (*range(n_lead), n_lead + 1, n_lead, n_lead + 2)
        return t.transpose(*axes)  # (..., heads, tokens, head_dim)

    qh, kh, vh = split(q, tq), split(k, tk), split(v, tk)
    scores = (qh @ kh.transpose(*range(n_lead), n_lead, n_lead + 2,
                                n_lead + 1)) * (1.0 / math.sqrt(head_dim))

    if mask is not None:
        allowed = mask.allowed if isinstance(mask, AttentionMask) else \
            np.asarray(mask, dtype=bool)
        allowed = np.broadcast_to(allowed, (*lead, tq, tk))
        if not allowed.any(axis=-1).all():
            raise ShapeError("attention mask has a fully-masked query row")
        # blend instead of add so masked scores are exactly MASK_NEG no
        # matter what garbage sits in the padded keys
        keep = allowed.astype(scores.dtype)[..., None, :, :]
        scores = scores * Tensor(keep) + Tensor(
            (1.0 - keep) * np.asarray(MASK_NEG, dtype=scores.dtype))

    attn = softmax(scores, axis=-1)
    mixed = attn @ vh  # (..., heads, tq, head_dim)
    axes = (*range(n_lead), n_lead + 1, n_lead, n_lead + 2)
    merged = mixed.transpose(*axes).reshape(*lead, tq, d)
    return affine(merged, params["wo"], params["bo"])


def softmax_cross_entropy(logits, onehot, keep=None):
    """Sum over kept rows of -log p at the true class.

    logits/onehot: (..., classes); keep: boolean (...) selecting rows that
    contribute (True = counted). Rows with keep == False contribute exactly
    zero. Returns a scalar tensor.
    """
    if isinstance(onehot, Tensor):
        onehot = onehot.data
    if isinstance(keep, Tensor):
        keep = keep.data
    if not np.isfinite(logits.data).all():
        raise NumericalError("non-finite logits in cross entropy")
    if logits.shape != np.shape(onehot):
        raise ShapeError(f"logits shape {logits.shape} != labels shape "
                         f"{np.shape(onehot)}")
    weight = np.asarray(onehot, dtype=logits.dtype)
    if keep is not None:
        weight = weight * np.asarray(keep, dtype=logits.dtype)[..., None]
    lp = log_softmax(logits, axis=-1)
    return -(lp * Tensor(weight)).sum()
