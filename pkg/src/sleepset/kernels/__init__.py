"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always present. `SLEEPSET_KERNELS=python` forces the fallback, `=native`
forces the extension (import error if it is missing).

Even with the extension loaded, wide-channel convolutions are routed to the
GEMM-based numpy path: BLAS wins once the per-sample channel product gets
large. The crossover constant below comes from benchmarks/bench_kernels.py.
"""

import os

import numpy as np

from . import pyref

try:
    from . import _native
except ImportError:
    _native = None

_mode = os.environ.get("SLEEPSET_KERNELS", "auto").lower()
if _mode == "native" and _native is None:
    raise ImportError("SLEEPSET_KERNELS=native but sleepset.kernels._native "
                      "is not built")
if _mode == "python":
    _native = None

HAVE_NATIVE = _native is not None
BACKEND = "native" if HAVE_NATIVE else "python"

# Direct loops beat the per-tap GEMM formulation while the channel product
# stays small; wide layers go to BLAS. Weight gradients always use the GEMM
# path: its tensordot reduction is faster at every size we hit (see
# benchmarks/bench_kernels.py).
_NATIVE_MAX_CHANNEL_PRODUCT = 1024


def _native_ok(c_in, c_out):
    return HAVE_NATIVE and c_in * c_out <= _NATIVE_MAX_CHANNEL_PRODUCT


def _c(a):
    return np.ascontiguousarray(a)


def conv1d_forward(x, w, b, dilation):
    if _native_ok(x.shape[1], w.shape[0]):
        return _native.conv1d_forward(_c(x), _c(w), _c(b), dilation)
    return pyref.conv1d_forward(x, w, b, dilation)


def conv1d_backward_input(gy, w, dilation):
    if _native_ok(w.shape[1], w.shape[0]):
        return _native.conv1d_backward_input(_c(gy), _c(w), dilation)
    return pyref.conv1d_backward_input(gy, w, dilation)


def conv1d_backward_weights(gy, x, kernel, dilation):
    return pyref.conv1d_backward_weights(gy, x, kernel, dilation)


def maxpool2_forward(x):
    if HAVE_NATIVE:
        return _native.maxpool2_forward(_c(x))
    return pyref.maxpool2_forward(x)


def maxpool2_backward(gy, idx):
    if HAVE_NATIVE:
        return _native.maxpool2_backward(_c(gy), _c(idx))
    return pyref.maxpool2_backward(gy, idx)
