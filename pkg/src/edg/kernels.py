"""Row-wise softmax kernels with a compiled backend and a numpy fallback.

The compiled extension ``edg._kernels`` is used when it was built and
``EDG_PURE_PYTHON`` is not set. Every public function accepts arrays of any
rank and works over the last axis.
"""
from __future__ import annotations

import os

import numpy as np


def _np_softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _np_log_softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _np_softmax_rows_vjp(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def _np_log_softmax_rows_vjp(logp, g):
    return g - np.exp(logp) * g.sum(axis=1, keepdims=True)


_FALLBACK = {
    "softmax_rows": _np_softmax_rows,
    "log_softmax_rows": _np_log_softmax_rows,
    "softmax_rows_vjp": _np_softmax_rows_vjp,
    "log_softmax_rows_vjp": _np_log_softmax_rows_vjp,
}


def _load_compiled():
    if os.environ.get("EDG_PURE_PYTHON", "").strip() not in ("", "0"):
        return None
    try:
        from edg import _kernels
    except ImportError:
        return None
    return {name: getattr(_kernels, name) for name in _FALLBACK}


_compiled = _load_compiled()
BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _FALLBACK


def available_backends():
    return ["python", "compiled"] if _compiled is not None else ["python"]


def _rows(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1, a.shape[-1])


def _apply(name, backend, *arrays):
    table = _impl if backend is None else (_compiled if backend == "compiled" else _FALLBACK)
    if table is None:
        raise ValueError(f"backend {backend!r} is not available")
    shape = arrays[0].shape
    if arrays[0].size == 0:
        return np.zeros(shape)
    return table[name](*(_rows(a) for a in arrays)).reshape(shape)


def softmax(x, backend=None):
    return _apply("softmax_rows", backend, x)


def log_softmax(x, backend=None):
    return _apply("log_softmax_rows", backend, x)


def softmax_vjp(y, g, backend=None):
    return _apply("softmax_rows_vjp", backend, y, g)


def log_softmax_vjp(logp, g, backend=None):
    return _apply("log_softmax_rows_vjp", backend, logp, g)
