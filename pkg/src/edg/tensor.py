"""Dense fp64 tensors with reverse-mode autodiff, including gradients of gradients.

Every differentiable op records a :class:`Node` holding its inputs and a
vector-Jacobian product written in terms of other tensor ops. Running the
backward pass with ``create_graph=True`` therefore records the gradient
computation itself, and a second backward through it yields second-order
terms. Without ``create_graph`` the same VJPs run with recording disabled
(and the softmax family dispatches to the fused kernels in
:mod:`edg.kernels`).

Nodes carry a monotone sequence number, so sorting the nodes reachable from
a loss by descending sequence number is a valid reverse topological order.
"""
from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from edg import kernels


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class UnsupportedOpError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_state = threading.local()
_seq = itertools.count()
_generation = itertools.count(1)


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def set_grad_enabled(mode):
    prev = is_grad_enabled()
    _state.enabled = bool(mode)
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


class Node:
    __slots__ = ("seq", "op", "inputs", "vjp", "generation")

    def __init__(self, op, inputs, vjp):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.generation = getattr(_state, "generation", 0)


class Tensor:
    """An fp64 array, optionally attached to the autodiff graph.

    Leaf tensors with ``requires_grad=True`` are parameters; tensors produced
    by ops on such inputs carry a :class:`Node`.
    """

    __slots__ = ("data", "node", "_leaf_grad", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.node = None
        self._leaf_grad = bool(requires_grad)

    @property
    def requires_grad(self):
        return self._leaf_grad or self.node is not None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.node = None
        out._leaf_grad = False
        return out

    def __repr__(self):
        tag = f", op={self.node.op}" if self.node is not None else (", param" if self._leaf_grad else "")
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op, data, inputs, vjp):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.node = None
    out._leaf_grad = False
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.node = Node(op, inputs, vjp)
    return out


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    return sum_to(g, shape)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} and {b.shape}") from None
    return _make("add", data, (a, b), lambda g, out: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} and {b.shape}") from None
    return _make("sub", data, (a, b), lambda g, out: (_sum_to(g, a.shape), _sum_to(neg(g), b.shape)))


def neg(a):
    return _make("neg", -a.data, (a,), lambda g, out: (neg(g),))


def scalar_mul(a, c):
    c = float(c)
    return _make("scalar_mul", a.data * c, (a,), lambda g, out: (scalar_mul(g, c),))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} and {b.shape}") from None
    return _make("mul", data, (a, b), lambda g, out: (_sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: cannot broadcast {a.shape} and {b.shape}") from None

    def vjp(g, out):
        ga = div(g, b)
        return _sum_to(ga, a.shape), _sum_to(neg(mul(ga, out)), b.shape)

    return _make("div", data, (a, b), vjp)


def relu(a):
    mask = (a.data > 0).astype(np.float64)
    return _make("relu", a.data * mask, (a,), lambda g, out: (mul(g, Tensor(mask)),))


def tensor_abs(a):
    sign = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g, out: (mul(g, Tensor(sign)),))


def tanh(a):
    return _make("tanh", np.tanh(a.data), (a,), lambda g, out: (mul(g, sub(1.0, mul(out, out))),))


def exp(a):
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _make("exp", data, (a,), lambda g, out: (mul(g, out),))


def log(a):
    if np.any(a.data <= 0):
        raise NonFiniteError("log: non-positive input")
    return _make("log", np.log(a.data), (a,), lambda g, out: (div(g, a),))


# ---------------------------------------------------------------- softmax family


def softmax(a):
    """Softmax over the last axis (max-subtracted)."""

    def vjp(g, out):
        if is_grad_enabled():
            return (mul(out, sub(g, tsum(mul(g, out), -1, keepdims=True))),)
        return (Tensor(kernels.softmax_vjp(out.data, g.data)),)

    return _make("softmax", kernels.softmax(a.data), (a,), vjp)


def log_softmax(a):
    """Log-softmax over the last axis (max-subtracted)."""

    def vjp(g, out):
        if is_grad_enabled():
            return (sub(g, mul(exp(out), tsum(g, -1, keepdims=True))),)
        return (Tensor(kernels.log_softmax_vjp(out.data, g.data)),)

    return _make("log_softmax", kernels.log_softmax(a.data), (a,), vjp)


# ---------------------------------------------------------------- reductions and shape


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def vjp(g, out):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, a.shape),)

    return _make("sum", np.asarray(data, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return scalar_mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make("reshape", data, (a,), lambda g, out: (reshape(g, a.shape),))


def transpose(a, axes=None):
    """Swap the last two axes, or permute by ``axes``."""
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,), lambda g, out: (transpose(g, inv),))


def broadcast_to(a, shape):
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _make("broadcast_to", data, (a,), lambda g, out: (_sum_to(g, a.shape),))


def sum_to(a, shape):
    shape = tuple(shape)
    lead = a.ndim - len(shape)
    if lead < 0:
        raise ShapeError(f"sum_to: cannot reduce {a.shape} to {shape}")
    axes = tuple(range(lead)) + tuple(lead + i for i, n in enumerate(shape) if n == 1 and a.shape[lead + i] != 1)
    data = a.data.sum(axis=axes, keepdims=True)
    data = data.reshape(shape) if data.size == int(np.prod(shape)) else None
    if data is None:
        raise ShapeError(f"sum_to: cannot reduce {a.shape} to {shape}")
    return _make("sum_to", data, (a,), lambda g, out: (broadcast_to(g, a.shape),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def vjp(g, out):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = (slice(None),) * ax + (slice(int(lo), int(hi)),)
            grads.append(getitem(g, idx))
        return tuple(grads)

    return _make("concat", data, tuple(tensors), vjp)


def getitem(a, idx):
    data = np.array(a.data[idx], dtype=np.float64)
    return _make("slice", data, (a,), lambda g, out: (scatter(g, idx, a.shape),))


def scatter(a, idx, shape):
    """Place ``a`` into zeros of ``shape`` at ``idx`` (adjoint of slicing)."""
    data = np.zeros(shape)
    np.add.at(data, idx, a.data)
    return _make("scatter", data, (a,), lambda g, out: (getitem(g, idx),))


def matmul(a, b):
    """Matrix product of the last two axes; leading batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g, out):
        return _sum_to(matmul(g, transpose(b)), a.shape), _sum_to(matmul(transpose(a), g), b.shape)

    return _make("matmul", data, (a, b), vjp)


OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "neg": neg,
    "scalar_mul": scalar_mul,
    "mul": mul,
    "div": div,
    "relu": relu,
    "abs": tensor_abs,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "sum": tsum,
    "mean": mean,
    "concat": lambda *ts, axis=0: concat(ts, axis),
    "slice": getitem,
    "transpose": transpose,
    "reshape": reshape,
    "broadcast_to": broadcast_to,
    "sum_to": sum_to,
}


def record(kind, inputs, **attrs):
    """Apply op ``kind`` to ``inputs`` by name."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise UnsupportedOpError(f"unsupported op kind {kind!r}; known: {sorted(OPS)}") from None
    return fn(*[as_tensor(x) for x in inputs], **attrs)


# ---------------------------------------------------------------- backward


def _collect(loss, targets):
    """Nodes on a path from some target to ``loss``, in reverse topological order."""
    needed = {}
    visited = set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        key = id(t)
        if expanded:
            needed[key] = key in targets or any(needed.get(id(i), False) for i in t.node.inputs)
            continue
        if key in visited:
            continue
        visited.add(key)
        if t.node is None:
            needed[key] = key in targets
            continue
        stack.append((t, True))
        for inp in t.node.inputs:
            if id(inp) not in visited and inp.requires_grad:
                stack.append((inp, False))
    return needed


def grad(loss, wrt, create_graph=False):
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors in ``wrt`` that ``loss`` does not depend on get zeros.
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    wrt = list(wrt)
    for w in wrt:
        if not w.requires_grad:
            raise GraphError("backward: handle is not on the graph (tensor does not require grad)")
    targets = {id(w) for w in wrt}
    results = {}
    if loss.requires_grad:
        needed = _collect(loss, targets)
        order = []
        seen = set()
        stack = [loss]
        while stack:
            t = stack.pop()
            if id(t) in seen or not needed.get(id(t)):
                continue
            seen.add(id(t))
            if t.node is not None:
                order.append(t)
                stack.extend(t.node.inputs)
        order.sort(key=lambda t: t.node.seq, reverse=True)

        grads = {id(loss): Tensor(1.0)}
        prev_gen = getattr(_state, "generation", 0)
        _state.generation = next(_generation) if create_graph else prev_gen
        try:
            with set_grad_enabled(create_graph):
                for t in order:
                    g = grads.pop(id(t), None)
                    if g is None:
                        continue
                    if id(t) in targets:
                        results[id(t)] = g
                    for inp, gi in zip(t.node.inputs, t.node.vjp(g, t)):
                        if gi is None or not needed.get(id(inp)):
                            continue
                        k = id(inp)
                        grads[k] = add(grads[k], gi) if k in grads else gi
        finally:
            _state.generation = prev_gen
        for w in wrt:
            if w.node is None and id(w) in grads:
                results[id(w)] = grads[id(w)]
    out = []
    for w in wrt:
        g = results.get(id(w))
        if g is None:
            g = Tensor(np.zeros(w.shape))
        elif not create_graph:
            g = g.detach()
        out.append(g)
    return out


def backward(loss, wrt, create_graph=False):
    """Like :func:`grad` but returns a mapping ``{param: gradient}``."""
    wrt = list(wrt)
    return dict(zip(wrt, grad(loss, wrt, create_graph=create_graph)))


# ---------------------------------------------------------------- finite differences


@dataclass
class GradCheck:
    max_rel_error: float
    n_checked: int
    nonsmooth: list = field(default_factory=list)

    def __float__(self):
        return self.max_rel_error


def finite_diff_check(f, params, eps=1e-6, kink_tol=1e-2):
    """Compare reverse-mode gradients of ``f(params)`` with central differences.

    ``f`` maps the list of parameter tensors to a scalar tensor. Coordinates
    where the one-sided slopes disagree by more than ``kink_tol`` are reported
    in ``nonsmooth`` and left out of ``max_rel_error``.
    """
    if not (0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    params = list(params)
    for p in params:
        # perturbations below write through a flat view
        p.data = np.require(p.data, requirements="C")
    analytic = grad(f(params), params)

    def evaluate():
        # f may differentiate internally (inner loops), so recording stays on
        val = float(f(params).data)
        if not math.isfinite(val):
            raise NonFiniteError("finite_diff_check: f returned a non-finite value")
        return val

    f0 = evaluate()
    worst = 0.0
    checked = 0
    nonsmooth = []
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        ga = analytic[pi].data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = evaluate()
            flat[j] = orig - eps
            fm = evaluate()
            flat[j] = orig
            fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
            if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd), abs(bwd)):
                nonsmooth.append((pi, j))
                continue
            central = (fp - fm) / (2 * eps)
            worst = max(worst, abs(ga[j] - central) / max(1.0, abs(central)))
            checked += 1
    return GradCheck(worst, checked, nonsmooth)
