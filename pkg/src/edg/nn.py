"""MLPs, classification losses and first-order optimizers on :class:`Tensor`.

Losses accept a leading "problem" axis: logits of shape ``(P, B, K)`` are
treated as ``P`` independent batches whose per-batch means are summed. With
plain ``(B, K)`` logits this is the ordinary batch mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from edg import tensor as T
from edg.tensor import Tensor

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh, "identity": lambda x: x}


@dataclass
class MlpParams:
    """Affine layers with an activation between them (never after the last).

    ``layer_dims=[d]`` is the identity map. With ``residual=True`` the input is
    added to the output, which requires equal input and output widths.
    """

    layer_dims: list
    weights: list
    biases: list
    activation: str = "relu"
    residual: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight/bias pair per layer expected")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != want or b.shape != (want[0],):
                raise T.ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected {want}")
        if self.residual and self.layer_dims[0] != self.layer_dims[-1]:
            raise ValueError("residual MLP needs equal input and output widths")

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_parameters(self, flat):
        """Same architecture, parameters taken from ``flat`` (as ordered by :meth:`parameters`)."""
        return MlpParams(list(self.layer_dims), list(flat[0::2]), list(flat[1::2]), self.activation, self.residual)


def init_mlp(layer_dims, rng, activation="relu", residual=False, scale=1.0, zero_last=False):
    """Uniform fan-in init: every entry drawn from U(-s, s) with s = scale / sqrt(fan_in)."""
    weights, biases = [], []
    for i in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[i], layer_dims[i + 1]
        bound = scale / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        if zero_last and i == len(layer_dims) - 2:
            w, b = np.zeros_like(w), np.zeros_like(b)
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(b, requires_grad=True))
    return MlpParams(list(layer_dims), weights, biases, activation, residual)


def linear(x, w, b):
    """``x @ w.T + b``; ``w``/``b`` may carry a leading problem axis."""
    out = T.matmul(x, T.transpose(w))
    if b.ndim == 2:
        b = T.reshape(b, (b.shape[0], 1, b.shape[1]))
    return out + b


def mlp_forward(p, x, params=None):
    """Run ``x`` (``(..., batch, in_dim)``) through the MLP.

    ``params`` optionally overrides the weights with a flat list in
    :meth:`MlpParams.parameters` order, e.g. fast-adapted classifier weights.
    """
    if x.shape[-1] != p.in_dim:
        raise T.ShapeError(f"mlp_forward: input last dim {x.shape[-1]} != layer_dims[0] = {p.in_dim}")
    flat = p.parameters() if params is None else params
    act = ACTIVATIONS[p.activation]
    h = x
    n = len(flat) // 2
    for i in range(n):
        h = linear(h, flat[2 * i], flat[2 * i + 1])
        if i < n - 1:
            h = act(h)
    if p.residual:
        h = x + h
    return h


def _one_hot(labels, k):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return np.eye(k)[labels.astype(np.int64)]


def _batch_mean(per_sample):
    # per_sample: (..., B); mean over B, sum over any leading axes
    b = per_sample.shape[-1]
    return T.scalar_mul(T.tsum(per_sample), 1.0 / b)


def cross_entropy(logits, labels):
    """Mean over the batch of ``-log_softmax(logits)[label]``."""
    onehot = Tensor(_one_hot(labels, logits.shape[-1]))
    if onehot.shape != logits.shape:
        raise T.ShapeError(f"cross_entropy: logits {logits.shape} vs labels {np.shape(labels)}")
    nll = T.neg(T.tsum(T.mul(T.log_softmax(logits), onehot), -1))
    return _batch_mean(nll)


def kl_distill(teacher_logits, student_logits, tau):
    """Batch mean of KL(softmax(teacher/tau) || softmax(student/tau)).

    The teacher side is a constant: no gradient reaches ``teacher_logits``.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if teacher_logits.shape != student_logits.shape:
        raise T.ShapeError(f"kl_distill: teacher {teacher_logits.shape} vs student {student_logits.shape}")
    inv = 1.0 / tau
    with T.no_grad():
        log_p = T.log_softmax(T.scalar_mul(teacher_logits.detach(), inv))
    p = np.exp(log_p.data)
    log_q = T.log_softmax(T.scalar_mul(student_logits, inv))
    per_sample = T.tsum(T.mul(Tensor(p), T.sub(log_p, log_q)), -1)
    return _batch_mean(per_sample)


def accuracy(logits, labels):
    pred = np.argmax(np.asarray(logits.data if isinstance(logits, Tensor) else logits), axis=-1)
    return float(np.mean(pred == np.asarray(labels)))


# ---------------------------------------------------------------- optimizers


@dataclass
class OptimState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def opt_step(state, params, grads):
    """One update of ``params`` in place; returns ``(params, state)``.

    ``grads`` maps each parameter tensor to its gradient (a GradMap) or is a
    list aligned with ``params``.
    """
    params = list(params)
    if isinstance(grads, dict):
        try:
            g_list = [grads[p] for p in params]
        except KeyError:
            raise KeyError("opt_step: missing gradient for a parameter") from None
    else:
        g_list = list(grads)
        if len(g_list) != len(params):
            raise KeyError(f"opt_step: {len(g_list)} gradients for {len(params)} parameters")
    g_arr = [g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64) for g in g_list]
    state.step += 1
    if state.kind == "sgd":
        for p, g in zip(params, g_arr):
            p.data = p.data - state.lr * g
        return params, state
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, g_arr)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
    return params, state
