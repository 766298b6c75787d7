"""Empirical risk minimization baseline: one classifier on all source data pooled."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from edg import nn
from edg import tensor as T
from edg.rng import stream
from edg.tensor import Tensor


@dataclass
class ErmModel:
    phi: nn.MlpParams
    h: nn.MlpParams
    standardize: bool = False
    shift: np.ndarray = None
    scale: np.ndarray = None

    def prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x if self.shift is None else (x - self.shift) / self.scale

    def mlps(self):
        return {"phi": self.phi, "h": self.h}

    def named_parameters(self):
        named = []
        for prefix, mlp in self.mlps().items():
            for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                named += [(f"{prefix}.{i}.weight", w), (f"{prefix}.{i}.bias", b)]
        return named

    def parameters(self):
        return self.phi.parameters() + self.h.parameters()

    def logits(self, x):
        with T.no_grad():
            return nn.mlp_forward(self.h, nn.mlp_forward(self.phi, Tensor(self.prepare(x))))


@dataclass
class ErmLog:
    losses: list = field(default_factory=list)
    val: list = field(default_factory=list)
    best_val: float = float("nan")
    best_step: int = 0


def init_erm(dda_cfg, d_in, n_classes, seed):
    """Same featurizer, classifier and input handling as the DDA model for this config."""
    rng = stream(seed, "erm_init")
    feat = [d_in] + list(dda_cfg.feature_dims[1:])
    phi = nn.init_mlp(feat, rng, dda_cfg.activation)
    h = nn.init_mlp([feat[-1]] + list(dda_cfg.classifier_hidden) + [n_classes], rng, dda_cfg.activation)
    return ErmModel(phi, h, standardize=dda_cfg.standardize)


def _pool(doms):
    return np.concatenate([d.x for d in doms]), np.concatenate([d.y for d in doms])


def train_erm(model, train_ds, hp, seed=0, val_ds=None):
    """Minimize cross-entropy on the pooled source training data.

    Keeps the snapshot with the best pooled source-validation accuracy when
    ``val_ds`` is given. Returns ``(model, log)``.
    """
    if train_ds.n_source < 1:
        raise ValueError("ERM needs at least one source domain")
    x, y = _pool(train_ds.sources)
    if model.standardize and model.shift is None:
        model.shift, model.scale = x.mean(axis=0), np.maximum(x.std(axis=0), 1e-12)
    x = model.prepare(x)
    vx, vy = _pool(val_ds.sources) if val_ds is not None else (None, None)
    rng = stream(seed, "erm_batches")
    state = nn.OptimState(kind=hp.optimizer, lr=hp.lr)
    params = model.parameters()
    elog = ErmLog()
    best = (-1.0, [p.data.copy() for p in params], 0)
    for step in range(1, hp.steps + 1):
        idx = rng.choice(len(y), size=min(hp.batch_size, len(y)), replace=False)
        loss = nn.cross_entropy(nn.mlp_forward(model.h, nn.mlp_forward(model.phi, Tensor(x[idx]))), y[idx])
        nn.opt_step(state, params, T.grad(loss, params))
        elog.losses.append(float(loss.data))
        if vx is not None and (step % hp.eval_every == 0 or step == hp.steps):
            acc = nn.accuracy(model.logits(vx), vy)
            elog.val.append((step, acc))
            if acc > best[0]:
                best = (acc, [p.data.copy() for p in params], step)
    if vx is not None and best[0] >= 0:
        for p, d in zip(params, best[1]):
            p.data = d
        elog.best_val, elog.best_step = best[0], best[2]
    else:
        elog.best_step = hp.steps
    return model, elog


def erm_accuracy(model, ds, horizon=1):
    tgt = ds.target(horizon)
    return nn.accuracy(model.logits(tgt.x), tgt.y)
