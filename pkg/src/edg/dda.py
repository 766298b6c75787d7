"""Attention-based directional domain augmentation with bi-level meta-training.

Shapes used throughout: ``P`` independent domain pairs are processed at once
along a leading axis, ``B`` samples per domain, ``d`` feature width, ``K``
classes. The classifier is fast-adapted separately for every pair by
broadcasting the shared meta-parameters to ``(P, ...)`` copies; since pair
losses are summed, the gradient of the sum with respect to copy ``p`` is
exactly pair ``p``'s own inner gradient.

History ranges differ per pair (pair t attends to domains 1..t). They are
expressed as an additive mask on the attention scores, which leaves the
softmax weights of the admitted keys bit-identical to a per-pair computation.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from edg import nn
from edg import tensor as T
from edg.rng import stream
from edg.tensor import Tensor

log = logging.getLogger(__name__)

MASKED = -1e30
CKPT_MAGIC = b"EDGCKPT1"


class EpisodeAborted(RuntimeError):
    pass


@dataclass
class DdaConfig:
    alpha: float = 2.0
    beta: float = 0.001
    lam: float = 0.5
    tau_temp: float = 2.0
    inner_steps_aug: int = 5
    inner_steps_src: int = 2
    batch_size: int = 16
    episodes: int = 2000
    second_order: bool = True
    history_includes_current: bool = True
    pair_mode: str = "all_pairs"
    n_infer: int = 0
    rollout: int = 1
    optimizer: str = "adam"
    eval_every: int = 100
    feature_dims: list = field(default_factory=lambda: [2])
    transformer_dims: list = field(default_factory=lambda: [2, 4, 4, 2])
    classifier_hidden: list = field(default_factory=list)
    activation: str = "relu"
    value_init_scale: float = 0.1
    standardize: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("alpha", "beta", "tau_temp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        for name in ("inner_steps_aug", "inner_steps_src", "episodes", "n_infer"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.batch_size < 1 or self.rollout < 1 or self.eval_every < 1:
            raise ValueError("batch_size, rollout and eval_every must be >= 1")
        if self.pair_mode not in ("all_pairs", "random_pair"):
            raise ValueError(f"pair_mode must be all_pairs or random_pair, got {self.pair_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.activation not in nn.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.transformer_dims) < 2 or self.transformer_dims[0] != self.transformer_dims[-1]:
            raise ValueError("transformer_dims must map the feature width to itself")
        if self.transformer_dims[0] != self.feature_dims[-1]:
            raise ValueError("transformer_dims must start at the featurizer output width")


# ---------------------------------------------------------------- parameters


@dataclass
class TransformerParams:
    q: nn.MlpParams
    k: nn.MlpParams
    v: nn.MlpParams
    sc: nn.MlpParams

    @property
    def attn_dim(self):
        return self.q.out_dim

    def groups(self):
        return {"q": self.q, "k": self.k, "v": self.v, "sc": self.sc}

    def parameters(self):
        return self.q.parameters() + self.k.parameters() + self.v.parameters() + self.sc.parameters()


@dataclass
class ModelParams:
    """Featurizer, domain transformer and classifier meta-parameters.

    ``shift``/``scale`` are a fixed input standardization applied before the
    featurizer (fit on source training data, never trained); None means raw
    inputs.
    """

    phi: nn.MlpParams
    psi: TransformerParams
    h: nn.MlpParams
    shift: np.ndarray = None
    scale: np.ndarray = None

    def prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.shift is None:
            return x
        return (x - self.shift) / self.scale

    def fit_standardizer(self, sources):
        pooled = np.concatenate([d.x for d in sources])
        self.shift = pooled.mean(axis=0)
        self.scale = np.maximum(pooled.std(axis=0), 1e-12)

    def mlps(self):
        out = {"phi": self.phi, "h": self.h}
        for name, p in self.psi.groups().items():
            out[f"psi.{name}"] = p
        return out

    def named_parameters(self):
        named = []
        for prefix, mlp in self.mlps().items():
            for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                named += [(f"{prefix}.{i}.weight", w), (f"{prefix}.{i}.bias", b)]
        return named

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state):
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=np.float64)


def init_transformer(dims, rng, activation="relu", value_init_scale=0.1):
    """q/k standard init; v small; sc a residual MLP whose last layer is zero (identity at init)."""
    return TransformerParams(
        q=nn.init_mlp(dims, rng, activation),
        k=nn.init_mlp(dims, rng, activation),
        v=nn.init_mlp(dims, rng, activation, scale=value_init_scale),
        sc=nn.init_mlp(dims, rng, activation, residual=True, zero_last=True),
    )


def init_model(cfg, d_in, n_classes, seed):
    rng = stream(seed, "init")
    feat = [d_in] + list(cfg.feature_dims[1:])
    phi = nn.init_mlp(feat, rng, cfg.activation)
    d = feat[-1]
    psi = init_transformer([d] + list(cfg.transformer_dims[1:-1]) + [d], rng, cfg.activation, cfg.value_init_scale)
    h = nn.init_mlp([d] + list(cfg.classifier_hidden) + [n_classes], rng, cfg.activation)
    return ModelParams(phi, psi, h)


# ---------------------------------------------------------------- domain transformer


def attention_scores(query, keys, tp):
    """``<psi_q(query_i), psi_k(key_j)> / sqrt(a)`` with ``a`` the query/key embedding width."""
    q = nn.mlp_forward(tp.q, query)
    k = nn.mlp_forward(tp.k, keys)
    return T.scalar_mul(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(tp.attn_dim))


def _attend(query, keys, tp, mask=None, extra_keys=None):
    """Attention over shared ``keys`` (M, d) plus optional per-pair ``extra_keys`` (P, M', d).

    ``query`` is (P, B, d); ``mask`` (P, M) is 0 for admitted keys and
    ``MASKED`` otherwise. Returns (P, B, d): softmax-weighted values plus the
    skip path.
    """
    scale = 1.0 / math.sqrt(tp.attn_dim)
    q = nn.mlp_forward(tp.q, query)
    score_parts, value_parts = [], []
    if keys is not None:
        s = T.scalar_mul(T.matmul(q, T.transpose(nn.mlp_forward(tp.k, keys))), scale)
        if mask is not None:
            s = T.add(s, Tensor(mask[:, None, :]))
        score_parts.append(s)
        v = nn.mlp_forward(tp.v, keys)
        value_parts.append(T.broadcast_to(v, (query.shape[0],) + v.shape))
    if extra_keys is not None:
        score_parts.append(T.scalar_mul(T.matmul(q, T.transpose(nn.mlp_forward(tp.k, extra_keys))), scale))
        value_parts.append(nn.mlp_forward(tp.v, extra_keys))
    if not score_parts:
        raise ValueError("transform_augment: empty history")
    scores = score_parts[0] if len(score_parts) == 1 else T.concat(score_parts, axis=-1)
    values = value_parts[0] if len(value_parts) == 1 else T.concat(value_parts, axis=-2)
    weights = T.softmax(scores)
    return T.add(T.matmul(weights, values), nn.mlp_forward(tp.sc, query))


def attention_weights(query, history, tp):
    """Softmax weights of each query over the pooled history (rows sum to 1)."""
    keys = T.concat(history, axis=0) if isinstance(history, (list, tuple)) else history
    return T.softmax(attention_scores(query, keys, tp))


def transform_augment(z_t, history, tp):
    """Simulated next-domain features for the rows of ``z_t`` (B, d).

    ``history`` is a list of (B', d) feature blocks; attention normalizes
    jointly over all of their rows.
    """
    if history is None or len(history) == 0:
        raise ValueError("transform_augment: empty history")
    keys = T.concat(list(history), axis=0) if len(history) > 1 else T.as_tensor(history[0])
    q = T.reshape(z_t, (1,) + z_t.shape)
    out = _attend(q, keys, tp)
    return T.reshape(out, z_t.shape)


# ---------------------------------------------------------------- inner loop


class Counters:
    """Instrumentation for tests: how often the teacher network is evaluated."""

    teacher_evals = 0


def _classifier(h_arch, x, params):
    return nn.mlp_forward(h_arch, x, params)


def _broadcast_params(params, n):
    return [T.broadcast_to(p, (n,) + p.shape) for p in params]


def fast_adapt(theta_h, loss_fn, alpha, steps, second_order=True):
    """``steps`` iterations of ``theta <- theta - alpha * grad loss_fn(theta)``.

    With ``second_order`` each step is recorded so later gradients flow
    through the update; otherwise the inner gradients are constants.
    """
    params = list(theta_h)
    if steps == 0 or alpha == 0:
        return params
    for _ in range(steps):
        loss = loss_fn(params)
        if not math.isfinite(float(loss.data)):
            raise EpisodeAborted(f"non-finite inner loss {float(loss.data)}")
        grads = T.grad(loss, params, create_graph=second_order)
        params = [T.sub(p, T.scalar_mul(g, alpha)) for p, g in zip(params, grads)]
    return params


def teacher_adapt(theta_h, h_arch, z, y, alpha, steps):
    """Classifier adapted by plain cross-entropy steps on real features; fully detached."""
    start = [Tensor(p.data.copy(), requires_grad=True) for p in theta_h]
    z = z.detach() if isinstance(z, Tensor) else Tensor(z)
    adapted = fast_adapt(start, lambda ps: nn.cross_entropy(_classifier(h_arch, z, ps), y), alpha, steps, second_order=False)
    return [p.detach() for p in adapted]


def inner_loss(z_aug, y, teacher_logits, h_arch, params, cfg):
    """``lam * CE(h(z_aug), y) + (1 - lam) * KL(teacher || h(z_aug))`` (batch means)."""
    logits = _classifier(h_arch, z_aug, params)
    ce = nn.cross_entropy(logits, y)
    if cfg.lam == 1.0:
        return ce
    kl = nn.kl_distill(teacher_logits, logits, cfg.tau_temp)
    if cfg.lam == 0.0:
        return kl
    return T.add(T.scalar_mul(ce, cfg.lam), T.scalar_mul(kl, 1.0 - cfg.lam))


def _teacher_logits(mp, z, y, cfg, n_pairs):
    """Teacher logits on ``z`` (P, B, d) after per-pair adaptation on (z, y); None when unused."""
    if cfg.lam == 1.0:
        return None
    Counters.teacher_evals += 1
    with T.no_grad():
        start = [Tensor(p.data) for p in _broadcast_params(mp.h.parameters(), n_pairs)]
    teacher = teacher_adapt(start, mp.h, z, y, cfg.alpha, cfg.inner_steps_src)
    with T.no_grad():
        return _classifier(mp.h, z.detach(), teacher)


def _rollout_teacher(mp, z, adapted_prev, cfg):
    """Teacher logits for a rollout step: the previous step's adapted classifier, detached."""
    if cfg.lam == 1.0:
        return None
    Counters.teacher_evals += 1
    with T.no_grad():
        return _classifier(mp.h, z.detach(), [p.detach() for p in adapted_prev])


# ---------------------------------------------------------------- episodes


@dataclass
class EpisodeBatch:
    x: np.ndarray
    y: np.ndarray
    domains: list

    @property
    def B(self):
        return self.x.shape[1]

    @property
    def T(self):
        return self.x.shape[0]


def sample_batch(sources, batch_size, rng):
    """Draw ``batch_size`` rows (without replacement) from each source domain."""
    xs, ys = [], []
    for d in sources:
        idx = rng.choice(d.n, size=min(batch_size, d.n), replace=False)
        xs.append(d.x[idx])
        ys.append(d.y[idx])
    b = min(len(v) for v in ys)
    return EpisodeBatch(np.stack([x[:b] for x in xs]), np.stack([y[:b] for y in ys]), [d.index for d in sources])


def _history_mask(query_domains, n_key_domains, block, include_current):
    """(P, n_key_domains * block) additive mask: key domain t' admitted iff t' <= t (or < t)."""
    key_dom = np.repeat(np.arange(n_key_domains), block)
    q = np.asarray(query_domains)[:, None]
    ok = key_dom[None, :] <= q if include_current else key_dom[None, :] < q
    return np.where(ok, 0.0, MASKED)


def select_pairs(n_domains, cfg, rng=None):
    first = 0 if cfg.history_includes_current else 1
    pairs = list(range(first, n_domains - 1))
    if not pairs:
        raise ValueError(f"no usable domain pairs among {n_domains} domains (history_includes_current={cfg.history_includes_current})")
    if cfg.pair_mode == "random_pair":
        rng = rng if rng is not None else np.random.default_rng(0)
        pairs = [int(rng.choice(pairs))]
    return pairs


def episode_loss(mp, batch, cfg, pairs=None):
    """Summed outer loss of one episode (a graph-attached scalar)."""
    n_dom, B = batch.T, batch.B
    if n_dom < 2:
        raise ValueError("an episode needs at least 2 domains")
    pairs = select_pairs(n_dom, cfg) if pairs is None else list(pairs)
    P = len(pairs)
    Z = nn.mlp_forward(mp.phi, Tensor(mp.prepare(batch.x)))
    d = Z.shape[-1]
    pairs_arr = np.asarray(pairs)
    n_keys = int(pairs_arr.max()) + 1
    keys = T.reshape(Z[:n_keys], (n_keys * B, d))
    mask = _history_mask(pairs, n_keys, B, cfg.history_includes_current)

    total = None
    query = Z[pairs_arr]
    labels = batch.y[pairs_arr]
    teacher_z, teacher_y = query, labels
    extra = None
    theta_h = mp.h.parameters()
    adapted_prev = None
    for step in range(1, cfg.rollout + 1):
        live = pairs_arr + step <= n_dom - 1
        if not live.any():
            break
        if not live.all():
            sel = np.nonzero(live)[0]
            query, labels, teacher_z, mask = query[sel], labels[sel], teacher_z[sel], mask[sel]
            extra = extra[sel] if extra is not None else None
            adapted_prev = [p[sel] for p in adapted_prev] if adapted_prev is not None else None
            pairs_arr = pairs_arr[sel]
        n = len(pairs_arr)
        z_aug = _attend(query, keys, mp.psi, mask, extra)
        if step == 1:
            teacher = _teacher_logits(mp, teacher_z, teacher_y, cfg, n)
        else:
            teacher = _rollout_teacher(mp, teacher_z, adapted_prev, cfg)
        adapted = fast_adapt(
            _broadcast_params(theta_h, n),
            lambda ps, z=z_aug, y=labels, tl=teacher: inner_loss(z, y, tl, mp.h, ps, cfg),
            cfg.alpha, cfg.inner_steps_aug, cfg.second_order,
        )
        target = Z[pairs_arr + step]
        outer = nn.cross_entropy(_classifier(mp.h, target, adapted), batch.y[pairs_arr + step])
        total = outer if total is None else T.add(total, outer)
        # next rollout step: augment the augmentation, with it joining the history
        teacher_z = z_aug
        extra = z_aug if extra is None else T.concat([extra, z_aug], axis=1)
        query = z_aug
        adapted_prev = adapted
    if not math.isfinite(float(total.data)):
        raise EpisodeAborted(f"non-finite episode loss {float(total.data)}")
    return total


def train_episode(mp, batch, cfg, pairs=None):
    """Episode loss and gradients for every parameter of ``mp`` (a GradMap)."""
    try:
        loss = episode_loss(mp, batch, cfg, pairs)
    except T.NonFiniteError as exc:
        raise EpisodeAborted(str(exc)) from exc
    params = mp.parameters()
    return loss, T.backward(loss, params)


# ---------------------------------------------------------------- adaptation at inference


def _features(mp, x):
    with T.no_grad():
        return nn.mlp_forward(mp.phi, Tensor(mp.prepare(x)))


def rollout_adapt(mp, history, query_x, query_y, teacher_x, teacher_y, cfg, horizon, include_current=None):
    """Fast-adapted classifiers for horizons 1..``horizon`` beyond the query domain.

    ``history`` is the list of raw-input blocks the transformer may attend to
    (the query domain included or not per ``include_current``), the teacher
    for the first horizon is adapted on (``teacher_x``, ``teacher_y``).
    Returns a list of adapted classifier parameter lists, one per horizon.
    """
    include = cfg.history_includes_current if include_current is None else include_current
    with T.no_grad():
        zq = _features(mp, query_x)
        keys = T.concat([_features(mp, h) for h in history], axis=0) if history else None
        n_keys = keys.shape[0] if keys is not None else 0
    theta_h = mp.h.parameters()
    prev = None
    adapted_all = []
    extra = None
    query = T.reshape(zq, (1,) + zq.shape)
    for k in range(1, horizon + 1):
        with T.no_grad():
            z_aug = _attend(query, keys, mp.psi, None, extra)
        if cfg.lam < 1.0:
            Counters.teacher_evals += 1
            if k == 1:
                zt = _features(mp, teacher_x)
                teacher = teacher_adapt(theta_h, mp.h, zt, teacher_y, cfg.alpha, cfg.inner_steps_src)
                with T.no_grad():
                    teacher_logits = _classifier(mp.h, query, [T.reshape(p, (1,) + p.shape) for p in teacher])
            else:
                with T.no_grad():
                    teacher_logits = _classifier(mp.h, query, prev)
        else:
            teacher_logits = None
        start = [Tensor(p.data.reshape((1,) + p.shape), requires_grad=True) for p in theta_h]
        labels = query_y[None, :]
        adapted = fast_adapt(
            start,
            lambda ps, z=z_aug.detach(), tl=teacher_logits: inner_loss(z, labels, tl, mp.h, ps, cfg),
            cfg.alpha, cfg.inner_steps_aug, second_order=False,
        )
        prev = [p.detach() for p in adapted]
        adapted_all.append([Tensor(p.data[0]) for p in prev])
        extra = z_aug if extra is None else T.concat([extra, z_aug], axis=1)
        query = z_aug
    return adapted_all


def predict(mp, params, x):
    with T.no_grad():
        return _classifier(mp.h, _features(mp, x), params)


def _pool(dom, cfg, seed):
    if cfg.n_infer and cfg.n_infer < dom.n:
        idx = np.sort(stream(seed, "n_infer", dom.index).choice(dom.n, cfg.n_infer, replace=False))
        return dom.x[idx], dom.y[idx]
    return dom.x, dom.y


def _history_blocks(train_sources, last, include_current):
    stop = last if include_current else last - 1
    return [d.x for d in train_sources[:stop]]


def infer_target(mp, train_ds, cfg, horizon=1, val_ds=None, seed=0):
    """Classifier for target domain T+horizon and its accuracy on that domain."""
    target = train_ds.target(horizon)
    sources = train_ds.sources
    last = sources[-1]
    teacher_dom = val_ds.sources[-1] if val_ds is not None else last
    qx, qy = _pool(last, cfg, seed)
    adapted = rollout_adapt(mp, _history_blocks(sources, len(sources), cfg.history_includes_current),
                            qx, qy, teacher_dom.x, teacher_dom.y, cfg, horizon)
    params = adapted[-1]
    return params, nn.accuracy(predict(mp, params, target.x), target.y)


def source_validation(mp, train_ds, val_ds, cfg, seed=0):
    """Mean accuracy over source domains 2..T of the classifier adapted at each horizon."""
    sources = train_ds.sources
    accs = []
    first = 2 if cfg.history_includes_current else 3
    for t in range(first, len(sources) + 1):
        prev_train, prev_val, dom_val = sources[t - 2], val_ds.sources[t - 2], val_ds.sources[t - 1]
        qx, qy = _pool(prev_train, cfg, seed)
        adapted = rollout_adapt(mp, _history_blocks(sources, t - 1, cfg.history_includes_current),
                                qx, qy, prev_val.x, prev_val.y, cfg, 1)
        accs.append(nn.accuracy(predict(mp, adapted[0], dom_val.x), dom_val.y))
    return float(np.mean(accs)) if accs else float("nan")


# ---------------------------------------------------------------- training


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    val: list = field(default_factory=list)
    aborted: list = field(default_factory=list)
    best_val: float = float("nan")
    best_episode: int = 0


def train(mp, train_ds, cfg, seed=0, val_ds=None):
    """Meta-train ``mp`` in place for ``cfg.episodes`` episodes; returns (best params, log).

    The best snapshot by source validation accuracy is kept (evaluated every
    ``cfg.eval_every`` episodes and at the end) when ``val_ds`` is given.
    """
    if train_ds.n_source < 2:
        raise ValueError("training needs at least 2 source domains")
    tlog = TrainLog()
    if cfg.standardize and mp.shift is None:
        mp.fit_standardizer(train_ds.sources)
    if cfg.episodes == 0:
        return mp, tlog
    rng = stream(seed, "episodes")
    state = nn.OptimState(kind=cfg.optimizer, lr=cfg.beta)
    params = mp.parameters()
    best_state = mp.state()
    best_val = -1.0
    for ep in range(1, cfg.episodes + 1):
        batch = sample_batch(train_ds.sources, cfg.batch_size, rng)
        pairs = select_pairs(batch.T, cfg, rng)
        try:
            loss, grads = train_episode(mp, batch, cfg, pairs)
        except EpisodeAborted as exc:
            log.warning("episode %d aborted: %s", ep, exc)
            tlog.aborted.append(ep)
            continue
        nn.opt_step(state, params, grads)
        tlog.losses.append(float(loss.data))
        if val_ds is not None and (ep % cfg.eval_every == 0 or ep == cfg.episodes):
            acc = source_validation(mp, train_ds, val_ds, cfg, seed)
            tlog.val.append((ep, acc))
            if math.isfinite(acc) and acc > best_val:
                best_val, best_state, tlog.best_episode = acc, mp.state(), ep
    if val_ds is not None and best_val >= 0:
        mp.load_state(best_state)
        tlog.best_val = best_val
    else:
        tlog.best_episode = cfg.episodes
    return mp, tlog


# ---------------------------------------------------------------- checkpoints
#
# magic "EDGCKPT1" | u64 manifest length | utf-8 JSON manifest | fp64 LE payloads
# in manifest["params"] order, each a row-major array of the recorded shape.


def config_dict(cfg):
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def save_checkpoint(path, mp, cfg, episodes=0, best_val=None, extra=None):
    """Write ``mp`` (a DDA ModelParams or an ERM model) with its config echo."""
    named = mp.named_parameters()
    arch = {name: {"layer_dims": m.layer_dims, "activation": m.activation, "residual": m.residual}
            for name, m in mp.mlps().items()}
    manifest = {
        "format": "EDGCKPT1",
        "model": "dda" if isinstance(mp, ModelParams) else "erm",
        "params": [{"name": n, "shape": list(p.shape)} for n, p in named],
        "arch": arch,
        "config": config_dict(cfg),
        "episodes": episodes,
        "best_val": best_val,
        "input_shift": None if mp.shift is None else [float(v) for v in mp.shift],
        "input_scale": None if mp.scale is None else [float(v) for v in mp.scale],
    }
    if extra:
        manifest.update(extra)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in named:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(model, DdaConfig, manifest)``; the model is an ErmModel for ERM checkpoints."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not an EDGCKPT1 checkpoint")
    (mlen,) = struct.unpack_from("<Q", raw, 8)
    manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    off = 16 + mlen
    arrays = {}
    for entry in manifest["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(entry["shape"]).astype(np.float64)
        off += 8 * n
    mlps = {}
    for name, a in manifest["arch"].items():
        dims = a["layer_dims"]
        ws = [Tensor(arrays[f"{name}.{i}.weight"], requires_grad=True) for i in range(len(dims) - 1)]
        bs = [Tensor(arrays[f"{name}.{i}.bias"], requires_grad=True) for i in range(len(dims) - 1)]
        mlps[name] = nn.MlpParams(dims, ws, bs, a["activation"], a["residual"])
    cfg = DdaConfig(**manifest["config"])
    if manifest.get("model", "dda") == "erm":
        from edg.erm import ErmModel

        mp = ErmModel(mlps["phi"], mlps["h"], standardize=cfg.standardize)
    else:
        mp = ModelParams(mlps["phi"], TransformerParams(mlps["psi.q"], mlps["psi.k"], mlps["psi.v"], mlps["psi.sc"]),
                         mlps["h"])
    if manifest.get("input_shift") is not None:
        mp.shift = np.array(manifest["input_shift"], dtype=np.float64)
        mp.scale = np.array(manifest["input_scale"], dtype=np.float64)
    return mp, cfg, manifest


__all__ = [
    "DdaConfig", "TransformerParams", "ModelParams", "EpisodeBatch", "EpisodeAborted", "TrainLog",
    "init_model", "init_transformer", "attention_scores", "attention_weights", "transform_augment",
    "fast_adapt", "teacher_adapt", "inner_loss", "episode_loss", "train_episode", "train",
    "infer_target", "source_validation", "rollout_adapt", "predict", "sample_batch",
    "save_checkpoint", "load_checkpoint", "config_dict",
]
