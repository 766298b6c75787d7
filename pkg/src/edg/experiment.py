"""Multi-seed experiments, parameter sweeps and decision-boundary grids.

Results CSV columns (one row per method/seed/horizon, then one summary row
per horizon whose ``seed`` is ``summary``)::

    method, dataset, seed, horizon, accuracy, std, n_seeds,
    episodes_to_best, wall_seconds, config_hash, status

``std`` is the unbiased (n-1) standard deviation across the seeds that
finished, filled on summary rows only. ``status`` is ``ok`` or ``error: ...``.
Only ``wall_seconds`` varies between repeated runs.
"""
from __future__ import annotations

import csv
import inspect
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from edg import dda, ldda
from edg import datagen as dg
from edg.config import ALIASES, GENERATORS, ConfigError, ErmConfig, config_hash
from edg.dda import DdaConfig
from edg.erm import erm_accuracy, init_erm, train_erm

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("method", "dataset", "seed", "horizon", "accuracy", "std", "n_seeds",
                  "episodes_to_best", "wall_seconds", "config_hash", "status")
SWEEP_COLUMNS = ("axis", "value", "method", "dataset", "horizon", "accuracy", "std", "n_seeds", "config_hash")
GRID_COLUMNS = ("x1", "x2", "predicted_class", "logit_margin")


@dataclass
class ResultRecord:
    method: str
    dataset: str
    seed: object  # int, or "summary"
    horizon: int
    accuracy: float
    episodes_to_best: int = None  # None on summary rows
    wall_seconds: float = float("nan")
    config_hash: str = ""
    status: str = "ok"
    std: float = float("nan")
    n_seeds: int = 1

    @property
    def ok(self):
        return self.status == "ok"


def max_workers():
    """Worker cap from EDG_THREADS (default: CPU count)."""
    raw = os.environ.get("EDG_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"EDG_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"EDG_THREADS must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------- datasets and provenance


def _tag(ds):
    """Mark every domain with its role so training inputs can be checked."""
    return dg.EvolvingDataset([replace(d, meta={**d.meta, "role": "source"}) for d in ds.sources],
                              [replace(d, meta={**d.meta, "role": "target"}) for d in ds.targets], dict(ds.meta))


def sources_only(ds):
    """The view handed to training code: source domains and nothing else."""
    for d in ds.sources:
        if d.meta.get("role") != "source":
            raise AssertionError(f"domain {d.index} reached training with role {d.meta.get('role')!r}")
    return dg.EvolvingDataset(list(ds.sources), [], dict(ds.meta))


def load_run_dataset(cfg, seed):
    if cfg.dataset_file:
        ds = dg.load_dataset(cfg.dataset_file)
    else:
        ds = GENERATORS[cfg.dataset](seed=seed, **cfg.data)
    return _tag(ds)


def dataset_spec(cfg):
    return {"dataset": cfg.dataset, "dataset_file": cfg.dataset_file, "data": dict(cfg.data)}


def dataset_from_spec(spec, seed):
    if spec.get("dataset_file"):
        return _tag(dg.load_dataset(spec["dataset_file"]))
    return _tag(GENERATORS[spec["dataset"]](seed=seed, **spec.get("data", {})))


# ---------------------------------------------------------------- one seed


def _checkpoint_path(cfg, seed):
    return Path(cfg.out_dir) / f"{cfg.method}_{cfg.dataset}_seed{seed}.edgckpt"


def _fit(cfg, seed, ds):
    """Train the configured method; returns (evaluate(horizon) -> accuracy, episodes_to_best)."""
    if cfg.method == "ldda":
        sol = ldda.solve_psi(sources_only(ds))
        return (lambda k: ldda.ldda_predict(sol.psi, ds, k)), 0
    tr, va = dg.split_train_val(ds, cfg.val_frac, seed)
    extra = {"seed": seed, "val_frac": cfg.val_frac, "method": cfg.method, "dataset_spec": dataset_spec(cfg)}
    path = _checkpoint_path(cfg, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    if cfg.method == "erm":
        model = init_erm(cfg.dda, ds.d_in, ds.n_classes, seed)
        model, elog = train_erm(model, sources_only(tr), cfg.erm, seed, sources_only(va))
        dda.save_checkpoint(path, model, cfg.dda, cfg.erm.steps, elog.best_val,
                            {**extra, "erm": {f.name: getattr(cfg.erm, f.name) for f in fields(ErmConfig)}})
        return (lambda k: erm_accuracy(model, ds, k)), elog.best_step
    mp = dda.init_model(cfg.dda, ds.d_in, ds.n_classes, seed)
    mp, tlog = dda.train(mp, sources_only(tr), cfg.dda, seed, sources_only(va))
    dda.save_checkpoint(path, mp, cfg.dda, cfg.dda.episodes, tlog.best_val, extra)
    return (lambda k: dda.infer_target(mp, tr, cfg.dda, k, va, seed)[1]), tlog.best_episode


def _error(exc):
    return f"error: {type(exc).__name__}: {exc}".replace("\n", " ")


def run_seed(cfg, seed):
    """Records for one seed; failures become error records instead of exceptions."""
    chash = config_hash(cfg)
    base = dict(method=cfg.method, dataset=cfg.dataset, seed=seed, config_hash=chash)
    t0 = time.perf_counter()
    try:
        evaluate, best = _fit(cfg, seed, load_run_dataset(cfg, seed))
    except Exception as exc:  # isolate the seed, keep the sweep going
        log.exception("seed %s failed", seed)
        wall = time.perf_counter() - t0
        return [ResultRecord(horizon=k, accuracy=float("nan"), wall_seconds=wall, status=_error(exc), **base)
                for k in cfg.horizons]
    out = []
    for k in cfg.horizons:
        try:
            acc, status = float(evaluate(k)), "ok"
        except Exception as exc:
            acc, status = float("nan"), _error(exc)
        out.append(ResultRecord(horizon=k, accuracy=acc, episodes_to_best=best,
                                wall_seconds=time.perf_counter() - t0, status=status, **base))
    return out


def _run_seed_job(args):
    return run_seed(*args)


def summarize(records, cfg):
    """One summary record per horizon: mean and unbiased std over the seeds that finished."""
    out = []
    for k in cfg.horizons:
        accs = [r.accuracy for r in records if r.horizon == k and r.ok and r.seed != "summary"]
        n = len(accs)
        mean = float(np.mean(accs)) if n else float("nan")
        std = float(np.std(accs, ddof=1)) if n >= 2 else float("nan")
        out.append(ResultRecord(cfg.method, cfg.dataset, "summary", k, mean, std=std, n_seeds=n,
                                config_hash=config_hash(cfg),
                                status="ok" if n == len(cfg.seeds) else f"error: {len(cfg.seeds) - n} seed(s) failed"))
    return out


def _fmt(v, digits=6):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.{digits}f}"
    return str(v)


def write_results(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c), 3 if c == "wall_seconds" else 6) for c in RESULT_COLUMNS])


def read_results(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def format_summary(rec):
    acc = _fmt(rec.accuracy, 3) or "nan"
    std = _fmt(rec.std, 3) or "nan"
    return f"{rec.method} {rec.dataset} horizon {rec.horizon}: {acc} ± {std} ({rec.n_seeds} seed(s)) [{rec.status}]"


def run_experiment(cfg, workers=None, results_name="results.csv", echo=print):
    """Train and evaluate every seed, write the results CSV, return all records.

    Seeds run in separate processes when more than one worker is allowed;
    the records are identical to a sequential run apart from wall-clock.
    """
    workers = min(max_workers() if workers is None else workers, len(cfg.seeds))
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed_job, jobs))
    else:
        per_seed = [_run_seed_job(j) for j in jobs]
    records = [r for recs in per_seed for r in recs]
    summary = summarize(records, cfg)
    records += summary
    write_results(records, Path(cfg.out_dir) / results_name)
    if echo is not None:
        for rec in summary:
            echo(format_summary(rec))
    return records


# ---------------------------------------------------------------- sweeps


def _sweep_target(cfg, axis):
    """(section, field name, current value) for a sweepable numeric axis.

    Bare names shared by the dda and erm sections mean the run method's own.
    """
    section, _, name = axis.rpartition(".")
    name = ALIASES.get(name, name)
    order = ("erm", "dda") if cfg.method == "erm" else ("dda", "erm")
    current = {
        "dda": {f.name: getattr(cfg.dda, f.name) for f in fields(DdaConfig)},
        "erm": {f.name: getattr(cfg.erm, f.name) for f in fields(ErmConfig)},
        "data": {n: cfg.data.get(n, p.default)
                 for n, p in inspect.signature(GENERATORS[cfg.dataset]).parameters.items() if n != "seed"},
        "run": {"val_frac": cfg.val_frac},
    }
    for sec in ((section,) if section else order + ("data", "run")):
        value = current.get(sec, {}).get(name)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return sec, name, value
    raise ConfigError(f"unknown or non-numeric sweep axis {axis!r}")


def with_value(cfg, axis, value):
    """Copy of ``cfg`` with the axis set to ``value`` (validated)."""
    sec, name, like = _sweep_target(cfg, axis)
    if isinstance(like, int):
        if float(value) != int(value):
            raise ConfigError(f"{axis} takes integers, got {value}")
        value = int(value)
    else:
        value = float(value)
    try:
        if sec == "dda":
            return replace(cfg, dda=replace(cfg.dda, **{name: value}))
        if sec == "erm":
            return replace(cfg, erm=replace(cfg.erm, **{name: value}))
        if sec == "data":
            return replace(cfg, data={**cfg.data, name: value})
        return replace(cfg, **{name: value})
    except ValueError as exc:
        raise ConfigError(f"{axis}={value}: {exc}") from exc


def parse_values(text):
    vals = [v.strip() for v in str(text).split(",") if v.strip()]
    out = []
    for v in vals:
        try:
            out.append(int(v))
        except ValueError:
            try:
                out.append(float(v))
            except ValueError:
                raise ConfigError(f"sweep value {v!r} is not a number") from None
    return out


def sweep(cfg, axis, values, workers=None, echo=print):
    """One run_experiment per value; returns and writes one summary row per (value, horizon)."""
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    points = [(v, with_value(cfg, axis, v)) for v in values]  # validate every point before running any
    rows = []
    for v, point in points:
        point = replace(point, out_dir=str(Path(cfg.out_dir) / f"{axis}={v}"))
        recs = run_experiment(point, workers=workers, echo=None)
        for s in (r for r in recs if r.seed == "summary"):
            rows.append({"axis": axis, "value": v, "method": s.method, "dataset": s.dataset, "horizon": s.horizon,
                         "accuracy": s.accuracy, "std": s.std, "n_seeds": s.n_seeds, "config_hash": s.config_hash})
            if echo is not None:
                echo(f"{axis}={v}: " + format_summary(s))
    path = Path(cfg.out_dir) / f"sweep_{axis}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
    return rows


# ---------------------------------------------------------------- boundary grids


def grid_points(bounds, resolution):
    x1min, x1max, x2min, x2max = bounds
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if not (x1min < x1max and x2min < x2max):
        raise ValueError(f"bounds must be increasing, got {bounds}")
    g1, g2 = np.meshgrid(np.linspace(x1min, x1max, resolution), np.linspace(x2min, x2max, resolution), indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


def boundary_grid(logits_fn, bounds, resolution, d_in=2):
    """Rows (x1, x2, predicted_class, logit_margin) over a resolution x resolution lattice.

    The margin is top-1 minus top-2 logit, signed toward class 1 for binary
    problems so the boundary is its zero level set.
    """
    if d_in != 2:
        raise ValueError(f"boundary grids need 2-D inputs, model takes {d_in}")
    pts = grid_points(bounds, resolution)
    logits = np.asarray(logits_fn(pts), dtype=np.float64)
    pred = logits.argmax(axis=1)
    if logits.shape[1] == 2:
        margin = logits[:, 1] - logits[:, 0]
    else:
        top = np.sort(logits, axis=1)
        margin = top[:, -1] - top[:, -2]
    return np.column_stack([pts, pred, margin])


def export_boundary_grid(path, logits_fn, bounds, resolution, d_in=2):
    rows = boundary_grid(logits_fn, bounds, resolution, d_in)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_COLUMNS)
        for x1, x2, c, m in rows:
            w.writerow([repr(float(x1)), repr(float(x2)), int(c), repr(float(m))])
    return rows


def checkpoint_logits_fn(model, cfg, manifest, horizon=1, ds=None):
    """Logit function of a checkpointed model, fast-adapted to ``horizon`` for DDA."""
    seed = int(manifest.get("seed", 0))
    if ds is None:
        ds = dataset_from_spec(manifest["dataset_spec"], seed)
    if manifest.get("model") == "erm":
        return lambda x: model.logits(x).data, ds
    tr, va = dg.split_train_val(ds, manifest.get("val_frac", 0.8), seed)
    params, _ = dda.infer_target(model, tr, cfg, horizon, va, seed)
    return (lambda x: dda.predict(model, params, x).data), ds


def evaluate_checkpoint(path, ds, horizon=1):
    """Target accuracy of a saved model on ``ds`` at ``horizon``."""
    model, cfg, manifest = dda.load_checkpoint(path)
    ds = _tag(ds)
    if manifest.get("model") == "erm":
        return erm_accuracy(model, ds, horizon)
    seed = int(manifest.get("seed", 0))
    tr, va = dg.split_train_val(ds, manifest.get("val_frac", 0.8), seed)
    return dda.infer_target(model, tr, cfg, horizon, va, seed)[1]
