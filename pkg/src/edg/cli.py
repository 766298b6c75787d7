"""Command line entry point ``edg``."""
from __future__ import annotations

import argparse
import csv
import inspect
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from edg import datagen as dg
from edg import dda, experiment, ldda
from edg.config import GENERATORS, ConfigError, parse_config

log = logging.getLogger("edg")


def _generator_args(dataset, pairs):
    params = inspect.signature(GENERATORS[dataset]).parameters
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"generator parameter {item!r} is not key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in params:
            raise ConfigError(f"unknown parameter {k!r} for {dataset}; valid: {', '.join(params)}")
        like = params[k].default
        out[k] = type(like)(v) if isinstance(like, (int, float)) and not isinstance(like, bool) else v
    return out


def cmd_gen(args):
    kw = _generator_args(args.dataset, args.param)
    kw.setdefault("seed", args.seed)
    ds = GENERATORS[args.dataset](**kw)
    ds.meta.setdefault("generator", args.dataset)
    dg.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.n_source} source + {ds.n_target} target domains, d={ds.d_in}")


def _load_cfg(args):
    overrides = list(args.set or [])
    cfg = parse_config(args.config, overrides)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=[args.seed])
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _status(records):
    return 0 if all(r.ok for r in records) else 3


def cmd_train(args):
    cfg = _load_cfg(args)
    records = experiment.run_experiment(cfg)
    print(f"results: {Path(cfg.out_dir) / 'results.csv'}")
    return _status(records)


def cmd_eval(args):
    acc = experiment.evaluate_checkpoint(args.checkpoint, dg.load_dataset(args.dataset), args.horizon)
    w = csv.writer(sys.stdout)
    w.writerow(["checkpoint", "horizon", "accuracy"])
    w.writerow([args.checkpoint, args.horizon, f"{acc:.6f}"])


def cmd_ldda(args):
    ds = dg.load_dataset(args.dataset)
    sol = ldda.solve_psi(ds)
    w = csv.writer(sys.stdout)
    w.writerow(["row", *(f"psi_{j}" for j in range(sol.psi.shape[1]))])
    for i, row in enumerate(sol.psi):
        w.writerow([i, *(repr(float(v)) for v in row)])
    w.writerow([])
    w.writerow(["residual", "condition"])
    w.writerow([repr(sol.residual), repr(sol.cond)])
    w.writerow([])
    w.writerow(["target_offset", "accuracy"])
    offsets = [args.target_offset] if args.target_offset else range(1, ds.n_target + 1)
    for k in offsets:
        w.writerow([k, f"{ldda.ldda_predict(sol.psi, ds, k):.6f}"])


def cmd_sweep(args):
    cfg = _load_cfg(args)
    rows = experiment.sweep(cfg, args.axis, experiment.parse_values(args.values))
    print(f"sweep: {Path(cfg.out_dir) / f'sweep_{args.axis}.csv'}")
    return 0 if all(r["n_seeds"] == len(cfg.seeds) for r in rows) else 3


def cmd_export_grid(args):
    model, cfg, manifest = dda.load_checkpoint(args.checkpoint)
    bounds = [float(v) for v in args.bounds.split(",")]
    if len(bounds) != 4:
        raise ConfigError("--bounds takes x1min,x1max,x2min,x2max")
    ds = dg.load_dataset(args.dataset) if args.dataset else None
    if ds is not None:
        ds = experiment._tag(ds)
    fn, _ = experiment.checkpoint_logits_fn(model, cfg, manifest, args.horizon, ds)
    out = args.out or str(Path(args.checkpoint).with_suffix(".grid.csv"))
    rows = experiment.export_boundary_grid(out, fn, bounds, args.resolution, model.phi.layer_dims[0])
    frac = float(np.mean(rows[:, 2] == 1))
    print(f"wrote {out}: {len(rows)} points, class-1 fraction {frac:.3f}")


def build_parser():
    p = argparse.ArgumentParser(prog="edg", description="Evolving domain generalization experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset file")
    g.add_argument("--dataset", required=True, choices=sorted(GENERATORS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("param", nargs="*", help="generator parameters as key=value")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train and evaluate every seed of a config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--horizon", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    ld = sub.add_parser("ldda", help="closed-form linear solver on a dataset file")
    ld.add_argument("--dataset", required=True)
    ld.add_argument("--target-offset", type=int, default=0)
    ld.set_defaults(func=cmd_ldda)

    s = sub.add_parser("sweep", help="run a config over values of one parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True)
    s.add_argument("--out")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-grid", help="decision-boundary lattice of a checkpoint as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--resolution", type=int, default=100)
    x.add_argument("--bounds", required=True)
    x.add_argument("--horizon", type=int, default=1)
    x.add_argument("--dataset", help="dataset file (default: regenerate from the checkpoint)")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export_grid)
    return p


def _glue_negative_values(argv):
    # "--bounds -3,3,-3,3" would otherwise read as an unknown option
    out = list(argv)
    for i, tok in enumerate(out[:-1]):
        if tok == "--bounds" and out[i + 1].startswith("-"):
            out[i:i + 2] = [f"--bounds={out[i + 1]}"]
            break
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(_glue_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except (ConfigError, ValueError, IndexError, OSError) as exc:
        print(f"edg {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
