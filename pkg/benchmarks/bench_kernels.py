"""Compiled vs numpy softmax kernels, alone and inside a full training episode.

    python benchmarks/bench_kernels.py [--repeat N]

The episode-level numbers spawn a fresh interpreter per backend so that the
backend chosen at import (EDG_PURE_PYTHON) applies to the whole autodiff stack.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from edg import kernels

EPISODE = """
import timeit
from edg import dda, kernels
from edg.datagen import gen_rotated_gaussian, split_train_val
from edg.rng import stream
cfg = dda.DdaConfig()
tr, _ = split_train_val(gen_rotated_gaussian(seed=0), 0.8, 0)
mp = dda.init_model(cfg, 2, 2, 0)
rng = stream(0, "bench")
def one():
    batch = dda.sample_batch(tr.sources, cfg.batch_size, rng)
    dda.train_episode(mp, batch, cfg, dda.select_pairs(batch.T, cfg, rng))
one()
n = {n}
print(kernels.BACKEND, min(timeit.repeat(one, number=n, repeat=3)) / n)
"""


def kernel_rows(repeat):
    rng = np.random.default_rng(0)
    out = []
    for shape in [(16, 2), (28 * 16, 29 * 16), (4096, 10)]:
        x = rng.normal(size=shape)
        g = rng.normal(size=shape)
        for name in ("softmax", "log_softmax"):
            fwd, vjp = getattr(kernels, name), getattr(kernels, name + "_vjp")
            for backend in kernels.available_backends():
                t_f = min(timeit.repeat(lambda: fwd(x, backend=backend), number=repeat, repeat=3)) / repeat
                y = fwd(x, backend=backend)
                t_b = min(timeit.repeat(lambda: vjp(y, g, backend=backend), number=repeat, repeat=3)) / repeat
                out.append((name, f"{shape[0]}x{shape[1]}", backend, t_f * 1e6, t_b * 1e6))
    return out


def episode_rows(n):
    out = []
    for backend, env in (("python", {"EDG_PURE_PYTHON": "1"}), ("compiled", {"EDG_PURE_PYTHON": ""})):
        res = subprocess.run([sys.executable, "-c", EPISODE.format(n=n)], env={**os.environ, **env},
                             capture_output=True, text=True, check=True)
        got, secs = res.stdout.split()
        if got != backend:
            print(f"note: {backend} requested but {got} loaded (extension not built?)")
            continue
        out.append((backend, float(secs) * 1e3))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--episodes", type=int, default=5)
    args = ap.parse_args()
    print(f"available backends: {', '.join(kernels.available_backends())}")
    print(f"{'kernel':<12} {'shape':<10} {'backend':<9} {'fwd us':>9} {'vjp us':>9}")
    for name, shape, backend, f, b in kernel_rows(args.repeat):
        print(f"{name:<12} {shape:<10} {backend:<9} {f:9.2f} {b:9.2f}")
    print()
    rows = episode_rows(args.episodes)
    for backend, ms in rows:
        print(f"rotated_gaussian episode ({backend}): {ms:.1f} ms")
    if len(rows) == 2:
        print(f"episode speedup compiled/python: {rows[0][1] / rows[1][1]:.2f}x")


if __name__ == "__main__":
    main()
