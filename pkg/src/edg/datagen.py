"""Synthetic evolving-domain benchmarks, rotated-image ingestion and dataset files.

Datasets keep source and target domains in separate lists; every training
path in this package reads ``sources`` only.
"""
from __future__ import annotations

import gzip
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from edg.rng import stream

MAGIC = b"EDGDATA1"


@dataclass
class DomainSamples:
    index: int
    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.y)


@dataclass
class EvolvingDataset:
    sources: list
    targets: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        doms = self.sources + self.targets
        if not doms:
            raise ValueError("dataset has no domains")
        idx = [d.index for d in doms]
        if idx != list(range(1, len(doms) + 1)):
            raise ValueError(f"domain indices must be 1..{len(doms)} in order, got {idx}")
        d_in = doms[0].x.shape[1]
        for d in doms:
            if d.x.ndim != 2 or d.x.shape[1] != d_in or len(d.y) != d.x.shape[0]:
                raise ValueError(f"domain {d.index}: inconsistent shapes x={d.x.shape} y={d.y.shape}")

    @property
    def n_source(self):
        return len(self.sources)

    @property
    def n_target(self):
        return len(self.targets)

    @property
    def d_in(self):
        return self.sources[0].x.shape[1] if self.sources else self.targets[0].x.shape[1]

    @property
    def n_classes(self):
        if "n_classes" in self.meta:
            return int(self.meta["n_classes"])
        return int(max(int(d.y.max()) for d in self.sources + self.targets if d.n) + 1)

    def domain(self, index):
        doms = self.sources + self.targets
        if not 1 <= index <= len(doms):
            raise IndexError(f"no domain {index}; dataset has 1..{len(doms)}")
        return doms[index - 1]

    def target(self, horizon):
        if not 1 <= horizon <= self.n_target:
            raise IndexError(f"horizon {horizon} requested but dataset has {self.n_target} target domain(s)")
        return self.targets[horizon - 1]


def _assemble(domains, n_target, meta):
    if n_target < 1 or n_target >= len(domains):
        raise ValueError(f"n_target must be in [1, {len(domains) - 1}], got {n_target}")
    k = len(domains) - n_target
    return EvolvingDataset(domains[:k], domains[k:], meta)


def rotation_matrix(deg):
    """Matrix ``M`` with ``x_row @ M`` = ``x`` rotated counterclockwise by ``deg``."""
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, s], [-s, c]])


def boundary_normal(t, delta_deg):
    """Unit normal of domain ``t``'s boundary (+y for t=1)."""
    a = math.radians((t - 1) * delta_deg)
    return np.array([-math.sin(a), math.cos(a)])


def gen_rotated_gaussian(n_domains=30, n_per_domain=125, delta_deg=12.0, seed=0, n_target=1):
    """2-D standard normal points; domain t labels by the side of a line rotated (t-1)*delta_deg."""
    if n_domains < 2 or n_per_domain < 2:
        raise ValueError("need n_domains >= 2 and n_per_domain >= 2")
    params = {"n_domains": n_domains, "n_per_domain": n_per_domain, "delta_deg": float(delta_deg), "n_target": n_target}
    domains = []
    for t in range(1, n_domains + 1):
        x = stream(seed, "rotated_gaussian", t).standard_normal((n_per_domain, 2))
        y = (x @ boundary_normal(t, delta_deg) > 0).astype(np.int64)
        domains.append(DomainSamples(t, x, y, {"generator": "rotated_gaussian", "angle_deg": (t - 1) * delta_deg}))
    meta = {"generator": "rotated_gaussian", "params": params, "seed": seed, "n_classes": 2}
    return _assemble(domains, n_target, meta)


def sine_label(x, amplitude=1.0):
    return (x[:, 1] > amplitude * np.sin(x[:, 0])).astype(np.int64)


def gen_sine(n_domains=11, n_per_domain=200, seed=0, amplitude=1.0, margin=0.5, n_target=1):
    """Domain t is the strip x1 in [(t-1)pi/3, t pi/3); label is x2 > A sin(x1)."""
    if n_domains < 2 or n_per_domain < 2:
        raise ValueError("need n_domains >= 2 and n_per_domain >= 2")
    params = {"n_domains": n_domains, "n_per_domain": n_per_domain, "amplitude": amplitude, "margin": margin, "n_target": n_target}
    width = math.pi / 3
    top = amplitude + margin
    domains = []
    for t in range(1, n_domains + 1):
        r = stream(seed, "sine", t)
        x1 = r.uniform((t - 1) * width, t * width, n_per_domain)
        x2 = r.uniform(-top, top, n_per_domain)
        x = np.column_stack([x1, x2])
        domains.append(DomainSamples(t, x, sine_label(x, amplitude), {"generator": "sine"}))
    meta = {"generator": "sine", "params": params, "seed": seed, "n_classes": 2}
    return _assemble(domains, n_target, meta)


# ---------------------------------------------------------------- IDX images


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path):
    """Read an IDX file (big-endian; 0x0803 images or 0x0801 labels) as a uint8 array."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim not in (1, 3):
        raise ValueError(f"{path}: bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise ValueError(f"{path}: truncated IDX dims")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head != count:
        raise ValueError(f"{path}: dims {dims} need {count} bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim not in (1, 3):
        raise ValueError("IDX writer supports 1-D labels or 3-D image stacks")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def rotate_image(img, deg):
    """Rotate a 2-D image counterclockwise about its center; bilinear, zero padded."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source location (image rows grow downward)
    dx, dy = xx - cx, yy - cy
    sx = c * dx - s * dy + cx
    sy = s * dx + c * dy + cy
    x0, y0 = np.floor(sx).astype(np.int64), np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = img

    def at(yi, xi):
        ok = (yi >= -1) & (yi <= h) & (xi >= -1) & (xi <= w)
        vals = padded[np.clip(yi + 1, 0, h + 1), np.clip(xi + 1, 0, w + 1)]
        return np.where(ok, vals, 0.0)

    return (at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x0 + 1) * fx * (1 - fy)
            + at(y0 + 1, x0) * (1 - fx) * fy + at(y0 + 1, x0 + 1) * fx * fy)


def load_rotating_images(idx_images_path, idx_labels_path, n_domains=6, n_per_domain=800, delta_deg=15.0, seed=0, n_target=1):
    """Rotated-digit domains: domain t holds images rotated by (t-1)*delta_deg, pixels in [0, 1]."""
    images = read_idx(idx_images_path)
    labels = read_idx(idx_labels_path)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError(f"image/label files disagree: {images.shape} vs {labels.shape}")
    if n_per_domain > len(images):
        raise ValueError(f"requested {n_per_domain} samples per domain but file holds {len(images)}")
    domains = []
    for t in range(1, n_domains + 1):
        pick = stream(seed, "rotating_images", t).choice(len(images), n_per_domain, replace=False)
        angle = (t - 1) * delta_deg
        x = np.stack([rotate_image(images[i] / 255.0, angle).reshape(-1) for i in pick])
        domains.append(DomainSamples(t, x, labels[pick].astype(np.int64), {"generator": "rotating_images", "angle_deg": angle}))
    params = {"n_domains": n_domains, "n_per_domain": n_per_domain, "delta_deg": float(delta_deg), "n_target": n_target,
              "image_shape": list(images.shape[1:])}
    meta = {"generator": "rotating_images", "params": params, "seed": seed, "n_classes": int(labels.max()) + 1}
    return _assemble(domains, n_target, meta)


# ---------------------------------------------------------------- splits


def split_train_val(ds, frac=0.8, seed=0):
    """Random per-domain split of source domains; targets are copied into both halves."""
    if not 0 < frac < 1:
        raise ValueError(f"frac must be in (0, 1), got {frac}")
    train, val = [], []
    for d in ds.sources:
        if d.n < 2:
            raise ValueError(f"source domain {d.index} has {d.n} sample(s); need at least 2 to split")
        n_train = min(max(int(round(frac * d.n)), 1), d.n - 1)
        perm = stream(seed, "split", d.index).permutation(d.n)
        tr, va = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        train.append(replace(d, x=d.x[tr], y=d.y[tr], meta={**d.meta, "rows": tr.tolist()}))
        val.append(replace(d, x=d.x[va], y=d.y[va], meta={**d.meta, "rows": va.tolist()}))
    return (EvolvingDataset(train, list(ds.targets), dict(ds.meta)),
            EvolvingDataset(val, list(ds.targets), dict(ds.meta)))


# ---------------------------------------------------------------- EDGDATA1 files
#
# magic "EDGDATA1" | u32 n_domains | u32 n_source | u32 d_in
# per domain: u32 index | u32 n | fp64[n*d_in] x (row-major) | fp64[n] y
# u32 json_len | utf-8 JSON metadata (generator, params, seed, ...)
# all integers and floats little-endian


def save_dataset(ds, path):
    doms = ds.sources + ds.targets
    parts = [MAGIC, struct.pack("<III", len(doms), ds.n_source, ds.d_in)]
    for d in doms:
        parts.append(struct.pack("<II", d.index, d.n))
        parts.append(np.ascontiguousarray(d.x, dtype="<f8").tobytes())
        parts.append(np.asarray(d.y, dtype="<f8").tobytes())
    meta = json.dumps(ds.meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an EDGDATA1 file")
    n_dom, n_src, d_in = struct.unpack_from("<III", raw, 8)
    off = 20
    domains = []
    for _ in range(n_dom):
        idx, n = struct.unpack_from("<II", raw, off)
        off += 8
        x = np.frombuffer(raw, dtype="<f8", count=n * d_in, offset=off).reshape(n, d_in).astype(np.float64)
        off += 8 * n * d_in
        y = np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(np.int64)
        off += 8 * n
        domains.append(DomainSamples(idx, x, y))
    (mlen,) = struct.unpack_from("<I", raw, off)
    meta = json.loads(raw[off + 4: off + 4 + mlen].decode("utf-8"))
    gen = meta.get("generator", "")
    for d in domains:
        d.meta = {"generator": gen}
    return EvolvingDataset(domains[:n_src], domains[n_src:], meta)
