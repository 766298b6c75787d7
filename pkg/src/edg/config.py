"""Run configuration: key=value text with sections, and per-dataset defaults.

A config file looks like::

    [run]
    method = dda
    dataset = sine
    seeds = 0,1,2,3,4

    [dda]
    lambda = 0.8

Keys before the first section header, or given as ``--set key=value`` on the
command line, are routed to whichever section owns that key name. Anything
left unset takes the defaults for the chosen dataset.
"""
from __future__ import annotations

import configparser
import hashlib
import inspect
from dataclasses import dataclass, field, fields

from edg import datagen
from edg.dda import DdaConfig

METHODS = ("dda", "ldda", "erm")

GENERATORS = {
    "rotated_gaussian": datagen.gen_rotated_gaussian,
    "sine": datagen.gen_sine,
    "rotating_images": datagen.load_rotating_images,
}

# per-dataset hyperparameters for the toy benchmarks; the image entry is our own choice
DATASET_DEFAULTS = {
    "rotated_gaussian": dict(alpha=2.0, beta=0.001, lam=0.5, transformer_dims=[2, 4, 4, 2], episodes=2000),
    "sine": dict(alpha=0.5, beta=0.01, lam=0.8, transformer_dims=[2, 16, 16, 2], episodes=3000, standardize=True,
                 activation="tanh"),
    "rotating_images": dict(alpha=0.5, beta=0.001, lam=0.5, feature_dims=[784, 32], transformer_dims=[32, 32, 32],
                            episodes=1000, batch_size=32),
}

ALIASES = {"lambda": "lam", "tau": "tau_temp"}


class ConfigError(ValueError):
    pass


@dataclass
class ErmConfig:
    lr: float = 0.01
    steps: int = 1000
    batch_size: int = 64
    eval_every: int = 50
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("steps must be >= 0; batch_size and eval_every >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


@dataclass
class RunConfig:
    method: str = "dda"
    dataset: str = "rotated_gaussian"
    dataset_file: str = ""
    data: dict = field(default_factory=dict)
    dda: DdaConfig = field(default_factory=DdaConfig)
    erm: ErmConfig = field(default_factory=ErmConfig)
    seeds: list = field(default_factory=lambda: [0])
    horizons: list = field(default_factory=lambda: [1])
    val_frac: float = 0.8
    out_dir: str = "runs"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}; got {self.method!r}")
        if self.dataset not in GENERATORS:
            raise ConfigError(f"dataset must be one of {', '.join(GENERATORS)}; got {self.dataset!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError(f"horizons must be positive integers, got {self.horizons}")
        if not 0 < self.val_frac < 1:
            raise ConfigError(f"val_frac must be in (0, 1), got {self.val_frac}")
        allowed = data_keys(self.dataset)
        bad = sorted(set(self.data) - set(allowed))
        if bad:
            raise ConfigError(f"unknown data key(s) {bad} for {self.dataset}; valid keys: {', '.join(allowed)}")


def data_keys(dataset):
    sig = inspect.signature(GENERATORS[dataset])
    return [n for n in sig.parameters if n != "seed"]


RUN_KEYS = ("method", "dataset", "dataset_file", "seeds", "horizons", "val_frac", "out_dir")
DDA_KEYS = tuple(f.name for f in fields(DdaConfig))
ERM_KEYS = tuple(f.name for f in fields(ErmConfig))
SECTIONS = ("run", "data", "dda", "erm")
TOP = "__top__"  # keys before any section header


def _owner(key, dataset):
    """Section that owns a bare key."""
    if key in RUN_KEYS:
        return "run"
    if key in DDA_KEYS:
        return "dda"
    if key in ERM_KEYS:
        return "erm"
    if key in data_keys(dataset):
        return "data"
    return None


def _int_list(text):
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def _coerce(value, like):
    """Parse text ``value`` to the type of the default ``like``."""
    if isinstance(like, bool):
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, list):
        return _int_list(value)
    return str(value).strip()


def _data_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip()


def _read_sections(text):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{TOP}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message}") from exc
    out = {}
    for sec in parser.sections():
        if sec == TOP:
            out[None] = dict(parser.items(sec))
            continue
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]; valid sections: {', '.join(SECTIONS)}")
        out[sec] = dict(parser.items(sec))
    return out


def build(entries):
    """RunConfig from ``(section_or_None, key, text_value)`` triples; later entries win."""
    dataset = "rotated_gaussian"
    for sec, key, val in entries:
        if key == "dataset" and sec in (None, "run"):
            dataset = val.strip()
    if dataset not in GENERATORS:
        raise ConfigError(f"dataset must be one of {', '.join(GENERATORS)}; got {dataset!r}")
    valid = {"run": RUN_KEYS, "dda": DDA_KEYS, "erm": ERM_KEYS, "data": tuple(data_keys(dataset))}
    chosen = {s: {} for s in SECTIONS}
    for sec, key, val in entries:
        key = key.strip()
        if sec is None and "." in key:
            # dotted form, e.g. erm.batch_size, for keys several sections share
            sec, key = key.split(".", 1)
            if sec not in valid:
                raise ConfigError(f"unknown section {sec!r} in key; valid sections: {', '.join(SECTIONS)}")
        key = ALIASES.get(key, key)
        owner = sec if sec in ("dda", "erm", "data") else _owner(key, dataset)
        if owner is None or key not in valid[owner]:
            keys = valid[owner] if owner else sorted(set(RUN_KEYS + DDA_KEYS + ERM_KEYS + valid["data"]))
            raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(keys)}")
        chosen[owner][key] = val
    try:
        dda_kw = dict(DATASET_DEFAULTS[dataset])
        base = DdaConfig()
        for k, v in chosen["dda"].items():
            dda_kw[k] = _coerce(v, getattr(base, k))
        if "feature_dims" not in chosen["dda"] and dataset != "rotating_images":
            dda_kw.setdefault("feature_dims", [2])
        erm_base = ErmConfig()
        erm_kw = {k: _coerce(v, getattr(erm_base, k)) for k, v in chosen["erm"].items()}
        run = chosen["run"]
        return RunConfig(
            method=run.get("method", "dda").strip(),
            dataset=dataset,
            dataset_file=run.get("dataset_file", "").strip(),
            data={k: _data_value(v) for k, v in chosen["data"].items()},
            dda=DdaConfig(**dda_kw),
            erm=ErmConfig(**erm_kw),
            seeds=_int_list(run["seeds"]) if "seeds" in run else [0],
            horizons=_int_list(run["horizons"]) if "horizons" in run else [1],
            val_frac=float(run.get("val_frac", 0.8)),
            out_dir=run.get("out_dir", "runs").strip(),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_text(text, overrides=()):
    """Parse config text; ``overrides`` are ``key=value`` strings applied last."""
    entries = []
    for sec, items in _read_sections(text).items():
        entries += [(sec, k, v) for k, v in items.items()]
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        entries.append((None, k.strip(), v.strip()))
    return build(entries)


def parse_config(path, overrides=()):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, overrides)


def _fmt(v):
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


def serialize(cfg):
    """Complete config text; ``parse_text(serialize(cfg)) == cfg``."""
    lines = ["[run]"]
    for k in RUN_KEYS:
        lines.append(f"{k} = {_fmt(getattr(cfg, k))}")
    lines += ["", "[data]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in sorted(cfg.data.items())]
    lines += ["", "[dda]"]
    lines += [f"{k} = {_fmt(getattr(cfg.dda, k))}" for k in DDA_KEYS]
    lines += ["", "[erm]"]
    lines += [f"{k} = {_fmt(getattr(cfg.erm, k))}" for k in ERM_KEYS]
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    """Short digest of everything that affects results (seeds and output paths excluded)."""
    text = serialize(cfg)
    keep = [ln for ln in text.splitlines() if not ln.startswith(("seeds ", "out_dir ", "horizons "))]
    return hashlib.sha256("\n".join(keep).encode("utf-8")).hexdigest()[:12]
