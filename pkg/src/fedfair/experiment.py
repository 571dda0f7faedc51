"""Flat experiment configs: dataset + split + methods in one mapping.

A config is a flat dict whose keys mirror the CLI flags, so the same file
drives ``fedfair train --config`` and library code. It is read from JSON or
from ``key = value`` lines (values parsed as JSON where possible, ``#``
starts a comment). Bundled configs live in :mod:`fedfair.fixtures` and can
be named without a path, e.g. ``blobs_ds3``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .dataset import Dataset, load_idx, synth_blobs
from .datasplit import PartitionManifest, SplitSpec, Strategy, split
from .errors import InvalidSpec
from .fedsim import FedConfig, Method, run_suite
from .fixtures import FIXTURE_DIR
from .nnet import TrainingConfig
from .table import AccuracyTable

SEED_ENV = "FEDFAIR_SEED"

# FedConfig fields settable from a flat config (everything but method/training).
FED_KEYS = tuple(f.name for f in fields(FedConfig) if f.name not in ("method", "training"))
TRAIN_KEYS = ("batch_size", "local_epochs", "learning_rate")
SPLIT_KEYS = {
    "clients": "num_clients", "k": None, "ds1_overlap_k": "ds1_overlap_k",
    "ds1_samples_per_client": "ds1_samples_per_client", "alpha": "dirichlet_alpha",
    "prior": "dirichlet_prior", "max_redraws": "max_redraws", "mu": "lognormal_mu",
    "sigma": "lognormal_sigma", "min_per_class": "ds3_min_per_class", "ds4_k": "ds4_k",
}
DATA_KEYS = ("dataset", "num_classes", "dim", "per_class", "spread", "noise", "images", "labels", "data_csv")
OTHER_KEYS = ("seed", "strategy", "methods", "manifest", "split_id")
KNOWN_KEYS = set(FED_KEYS) | set(TRAIN_KEYS) | set(SPLIT_KEYS) | set(DATA_KEYS) | set(OTHER_KEYS)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidSpec(f"bad JSON config: {e}") from None
    else:
        cfg = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidSpec(f"config line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg[key] = _parse_value(value)
    return normalize(cfg)


def normalize(cfg: dict) -> dict:
    out = {}
    for key, value in cfg.items():
        k = key.replace("-", "_")
        if k not in KNOWN_KEYS:
            raise InvalidSpec(f"unknown config key {key!r}")
        out[k] = value
    return out


def resolve_config_path(name) -> Path:
    p = Path(name)
    if p.exists():
        return p
    for cand in (FIXTURE_DIR / name, FIXTURE_DIR / f"{name}.json"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"config not found: {name}")


def load_config(name) -> dict:
    return parse_config_text(resolve_config_path(name).read_text())


def resolve_seed(cfg: dict) -> int:
    """Explicit seed, else $FEDFAIR_SEED, else 0."""
    if cfg.get("seed") is not None:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise InvalidSpec(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def build_dataset(cfg: dict, seed: int) -> Dataset:
    kind = cfg.get("dataset", "blobs")
    if kind == "blobs":
        return synth_blobs(int(cfg.get("num_classes", 3)), int(cfg.get("dim", 2)), int(cfg.get("per_class", 100)),
                           spread=float(cfg.get("spread", 5.0)), seed=seed, noise=float(cfg.get("noise", 1.0)))
    if kind == "idx":
        if not cfg.get("images") or not cfg.get("labels"):
            raise InvalidSpec("dataset idx needs images and labels")
        return load_idx(cfg["images"], cfg["labels"], cfg.get("num_classes"))
    if kind == "csv":
        if not cfg.get("data_csv"):
            raise InvalidSpec("dataset csv needs data_csv")
        return Dataset.from_csv(cfg["data_csv"], cfg.get("num_classes"))
    raise InvalidSpec(f"unknown dataset kind {kind!r}; valid: blobs, idx, csv")


def split_spec(cfg: dict, seed: int) -> SplitSpec:
    if cfg.get("strategy") is None:
        raise InvalidSpec("strategy is required")
    if cfg.get("clients") is None:
        raise InvalidSpec("clients is required")
    strategy = Strategy.parse(cfg["strategy"])
    kw = {}
    for key, attr in SPLIT_KEYS.items():
        if cfg.get(key) is None or attr is None:
            continue
        kw[attr] = tuple(cfg[key]) if attr == "dirichlet_prior" else cfg[key]
    if cfg.get("k") is not None:
        # --k means the overlap for DS1 and the per-class count for DS4
        if strategy is Strategy.DS1:
            kw["ds1_overlap_k"] = cfg["k"]
        elif strategy is Strategy.DS4:
            kw["ds4_k"] = cfg["k"]
        else:
            raise InvalidSpec("k applies to ds1 and ds4 only")
    return SplitSpec(strategy, seed=seed, **kw)


def parse_methods(value) -> list[Method]:
    if value is None:
        return [Method.FEDPER, Method.PERFEDAVG, Method.PFEDME]
    names = value.split(",") if isinstance(value, str) else list(value)
    return [Method.parse(n.strip()) for n in names if str(n).strip()]


def fed_configs(cfg: dict, seed: int) -> list[FedConfig]:
    tkw = {k: cfg[k] for k in TRAIN_KEYS if cfg.get(k) is not None}
    training = TrainingConfig(seed=seed, **tkw)
    fkw = {k: cfg[k] for k in FED_KEYS if cfg.get(k) is not None}
    if "fractions" in fkw:
        fkw["fractions"] = tuple(float(x) for x in fkw["fractions"])
    return [FedConfig(method=m, training=training, **fkw) for m in parse_methods(cfg.get("methods"))]


@dataclass
class Experiment:
    seed: int
    dataset: Dataset
    manifest: PartitionManifest
    configs: list[FedConfig]
    split_id: str = ""

    def run(self) -> AccuracyTable:
        return run_suite(self.dataset, self.manifest, self.configs, self.split_id)


def build_experiment(cfg: dict) -> Experiment:
    cfg = normalize(cfg)
    seed = resolve_seed(cfg)
    ds = build_dataset(cfg, seed)
    if cfg.get("manifest"):
        manifest = PartitionManifest.load(cfg["manifest"])
        manifest.check(ds.labels)
        split_id = cfg.get("split_id", manifest.spec.strategy.value)
    else:
        spec = split_spec(cfg, seed)
        manifest = split(ds.labels, spec, ds.num_classes)
        split_id = cfg.get("split_id", spec.strategy.value)
    return Experiment(seed, ds, manifest, fed_configs(cfg, seed), split_id)


def bundled_blobs(seed: int | None = None) -> Experiment:
    """The pinned desk-scale scenario: 3-class blobs, 10 clients, DS3."""
    cfg = load_config("blobs_ds3")
    if seed is not None:
        cfg["seed"] = seed
    return build_experiment(cfg)
