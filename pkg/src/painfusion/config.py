"""Run configuration (YAML) with command-line overrides.

Relative paths are resolved against the config file's directory.  Keys::

    dataset: data/manifest.json     # required
    output: results                 # report directory
    seed: 7                         # required
    jobs: 1
    channel_sets: [[GF], [HOG], [GF, HOG]]
    external:                       # optional extra channels
      CNN: {path: cnn.csv, dim: 6144}
    mean_shape: train               # or full
    methods: [original, threshold, rebase, rebase_threshold]
    fusion:
      grid: [0.5, 1, 2, 4]
      undersample: true
      undersample_ratio: 2
      undersample_floor: 100
      second_level: rbf             # or linear
    rvm: {max_iter: 500, tol: 0.001, prune_threshold: 1.0e9}
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, IoError, MissingFrames
from .evaluation import METHODS
from .experiment import BUILTIN, ExperimentConfig
from .fusion import FusionOptions
from .rvm import RvmOptions
from .temporal import ExternalChannelSpec

_TOP = {"dataset", "output", "seed", "jobs", "channel_sets", "external", "mean_shape", "methods", "fusion", "rvm"}
_FUSION = {"grid", "undersample", "undersample_ratio", "undersample_floor", "second_level"}
_RVM = {"max_iter", "tol", "prune_threshold"}


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    seed: int
    output: str = "results"
    jobs: int = 0
    channel_sets: tuple = (("GF",), ("HOG",), ("GF", "HOG"))
    external: tuple = ()
    mean_shape: str = "train"
    methods: tuple = METHODS
    fusion: FusionOptions = field(default_factory=FusionOptions)

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(self.channel_sets, self.fusion, self.mean_shape, self.seed, self.jobs)


def _parse_sets(value):
    if isinstance(value, str):
        # "GF;HOG;GF,HOG"
        value = [part.split(",") for part in value.split(";")]
    try:
        sets = tuple(tuple(str(c).strip() for c in s) for s in value)
    except TypeError:
        raise ConfigError("channel_sets must be a list of channel lists") from None
    if not sets or any(not s or "" in s for s in sets):
        raise ConfigError("channel_sets must hold non-empty channel lists")
    return sets


def _unknown(keys, allowed, where):
    extra = sorted(set(keys) - allowed)
    if extra:
        raise ConfigError(f"unknown {where} key(s): {', '.join(extra)}")


def build_config(raw: dict, base_dir=".", overrides: dict | None = None) -> RunConfig:
    raw = dict(raw or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    _unknown(raw, _TOP, "config")
    if raw.get("dataset") is None:
        raise ConfigError("config needs a 'dataset' manifest path")
    if raw.get("seed") is None:
        raise ConfigError("config needs a 'seed'")
    base = Path(base_dir)

    def resolve(p):
        return os.fspath(base / p) if not os.path.isabs(p) else p

    fusion_raw = dict(raw.get("fusion") or {})
    rvm_raw = dict(raw.get("rvm") or {})
    _unknown(fusion_raw, _FUSION, "fusion")
    _unknown(rvm_raw, _RVM, "rvm")
    try:
        rvm = RvmOptions(**{k: (int(v) if k == "max_iter" else float(v)) for k, v in rvm_raw.items()})
        if "grid" in fusion_raw:
            fusion_raw["grid"] = tuple(float(m) for m in fusion_raw["grid"])
        fusion = FusionOptions(rvm=rvm, **fusion_raw)
        seed, jobs = int(raw["seed"]), int(raw.get("jobs", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None

    external = []
    for name, spec in sorted((raw.get("external") or {}).items()):
        if name in BUILTIN:
            raise ConfigError(f"external channel may not reuse the built-in name {name}")
        if not isinstance(spec, dict) or "path" not in spec or "dim" not in spec:
            raise ConfigError(f"external channel {name} needs 'path' and 'dim'")
        path = resolve(str(spec["path"]))
        if not os.path.isfile(path):
            raise MissingFrames(f"channel {name}: feature file not found: {path}", (), name)
        external.append(ExternalChannelSpec(name, int(spec["dim"]), path))

    sets = _parse_sets(raw.get("channel_sets", RunConfig.channel_sets))
    known = set(BUILTIN) | {e.channel for e in external}
    for s in sets:
        for ch in s:
            if ch not in known:
                raise MissingFrames(f"channel {ch}: not built in and not declared under 'external'", (), ch)
    methods = tuple(raw.get("methods", METHODS))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown post-processing method(s): {', '.join(bad)}")
    mode = raw.get("mean_shape", "train")
    if mode not in ("train", "full"):
        raise ConfigError(f"mean_shape must be 'train' or 'full', got {mode!r}")
    return RunConfig(
        dataset=resolve(str(raw["dataset"])), seed=seed, output=resolve(str(raw.get("output", "results"))),
        jobs=jobs, channel_sets=sets, external=tuple(external), mean_shape=mode,
        methods=methods, fusion=fusion,
    )


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(raw, Path(path).parent, overrides)
