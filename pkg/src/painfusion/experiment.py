"""Per-fold feature extraction, training and the full LOSO run."""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .dataset import DatasetManifest
from .errors import BadInput, MissingFrames
from .evaluation import EvaluationReport, Fold, SubjectResult, audit_leakage, loso_folds
from .fusion import FusionModel, FusionOptions, predict_pipeline, prepare_training_rows, train_channel_regressor, train_fusion
from .geometry import GF_DIM, geometric_matrix
from .hog import HOG_DIM, extract_hog
from .registration import MeanShape, canonical_template, compute_mean_shape, register_face
from .temporal import FeatureTable

log = logging.getLogger("painfusion")

BUILTIN = {"GF": GF_DIM, "HOG": HOG_DIM}


def set_name(channels) -> str:
    return "_".join(channels)


@dataclass(frozen=True)
class ExperimentConfig:
    channel_sets: tuple = (("GF",), ("HOG",), ("GF", "HOG"))
    fusion: FusionOptions = field(default_factory=FusionOptions)
    mean_shape_mode: str = "train"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        sets = tuple(tuple(s) for s in self.channel_sets)
        if not sets or any(not s for s in sets):
            raise BadInput("channel sets must be non-empty")
        if self.mean_shape_mode not in ("train", "full"):
            raise BadInput(f"mean shape mode must be 'train' or 'full', got {self.mean_shape_mode!r}")
        object.__setattr__(self, "channel_sets", sets)

    @property
    def channels(self) -> tuple:
        seen = []
        for s in self.channel_sets:
            seen += [c for c in s if c not in seen]
        return tuple(seen)


def fold_mean_shape(dataset: DatasetManifest, train_subjects, mode: str = "train") -> MeanShape:
    subjects = set(dataset.subjects if mode == "full" else train_subjects)
    frames = [f.landmark_frame() for f in dataset.frames if f.subject_id in subjects]
    return compute_mean_shape(frames, mode=mode)


def extract_features(dataset: DatasetManifest, mean: MeanShape, frame_ids=None, channels=("GF", "HOG")) -> dict:
    """GF and HOG tables for ``frame_ids`` registered against ``mean``."""
    frame_ids = [f.frame_id for f in dataset.frames] if frame_ids is None else list(frame_ids)
    template = canonical_template(mean)
    aligned = [register_face(dataset.image(fid), dataset.frame(fid).landmark_frame(), template) for fid in frame_ids]
    out = {}
    if "GF" in channels:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gf, _ = geometric_matrix(np.stack([a.landmarks for a in aligned]).reshape(-1, 66, 2), template)
        out["GF"] = FeatureTable("GF", GF_DIM, frame_ids, gf)
    if "HOG" in channels:
        hog = [extract_hog(a.image, a.landmarks) for a in aligned]
        out["HOG"] = FeatureTable("HOG", HOG_DIM, frame_ids, np.array(hog).reshape(-1, HOG_DIM))
    return out


@dataclass
class FoldOutput:
    test: str
    frame_ids: tuple
    truth: np.ndarray
    predictions: dict
    models: dict
    artifacts: dict


def _fold_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def run_fold(dataset: DatasetManifest, fold: Fold, index: int, config: ExperimentConfig,
             external: Mapping | None = None) -> FoldOutput:
    prefix = f"[fold {index + 1} {fold.test}]"
    train_ids = [f.frame_id for f in dataset.frames if f.subject_id in fold.train]
    test_ids = [f.frame_id for f in dataset.frames if f.subject_id == fold.test]
    mean = fold_mean_shape(dataset, fold.train, config.mean_shape_mode)
    log.info("%s mean shape from %d subjects", prefix, len(mean.subjects))
    builtin = [c for c in config.channels if c in BUILTIN]
    tables = extract_features(dataset, mean, train_ids + test_ids, builtin) if builtin else {}
    for ch in config.channels:
        if ch in BUILTIN:
            continue
        if not external or ch not in external:
            raise MissingFrames(f"channel {ch}: no feature table supplied", (), ch)
        tables[ch] = external[ch]
    log.info("%s features: %s", prefix, ", ".join(f"{c}={tables[c].dim}" for c in config.channels))

    opts = replace(config.fusion, undersample_seed=_fold_seed(config.seed, index))
    labels = dataset.labels(train_ids)
    groups = np.array([dataset.frame(f).subject_id for f in train_ids])
    keep = prepare_training_rows(labels, opts)
    artifacts = {
        "mean_shape": sorted(dataset.subjects) if mean.mode == "full" else sorted(mean.subjects),
        "undersample": sorted(set(groups[keep].tolist())),
    }
    fits = {}
    for ch in config.channels:
        X = tables[ch].rows(train_ids)[keep]
        fits[ch] = train_channel_regressor(X, labels[keep], groups[keep], ch, opts.grid, opts.rvm)
        artifacts[f"channel:{ch}"] = sorted(fits[ch].provenance | fits[ch].model.provenance)
        log.info("%s channel %s: width x%g, %d relevance vectors", prefix, ch, fits[ch].multiplier, fits[ch].model.n_relevance)

    predictions, models = {}, {}
    for cs in config.channel_sets:
        name = set_name(cs)
        if len(cs) == 1:
            # a single channel is reported as its own regressor
            model = FusionModel(cs, (fits[cs[0]],), None, {"widths": {cs[0]: fits[cs[0]].width}})
        else:
            model = train_fusion(tables, train_ids, labels, groups, cs, opts, fits)
        if model.second_level is not None:
            artifacts[f"fusion:{name}"] = sorted(model.second_level.provenance)
        predictions[name] = predict_pipeline(model, tables, test_ids)
        models[name] = model
    truth = dataset.labels(test_ids)
    log.info("%s done", prefix)
    return FoldOutput(fold.test, tuple(test_ids), truth, predictions, models, artifacts)


def _run_fold_job(args):
    return run_fold(*args)


def run_folds(dataset: DatasetManifest, config: ExperimentConfig, external: Mapping | None = None) -> list:
    folds = loso_folds(dataset.subjects)
    jobs = [(dataset, fold, i, config, external) for i, fold in enumerate(folds)]
    workers = max(1, min(config.jobs or os.cpu_count() or 1, len(jobs)))
    if workers == 1:
        return [run_fold(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_fold_job, jobs))


def run_loso(dataset: DatasetManifest, config: ExperimentConfig, external: Mapping | None = None):
    """Full leave-one-subject-out run; returns ``(report, fold outputs)``."""
    outputs = run_folds(dataset, config, external)
    records = [{"test": o.test, "artifacts": o.artifacts} for o in outputs]
    violations = audit_leakage(records)
    subjects = [SubjectResult(o.test, o.frame_ids, o.truth, dict(o.predictions)) for o in outputs]
    names = tuple(set_name(cs) for cs in config.channel_sets)
    audit = {"folds": records, "violations": violations}
    return EvaluationReport(names, subjects, audit=audit), outputs


def fold_models_json(models: Mapping[str, FusionModel]) -> dict:
    return {name: models[name].to_dict() for name in sorted(models)}
