"""Per-channel regressors, kernel-width selection and stacking fusion."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import BadInput, DimMismatch, InnerLoopInfeasible, UndersampleFloorWarning
from .rvm import KernelSpec, RvmModel, RvmOptions, rvm_predict, rvm_train, standardization

GRID = (0.5, 1.0, 2.0, 4.0)
TIE_TOL = 1e-12


@dataclass(frozen=True)
class FusionOptions:
    grid: tuple = GRID
    undersample: bool = True
    undersample_ratio: float = 2.0
    undersample_seed: int = 0
    undersample_floor: int = 100
    second_level: str = "rbf"  # or "linear"
    rvm: RvmOptions = field(default_factory=RvmOptions)

    def __post_init__(self):
        if not self.grid or any(m <= 0 for m in self.grid):
            raise BadInput(f"grid multipliers must be positive, got {self.grid}")
        if self.undersample_ratio <= 0:
            raise BadInput("undersample ratio must be positive")
        if self.second_level not in ("rbf", "linear"):
            raise BadInput(f"second level kernel must be 'rbf' or 'linear', got {self.second_level!r}")
        object.__setattr__(self, "grid", tuple(float(m) for m in self.grid))


def undersample_zero_frames(labels, ratio: float = 2.0, seed: int = 0, floor: int = 100) -> np.ndarray:
    """Indices (ascending) of the frames kept after thinning zero-score frames.

    Let ``c`` be the count of the most frequent non-zero level.  All non-zero
    frames are kept plus ``min(ratio * c, #zeros)`` zero frames drawn without
    replacement.  With no non-zero frames, ``min(floor, #zeros)`` zeros are
    kept and :class:`UndersampleFloorWarning` is issued.
    """
    if ratio <= 0:
        raise BadInput(f"ratio must be positive, got {ratio}")
    labels = np.asarray(labels)
    zeros = np.flatnonzero(labels == 0)
    nonzero = np.flatnonzero(labels != 0)
    if len(nonzero):
        _, counts = np.unique(labels[nonzero], return_counts=True)
        quota = int(np.floor(ratio * counts.max()))
    else:
        quota = floor
        warnings.warn(f"no non-zero frames; keeping at most {floor} zero frames", UndersampleFloorWarning)
    quota = min(quota, len(zeros))
    rng = np.random.default_rng(seed)
    kept = rng.choice(zeros, size=quota, replace=False) if quota else zeros[:0]
    return np.sort(np.concatenate([kept, nonzero]))


def median_distance(X) -> float:
    """Median pairwise Euclidean distance between standardized rows."""
    X = np.asarray(X, dtype=float)
    if len(X) < 2:
        return 1.0
    mean, scale = standardization(X)
    d = pdist((X - mean) / scale)
    med = float(np.median(d))
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class ChannelFit:
    """Trained channel regressor with its selection record.

    ``oof`` holds out-of-fold predictions on the training rows at the chosen
    width (in-sample predictions when the inner loop was infeasible).
    """

    channel: str
    model: RvmModel
    width: float
    multiplier: float
    median: float
    inner_rmse: tuple
    oof: np.ndarray
    provenance: frozenset


def _inner_predictions(X, y, groups, kernel, opts):
    out = np.empty(len(y))
    for held in sorted(set(groups)):
        test = groups == held
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = rvm_train(X[~test], y[~test], kernel, opts, groups=groups[~test])
        out[test] = rvm_predict(model, X[test])[0]
    return out


def train_channel_regressor(
    X, y, groups, channel: str = "", grid: Sequence[float] = GRID,
    opts: RvmOptions | None = None, kernel_kind: str = "rbf",
) -> ChannelFit:
    """Select the RBF width by inner leave-one-subject-out and retrain.

    Widths are ``multiplier * median pairwise distance`` of the standardized
    training rows.  Each width is scored by the RMSE of the concatenated
    held-out predictions; the smallest width within ``1e-12`` of the best
    score wins.  A linear kernel skips the search.
    """
    opts = opts or RvmOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups)
    if len(X) != len(y) or len(groups) != len(y):
        raise DimMismatch(f"{len(X)} rows, {len(y)} targets, {len(groups)} group labels")
    provenance = frozenset(groups.tolist())
    med = median_distance(X)
    grid = tuple(sorted(float(m) for m in grid))

    def kernel_for(m):
        return KernelSpec(kind="linear") if kernel_kind == "linear" else KernelSpec(width=m * med)

    if len(provenance) < 2:
        warnings.warn(f"channel {channel}: one training subject, using the median-distance width", InnerLoopInfeasible)
        kernel = kernel_for(1.0)
        model = rvm_train(X, y, kernel, opts, groups=groups)
        return ChannelFit(channel, model, kernel.width, 1.0, med, (), rvm_predict(model, X)[0], provenance)

    if kernel_kind == "linear":
        grid = (1.0,)
    scores, preds = [], []
    for m in grid:
        p = _inner_predictions(X, y, groups, kernel_for(m), opts)
        preds.append(p)
        scores.append(float(np.sqrt(np.mean((p - y) ** 2))))
    best = min(scores)
    pick = next(i for i, s in enumerate(scores) if s <= best + TIE_TOL)
    kernel = kernel_for(grid[pick])
    model = rvm_train(X, y, kernel, opts, groups=groups)
    return ChannelFit(
        channel, model, kernel.width, grid[pick], med,
        tuple(zip(grid, scores)), preds[pick], provenance,
    )


@dataclass(frozen=True)
class FusionModel:
    channels: tuple
    channel_fits: tuple
    second_level: RvmModel | None
    metadata: Mapping = field(default_factory=dict)

    @property
    def channel_models(self) -> tuple:
        return tuple(f.model for f in self.channel_fits)

    @property
    def provenance(self) -> frozenset:
        subjects = set()
        for f in self.channel_fits:
            subjects |= f.provenance | f.model.provenance
        if self.second_level is not None:
            subjects |= self.second_level.provenance
        return frozenset(subjects)

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "channel_models": [
                {"channel": f.channel, "width": f.width, "multiplier": f.multiplier, "median": f.median,
                 "inner_rmse": [list(s) for s in f.inner_rmse], "model": f.model.to_dict()}
                for f in self.channel_fits
            ],
            "second_level": None if self.second_level is None else self.second_level.to_dict(),
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _channel_matrix(features, channel, frame_ids):
    table = features[channel]
    if hasattr(table, "rows"):
        return table.rows(frame_ids)
    return np.asarray(table, dtype=float)


def train_fusion(
    features: Mapping, frame_ids: Sequence[str], labels, groups,
    channels: Sequence[str], opts: FusionOptions | None = None, fits: Mapping | None = None,
) -> FusionModel:
    """Train channel regressors and a second-level regressor on their
    stacked out-of-fold predictions.

    ``features`` maps channel -> :class:`~painfusion.temporal.FeatureTable`
    (missing frames raise :class:`MissingFrames`).  Undersampling, when
    enabled, is applied once here.  ``fits`` may supply channel fits already
    trained on exactly the same rows, to share them across channel sets.
    With one channel the second level is a 1-D recalibration.
    """
    opts = opts or FusionOptions()
    channels = tuple(channels)
    if not channels:
        raise BadInput("at least one channel is required")
    frame_ids = list(frame_ids)
    labels = np.asarray(labels, dtype=float)
    groups = np.asarray(groups)
    matrices = {ch: _channel_matrix(features, ch, frame_ids) for ch in channels}
    keep = prepare_training_rows(labels, opts)
    y, g = labels[keep], groups[keep]
    fits = dict(fits or {})
    for ch in channels:
        if ch not in fits:
            fits[ch] = train_channel_regressor(matrices[ch][keep], y, g, ch, opts.grid, opts.rvm)
    channel_fits = tuple(fits[ch] for ch in channels)
    metadata = {
        "undersample_seed": opts.undersample_seed,
        "undersample_ratio": opts.undersample_ratio,
        "n_train": int(len(keep)),
        "train_frames": [frame_ids[i] for i in keep],
        "widths": {f.channel: f.width for f in channel_fits},
        "second_level_kernel": opts.second_level,
    }
    stacked = np.column_stack([f.oof for f in channel_fits])
    second = train_channel_regressor(stacked, y, g, "fusion", opts.grid, opts.rvm, opts.second_level)
    metadata["widths"]["fusion"] = second.width
    return FusionModel(channels, channel_fits, second.model, metadata)


def prepare_training_rows(labels, opts: FusionOptions) -> np.ndarray:
    labels = np.asarray(labels)
    if not opts.undersample:
        return np.arange(len(labels))
    return undersample_zero_frames(labels, opts.undersample_ratio, opts.undersample_seed, opts.undersample_floor)


def channel_predictions(model: FusionModel, features: Mapping, frame_ids: Sequence[str]) -> np.ndarray:
    """``(n, channels)`` matrix of first-level predictions."""
    cols = []
    for ch, fit in zip(model.channels, model.channel_fits):
        cols.append(rvm_predict(fit.model, _channel_matrix(features, ch, list(frame_ids)))[0])
    return np.column_stack(cols)


def predict_pipeline(model: FusionModel, features: Mapping, frame_ids: Sequence[str]) -> np.ndarray:
    """Raw (unclamped) fused predictions for ``frame_ids``."""
    r = channel_predictions(model, features, frame_ids)
    if model.second_level is None:
        return r[:, 0]
    return rvm_predict(model.second_level, r)[0]
