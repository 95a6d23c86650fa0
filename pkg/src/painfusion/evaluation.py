"""Leave-one-subject-out protocol, metrics, post-processing and reports."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import BadMethod, BadWindow, DimMismatch, InsufficientSubjects, IoError
from .facs import PSPI_MAX

METHODS = ("original", "threshold", "rebase", "rebase_threshold")
SCATTER_METHOD = "rebase_threshold"


class Fold(NamedTuple):
    test: str
    train: tuple


def loso_folds(subjects: Sequence[str]) -> list:
    """One fold per subject, in ascending subject order."""
    subjects = [str(s) for s in subjects]
    if len(set(subjects)) != len(subjects):
        raise InsufficientSubjects("duplicate subject ids")
    if len(subjects) < 2:
        raise InsufficientSubjects(f"leave-one-subject-out needs 2 or more subjects, got {len(subjects)}")
    ordered = sorted(subjects)
    return [Fold(s, tuple(t for t in ordered if t != s)) for s in ordered]


class Metrics(NamedTuple):
    rmse: float
    corr: float
    corr_defined: bool


def compute_metrics(preds, truth) -> Metrics:
    """RMSE and Pearson correlation; ``corr`` is NaN with ``corr_defined``
    False when either side has zero variance."""
    p = np.asarray(preds, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if len(p) != len(t):
        raise DimMismatch(f"{len(p)} predictions for {len(t)} targets")
    if len(p) == 0:
        raise DimMismatch("metrics need at least one prediction")
    rmse = float(np.sqrt(np.mean((p - t) ** 2)))
    # constant input: rounding in the mean could fake a tiny spread
    if np.all(p == p[0]) or np.all(t == t[0]):
        return Metrics(rmse, math.nan, False)
    dp, dt = p - p.mean(), t - t.mean()
    sp, st = float(np.sqrt(dp @ dp)), float(np.sqrt(dt @ dt))
    return Metrics(rmse, float(np.clip((dp @ dt) / (sp * st), -1.0, 1.0)), True)


def threshold(preds) -> np.ndarray:
    return np.clip(np.asarray(preds, dtype=float), 0.0, PSPI_MAX)


def modal_value(preds) -> float:
    """Mode of half-up rounded values, ties to the smaller value."""
    rounded = np.floor(np.asarray(preds, dtype=float) + 0.5)
    if rounded.size == 0:
        return 0.0
    values, counts = np.unique(rounded, return_counts=True)
    return float(values[np.argmax(counts)])  # unique is ascending, argmax takes the first


def rebase(preds) -> np.ndarray:
    p = np.asarray(preds, dtype=float)
    return p - modal_value(p)


def postprocess(preds, method: str) -> np.ndarray:
    """Apply a post-processing method to one subject's raw predictions."""
    if method == "original":
        return np.asarray(preds, dtype=float).copy()
    if method == "threshold":
        return threshold(preds)
    if method == "rebase":
        return rebase(preds)
    if method == "rebase_threshold":
        return threshold(rebase(preds))
    raise BadMethod(f"unknown post-processing method {method!r}; expected one of {', '.join(METHODS)}")


def sliding_rebase(preds, window: int) -> np.ndarray:
    """Rebase within consecutive non-overlapping windows of ``window`` frames."""
    if int(window) != window or window < 1:
        raise BadWindow(f"window must be a positive integer, got {window!r}")
    p = np.asarray(preds, dtype=float)
    out = np.empty_like(p)
    for start in range(0, len(p), int(window)):
        out[start:start + window] = rebase(p[start:start + window])
    return out


@dataclass
class SubjectResult:
    subject_id: str
    frame_ids: tuple
    truth: np.ndarray
    raw: dict  # channel-set name -> raw predictions

    def to_dict(self):
        return {
            "subject_id": self.subject_id,
            "frame_ids": list(self.frame_ids),
            "truth": [float(v) for v in self.truth],
            "raw": {k: [float(v) for v in self.raw[k]] for k in sorted(self.raw)},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["subject_id"], tuple(d["frame_ids"]), np.array(d["truth"], dtype=float),
                   {k: np.array(v, dtype=float) for k, v in d["raw"].items()})


@dataclass
class EvaluationReport:
    channel_sets: tuple
    subjects: list
    methods: tuple = METHODS
    audit: dict = field(default_factory=dict)

    def subject(self, subject_id) -> SubjectResult:
        return next(s for s in self.subjects if s.subject_id == subject_id)

    def processed(self, channel_set: str, method: str) -> list:
        return [postprocess(s.raw[channel_set], method) for s in self.subjects]

    def concatenated(self, channel_set: str, method: str):
        preds = np.concatenate(self.processed(channel_set, method))
        truth = np.concatenate([s.truth for s in self.subjects])
        return preds, truth

    def metrics(self, channel_set: str, method: str) -> Metrics:
        return compute_metrics(*self.concatenated(channel_set, method))

    def subject_metrics(self, channel_set: str, method: str) -> list:
        return [(s.subject_id, compute_metrics(p, s.truth))
                for s, p in zip(self.subjects, self.processed(channel_set, method))]

    def shifted(self, offset: float) -> "EvaluationReport":
        """Copy with ``offset`` added to every raw prediction."""
        subjects = [SubjectResult(s.subject_id, s.frame_ids, s.truth, {k: v + offset for k, v in s.raw.items()})
                    for s in self.subjects]
        return EvaluationReport(self.channel_sets, subjects, self.methods, dict(self.audit))

    def to_json(self) -> str:
        return json.dumps({
            "channel_sets": list(self.channel_sets),
            "methods": list(self.methods),
            "subjects": [s.to_dict() for s in self.subjects],
            "audit": self.audit,
        }, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        d = json.loads(text)
        return cls(tuple(d["channel_sets"]), [SubjectResult.from_dict(s) for s in d["subjects"]],
                   tuple(d["methods"]), d.get("audit", {}))


def fmt(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "undefined"
    return format(float(value), ".6g")


def _corr_text(m: Metrics) -> str:
    return fmt(m.corr) if m.corr_defined else "undefined"


def _round6(value):
    return float(format(value, ".6g")) if value is not None and not math.isnan(value) else None


def emit_report(report: EvaluationReport, out_dir) -> list:
    """Write ``comparison.csv``, one ``scatter_<set>.csv`` per channel set,
    ``summary.json`` and the full-precision ``report.json``.  Returns the
    written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []

        header = ["method"] + [f"{cs}_{m}" for cs in report.channel_sets for m in ("rmse", "corr")]
        lines = [",".join(header)]
        for method in report.methods:
            row = [method]
            for cs in report.channel_sets:
                m = report.metrics(cs, method)
                row += [fmt(m.rmse), _corr_text(m)]
            lines.append(",".join(row))
        written.append(_write(out / "comparison.csv", "\n".join(lines) + "\n"))

        for cs in report.channel_sets:
            lines = ["subject_id,rmse,corr"]
            for sid, m in report.subject_metrics(cs, SCATTER_METHOD):
                lines.append(f"{sid},{fmt(m.rmse)},{_corr_text(m)}")
            written.append(_write(out / f"scatter_{cs}.csv", "\n".join(lines) + "\n"))

        summary = {
            "channel_sets": list(report.channel_sets),
            "methods": list(report.methods),
            "subjects": [s.subject_id for s in report.subjects],
            "n_frames": int(sum(len(s.truth) for s in report.subjects)),
            "metrics": {
                cs: {method: {"rmse": _round6(m.rmse), "corr": _round6(m.corr) if m.corr_defined else None,
                              "corr_defined": m.corr_defined}
                     for method in report.methods for m in [report.metrics(cs, method)]}
                for cs in report.channel_sets
            },
            "leakage_violations": len(report.audit.get("violations", [])) if report.audit else None,
        }
        written.append(_write(out / "summary.json", json.dumps(summary, sort_keys=True, indent=1) + "\n"))
        written.append(_write(out / "report.json", report.to_json() + "\n"))
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc.strerror or exc}") from None
    return written


def _write(path: Path, text: str) -> str:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return os.fspath(path)


def read_scatter(path) -> list:
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            sid, rmse, corr = line.rstrip("\n").split(",")
            rows.append((sid, float(rmse), None if corr == "undefined" else float(corr)))
    return rows


def audit_leakage(folds: Sequence[Mapping]) -> list:
    """Violations among per-fold provenance records.

    Each record has ``test`` (subject id) and ``artifacts`` mapping artifact
    name -> the subject ids that contributed to it.  A violation is any
    artifact that includes the fold's test subject.
    """
    violations = []
    for rec in folds:
        for name, subjects in sorted(rec["artifacts"].items()):
            if rec["test"] in set(subjects):
                violations.append({"test": rec["test"], "artifact": name})
    return violations
