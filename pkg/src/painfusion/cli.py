"""``painfusion`` command line.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .dataset import export_features_text, load_manifest, persist_features
from .errors import IoError, PainFusionError, ValidationError
from .evaluation import EvaluationReport, emit_report
from .experiment import extract_features, fold_mean_shape, fold_models_json, run_folds, run_loso
from .synthetic import SyntheticSpec, generate_synthetic
from .temporal import load_external_channel

log = logging.getLogger("painfusion")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _abs(path):
    return None if path is None else os.path.abspath(path)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="painfusion", description="Frame-level pain intensity estimation with fused RVM regressors.")
    p.add_argument("--version", action="version", version=f"painfusion {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--subjects", type=int, default=6)
    s.add_argument("--sequences", type=int, default=4)
    s.add_argument("--frames", type=int, default=50)
    s.add_argument("--zero-fraction", type=float, default=0.83)

    e = sub.add_parser("extract", help="write GF/HOG features for a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True, help="feature file to write")
    e.add_argument("--channels", default="GF,HOG")
    e.add_argument("--text", help="also write a CSV export here")

    for name, text in (("train", "train fold models"), ("evaluate", "full leave-one-subject-out evaluation")):
        c = sub.add_parser(name, help=text)
        c.add_argument("--config", required=True)
        c.add_argument("--dataset")
        c.add_argument("--out", dest="output")
        c.add_argument("--seed", type=int)
        c.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
        c.add_argument("--channel-sets", help="e.g. 'GF;HOG;GF,HOG'")
        c.add_argument("--mean-shape", choices=("train", "full"))

    r = sub.add_parser("report", help="re-render report files from a saved report.json")
    r.add_argument("--report", required=True)
    r.add_argument("--out", required=True)
    return p


def _config(args) -> RunConfig:
    overrides = {
        "dataset": _abs(args.dataset), "output": _abs(args.output), "seed": args.seed,
        "jobs": args.jobs, "channel_sets": args.channel_sets, "mean_shape": args.mean_shape,
    }
    return load_config(args.config, overrides)


def _external(cfg: RunConfig) -> dict:
    return {spec.channel: load_external_channel(spec.path, spec) for spec in cfg.external}


def cmd_synth(args):
    spec = SyntheticSpec(seed=args.seed, n_subjects=args.subjects, sequences_per_subject=args.sequences,
                         frames_per_sequence=args.frames, zero_fraction=args.zero_fraction)
    data = generate_synthetic(spec, args.out)
    stats = data.stats
    log.info("synth: %d frames, %d subjects, zero fraction %.4f -> %s",
             stats["n_frames"], stats["n_subjects"], stats["zero_fraction"], Path(args.out) / "manifest.json")


def cmd_extract(args):
    data = load_manifest(args.manifest)
    channels = tuple(c.strip() for c in args.channels.split(",") if c.strip())
    bad = [c for c in channels if c not in ("GF", "HOG")]
    if bad:
        raise UsageError(f"extract supports GF and HOG, got {', '.join(bad)}")
    # no held-out subject here, so the mean shape uses every frame
    mean = fold_mean_shape(data, data.subjects, mode="full")
    tables = extract_features(data, mean, channels=channels)
    persist_features(tables, args.out)
    if args.text:
        export_features_text(tables, args.text)
    log.info("extract: %d frames, channels %s -> %s", len(data), ",".join(channels), args.out)


def cmd_train(args):
    cfg = _config(args)
    data = load_manifest(cfg.dataset)
    outputs = run_folds(data, cfg.experiment(), _external(cfg))
    out = Path(cfg.output) / "models"
    try:
        out.mkdir(parents=True, exist_ok=True)
        for o in outputs:
            doc = {"test_subject": o.test, "artifacts": o.artifacts, "models": fold_models_json(o.models)}
            (out / f"fold_{o.test}.json").write_text(json.dumps(doc, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write models to {out}: {exc.strerror}") from None
    log.info("train: %d fold models -> %s", len(outputs), out)


def cmd_evaluate(args):
    cfg = _config(args)
    data = load_manifest(cfg.dataset)
    report, _ = run_loso(data, cfg.experiment(), _external(cfg))
    report.methods = cfg.methods
    emit_report(report, cfg.output)
    n = len(report.audit.get("violations", []))
    log.info("evaluate: report -> %s (leakage violations: %d)", cfg.output, n)
    for cs in report.channel_sets:
        m = report.metrics(cs, "rebase_threshold" if "rebase_threshold" in cfg.methods else cfg.methods[0])
        log.info("evaluate: %s rmse=%.4f corr=%s", cs, m.rmse, f"{m.corr:.4f}" if m.corr_defined else "undefined")


def cmd_report(args):
    try:
        text = Path(args.report).read_text()
    except OSError as exc:
        raise IoError(f"cannot read report {args.report}: {exc.strerror}") from None
    try:
        report = EvaluationReport.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"{args.report}: not a saved report ({exc})") from None
    emit_report(report, args.out)
    log.info("report: -> %s", args.out)


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s", stream=sys.stderr, force=True,
    )
    logging.captureWarnings(True)
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 1
    except IoError as exc:
        log.error("%s", exc)
        return 2
    except PainFusionError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
