"""Dataset manifests, per-frame file formats and feature persistence.

A manifest is JSON with paths relative to the manifest's own directory (or
to ``$PAINFUSION_DATA_ROOT`` when set)::

    {"format_version": 1,
     "subjects": [{"subject_id": "S01",
                   "sequences": [{"sequence_id": "S01_q0",
                                  "frames": [{"frame_id": "S01_q0_f0000", "index": 0,
                                              "image": "...png", "landmarks": "...txt",
                                              "aus": "...txt"}]}]}]}

Landmark files hold 66 lines ``x y``; AU files hold lines ``AU4 3``.
"""

from __future__ import annotations

import json
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimMismatch, IoError, ParseError, ValidationError
from .facs import REQUIRED_AUS, AuCoding, compute_pspi, validate_au_coding
from .registration import N_POINTS, LandmarkFrame
from .temporal import FeatureTable

MANIFEST_VERSION = 1
ROOT_ENV = "PAINFUSION_DATA_ROOT"
FEATURE_MAGIC = b"PFFEAT01"


def read_landmarks(path) -> np.ndarray:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read landmark file {path}: {exc.strerror}") from None
    rows = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'x y', got {text!r}", path, lineno)
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {text!r}", path, lineno) from None
    if len(rows) != N_POINTS:
        raise ParseError(f"expected {N_POINTS} landmark lines, found {len(rows)}", path)
    points = np.array(rows)
    if not np.all(np.isfinite(points)):
        raise ParseError("non-finite coordinate", path)
    return points


def write_landmarks(path, points) -> None:
    Path(path).write_text("".join(f"{x!r} {y!r}\n" for x, y in np.asarray(points, dtype=float).tolist()))


def read_au_file(path) -> AuCoding:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read AU file {path}: {exc.strerror}") from None
    raw = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'AUname intensity', got {text!r}", path, lineno)
        raw[parts[0]] = parts[1]
    try:
        return validate_au_coding(raw)
    except ValidationError as exc:
        raise ParseError(str(exc), path) from None


def write_au_file(path, coding: AuCoding) -> None:
    lines = [f"AU{name[2:]} {getattr(coding, name)}" for name in REQUIRED_AUS]
    for name in sorted(coding.extra, key=lambda n: int(n[2:]) if n[2:].isdigit() else 0):
        value = coding.extra[name]
        lines.append(f"AU{name[2:]} {int(value) if value == int(value) else value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise IoError(f"cannot read image {path}: {exc}") from None


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    subject_id: str
    sequence_id: str
    index: int
    image_path: str
    landmark_path: str
    au_path: str
    landmarks: np.ndarray = field(compare=False, repr=False)
    coding: AuCoding = field(repr=False)
    pspi: int

    def load_image(self) -> np.ndarray:
        return read_image(self.image_path)

    def landmark_frame(self) -> LandmarkFrame:
        return LandmarkFrame(self.landmarks, self.frame_id, self.subject_id, self.sequence_id)


@dataclass
class DatasetManifest:
    root: str
    frames: list
    name: str = ""
    _images: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ids = [f.frame_id for f in self.frames]
        dup = [fid for fid, c in Counter(ids).items() if c > 1]
        if dup:
            raise ValidationError(f"duplicate frame ids: {dup[:5]}")
        self._by_id = {f.frame_id: f for f in self.frames}

    def __len__(self):
        return len(self.frames)

    @property
    def subjects(self) -> list:
        return sorted({f.subject_id for f in self.frames})

    def frame(self, frame_id) -> FrameRecord:
        return self._by_id[frame_id]

    def sequences(self) -> dict:
        out = {}
        for f in self.frames:
            out.setdefault((f.subject_id, f.sequence_id), []).append(f)
        return out

    def labels(self, frame_ids=None) -> np.ndarray:
        frames = self.frames if frame_ids is None else [self._by_id[f] for f in frame_ids]
        return np.array([f.pspi for f in frames], dtype=float)

    def image(self, frame_id) -> np.ndarray:
        if frame_id not in self._images:
            self._images[frame_id] = self._by_id[frame_id].load_image()
        return self._images[frame_id]

    @property
    def stats(self) -> dict:
        scores = [f.pspi for f in self.frames]
        hist = Counter(scores)
        return {
            "n_frames": len(scores),
            "n_subjects": len(self.subjects),
            "n_sequences": len(self.sequences()),
            "zero_fraction": hist.get(0, 0) / len(scores) if scores else 0.0,
            "pspi_histogram": [hist.get(k, 0) for k in range(17)],
        }

    def same_content(self, other: "DatasetManifest") -> bool:
        if [f.frame_id for f in self.frames] != [f.frame_id for f in other.frames]:
            return False
        for a, b in zip(self.frames, other.frames):
            if (a.subject_id, a.sequence_id, a.index, a.coding, a.pspi) != (b.subject_id, b.sequence_id, b.index, b.coding, b.pspi):
                return False
            if a.landmarks.tobytes() != b.landmarks.tobytes():
                return False
        return True


def _resolve_root(manifest_path: Path) -> Path:
    override = os.environ.get(ROOT_ENV)
    return Path(override) if override else manifest_path.parent


def load_manifest(path) -> DatasetManifest:
    """Read and validate a manifest; every frame's landmarks and AU coding
    are parsed and its PSPI computed."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest version {doc.get('format_version')!r}", path)
    root = _resolve_root(path)
    frames = []
    try:
        for subj in doc["subjects"]:
            sid = str(subj["subject_id"])
            for seq in subj["sequences"]:
                qid = str(seq["sequence_id"])
                entries = sorted(seq["frames"], key=lambda e: int(e["index"]))
                indices = [int(e["index"]) for e in entries]
                if len(set(indices)) != len(indices):
                    raise ParseError(f"sequence {qid}: repeated frame index", path)
                for entry in entries:
                    files = {}
                    for key in ("image", "landmarks", "aus"):
                        p = root / entry[key]
                        if not p.is_file():
                            raise IoError(f"frame {entry['frame_id']}: {key} file not found: {p}")
                        files[key] = str(p)
                    coding = read_au_file(files["aus"])
                    frames.append(FrameRecord(
                        frame_id=str(entry["frame_id"]), subject_id=sid, sequence_id=qid,
                        index=int(entry["index"]), image_path=files["image"],
                        landmark_path=files["landmarks"], au_path=files["aus"],
                        landmarks=read_landmarks(files["landmarks"]), coding=coding,
                        pspi=compute_pspi(coding),
                    ))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed manifest entry: missing {exc}", path) from None
    return DatasetManifest(str(root), frames, name=str(doc.get("name", "")))


def write_manifest(path, dataset: DatasetManifest) -> None:
    root = Path(path).parent
    subjects = {}
    for f in dataset.frames:
        seqs = subjects.setdefault(f.subject_id, {})
        seqs.setdefault(f.sequence_id, []).append({
            "frame_id": f.frame_id,
            "index": f.index,
            "image": os.path.relpath(f.image_path, root),
            "landmarks": os.path.relpath(f.landmark_path, root),
            "aus": os.path.relpath(f.au_path, root),
        })
    doc = {
        "format_version": MANIFEST_VERSION,
        "name": dataset.name,
        "stats": dataset.stats,
        "subjects": [
            {"subject_id": sid, "sequences": [{"sequence_id": qid, "frames": fr} for qid, fr in seqs.items()]}
            for sid, seqs in subjects.items()
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


# -- feature files ---------------------------------------------------------

def persist_features(tables, path) -> None:
    """Write channel tables to one binary file.

    Layout: 8-byte magic, little-endian uint32 header length, a JSON header
    (channel id, dim, frame count and ids per channel), then each channel's
    values as little-endian float64 in row order.
    """
    tables = list(tables.values()) if isinstance(tables, dict) else list(tables)
    header = {
        "format_version": 1,
        "channels": [
            {"channel": t.channel, "dim": t.dim, "n_frames": len(t), "frame_ids": list(t.frame_ids)}
            for t in tables
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for t in tables:
                fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write feature file {path}: {exc.strerror}") from None


def load_features(path) -> dict:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read feature file {path}: {exc.strerror}") from None
    if data[:8] != FEATURE_MAGIC or len(data) < 12:
        raise ParseError("not a feature file (bad magic)", path)
    (size,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + size].decode())
        channels = header["channels"]
        specs = [(c["channel"], int(c["dim"]), int(c["n_frames"]), list(c["frame_ids"])) for c in channels]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError):
        raise ParseError("corrupted feature header", path) from None
    offset = 12 + size
    out = {}
    for channel, dim, count, ids in specs:
        if len(ids) != count:
            raise DimMismatch(f"{path}: channel {channel} lists {len(ids)} ids for {count} frames")
        nbytes = 8 * dim * count
        chunk = data[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DimMismatch(f"{path}: channel {channel} expects {count}x{dim} values, file is truncated")
        values = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(count, dim)
        out[channel] = FeatureTable(channel, dim, ids, values)
        offset += nbytes
    if offset != len(data):
        raise DimMismatch(f"{path}: {len(data) - offset} trailing bytes after the declared channels")
    return out


def export_features_text(tables, path) -> None:
    """Human-readable dump: ``channel,frame_id,v0,v1,...`` per row."""
    tables = list(tables.values()) if isinstance(tables, dict) else list(tables)
    with open(path, "w") as fh:
        for t in tables:
            for fid, row in zip(t.frame_ids, t.values):
                fh.write(",".join([t.channel, fid] + [repr(float(v)) for v in row]) + "\n")
