"""Deterministic synthetic pain dataset.

Each sequence holds a few pain episodes on a neutral baseline.  A frame's
latent pain level is split into AU intensities whose PSPI equals the level,
the parametric face is deformed accordingly, posed per subject, jittered and
rendered to a 128x128 grayscale PNG.  Every random draw comes from a stream
keyed by ``(seed, subject, sequence)``, so the output depends only on the
``SyntheticSpec``.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .dataset import DatasetManifest, FrameRecord, write_au_file, write_landmarks, write_manifest
from .errors import IoError, ValidationError
from .face_model import canonical_face, deform
from .facs import PSPI_MAX, AuCoding, compute_pspi
from .registration import DEFAULT_SCHEME

IMAGE_SIZE = 128
_SS = 2  # supersampling factor for rendering


def geometric_histogram(decay: float = 0.75) -> tuple:
    w = decay ** np.arange(PSPI_MAX)
    return tuple((w / w.sum()).tolist())


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 7
    n_subjects: int = 6
    sequences_per_subject: int = 4
    frames_per_sequence: int = 50
    zero_fraction: float = 0.83
    # weights of PSPI levels 1..16
    nonzero_histogram: tuple = field(default_factory=geometric_histogram)
    shape_offset_sd: float = 0.5
    landmark_noise: float = 0.3
    pixel_noise: float = 2.0
    name: str = "synthetic"

    def __post_init__(self):
        if self.n_subjects < 1 or self.sequences_per_subject < 1 or self.frames_per_sequence < 1:
            raise ValidationError("subject, sequence and frame counts must be positive")
        if not 0.0 <= self.zero_fraction <= 1.0:
            raise ValidationError(f"zero_fraction {self.zero_fraction} outside [0, 1]")
        hist = np.asarray(self.nonzero_histogram, dtype=float)
        if hist.shape != (PSPI_MAX,) or np.any(hist < 0) or hist.sum() <= 0:
            raise ValidationError(f"nonzero_histogram needs {PSPI_MAX} non-negative weights")
        object.__setattr__(self, "nonzero_histogram", tuple(float(v) for v in hist / hist.sum()))


@lru_cache(maxsize=None)
def _compositions(total: int) -> tuple:
    return tuple(c for c in itertools.product(range(6), repeat=3) if sum(c) == total)


def decompose_level(level: int, rng) -> AuCoding:
    """Random AU coding whose PSPI is exactly ``level``."""
    if not 0 <= level <= PSPI_MAX:
        raise ValidationError(f"pain level {level} outside 0..{PSPI_MAX}")
    au43 = 0
    if level == PSPI_MAX or (level >= 4 and rng.random() < 0.3):
        au43 = 1
    options = _compositions(level - au43)
    # favour balanced splits so every term grows with the level
    spread = np.array([np.var(c) for c in options])
    weights = np.exp(-spread)
    au4, eyes, nose = options[int(rng.choice(len(options), p=weights / weights.sum()))]
    pair = []
    for top in (eyes, nose):
        other = int(rng.integers(top + 1))
        pair.append((top, other) if rng.random() < 0.5 else (other, top))
    (au6, au7), (au9, au10) = pair
    extra = {"au25": int(nose >= 2), "au26": int(rng.random() < 0.1 * au43 + 0.05)}
    coding = AuCoding(au4, au6, au7, au9, au10, au43, extra)
    assert compute_pspi(coding) == level
    return coding


def _sequence_levels(spec: SyntheticSpec, rng) -> np.ndarray:
    n = spec.frames_per_sequence
    expected = (1.0 - spec.zero_fraction) * n
    n_pain = int(np.floor(expected)) + int(rng.random() < expected - np.floor(expected))
    levels = np.zeros(n, dtype=int)
    if n_pain == 0:
        return levels
    n_ep = 1 if n_pain < 6 else int(rng.integers(1, 3))
    lengths = [n_pain // n_ep + (1 if i < n_pain % n_ep else 0) for i in range(n_ep)]
    # distribute the n - n_pain neutral frames into n_ep + 1 gaps
    gaps = rng.multinomial(n - n_pain, np.full(n_ep + 1, 1.0 / (n_ep + 1)))
    pos = int(gaps[0])
    for length, gap in zip(lengths, gaps[1:]):
        peak = 1 + int(rng.choice(PSPI_MAX, p=spec.nonzero_histogram))
        shape = np.sin(np.pi * (np.arange(length) + 0.5) / length)
        levels[pos:pos + length] = np.clip(np.rint(peak * shape), 1, PSPI_MAX).astype(int)
        pos += length + int(gap)
    return levels


def _pose(rng):
    angle = np.deg2rad(rng.uniform(-4.0, 4.0))
    scale = rng.uniform(0.95, 1.04)
    shift = rng.uniform(-3.0, 3.0, 2)
    c, s = np.cos(angle), np.sin(angle)
    return scale * np.array([[c, -s], [s, c]]), shift


def _apply_pose(points, pose, centre=(64.0, 70.0)):
    R, shift = pose
    return (points - centre) @ R.T + centre + shift


def render_face(points, coding: AuCoding, look: dict, rng) -> np.ndarray:
    """Grayscale uint8 image of the posed landmarks."""
    size = IMAGE_SIZE * _SS
    s = DEFAULT_SCHEME
    p = np.asarray(points) * _SS

    def xy(idx):
        return [tuple(v) for v in p[list(idx)].tolist()]

    xs = np.arange(size) / size
    bg = (look["bg"] + 30.0 * xs)[None, :].repeat(size, axis=0)
    img = Image.fromarray(np.clip(bg, 0, 255).astype(np.uint8), mode="L")
    draw = ImageDraw.Draw(img)
    skin = look["skin"]

    jaw = p[list(s.jaw)]
    cx = 0.5 * (jaw[0, 0] + jaw[-1, 0])
    rx = 0.5 * (jaw[-1, 0] - jaw[0, 0])
    top = 0.5 * (jaw[0, 1] + jaw[-1, 1])
    t = np.linspace(0.0, np.pi, 24)
    forehead = np.stack([cx + rx * np.cos(t), top - 0.75 * rx * np.sin(t)], axis=1)
    draw.polygon([tuple(v) for v in np.concatenate([jaw, forehead[1:-1]]).tolist()], fill=skin)

    shade = int(2 + 10 * coding.au4 / 5)
    for a, b in ((21, 22),):
        mid = 0.5 * (p[a] + p[b])
        for dx in (-2.5, 2.5):
            draw.line([(mid[0] + dx * _SS, mid[1] - 3 * _SS), (mid[0] + dx * _SS, mid[1] + 5 * _SS)],
                      fill=skin - 8 * shade // 3, width=_SS)
    eyes = max(coding.au6, coding.au7)
    for corner, sign in ((36, -1), (45, 1)):
        for k in (-1, 0, 1):
            x0, y0 = p[corner]
            draw.line([(x0 + sign * 2 * _SS, y0 + k * 2 * _SS), (x0 + sign * 7 * _SS, y0 + k * 4 * _SS)],
                      fill=skin - 6 * eyes, width=_SS)
    nose = max(coding.au9, coding.au10)
    for nostril, corner in ((31, 48), (35, 54)):
        draw.line(xy((nostril,)) + xy((corner,)), fill=skin - 12 - 8 * nose, width=_SS * (1 + nose // 3))

    for brow in (s.right_brow, s.left_brow):
        draw.line(xy(brow), fill=skin - 95, width=3 * _SS, joint="curve")
    for eye in (s.right_eye, s.left_eye):
        draw.polygon(xy(eye), fill=235 - 60 * coding.au43, outline=40)
        centre = p[list(eye)].mean(axis=0)
        r = 2.2 * _SS
        draw.ellipse([centre[0] - r, centre[1] - r, centre[0] + r, centre[1] + r], fill=45)
    draw.line(xy(s.nose[:4]), fill=skin - 30, width=_SS)
    draw.line(xy(s.nose[4:]), fill=skin - 45, width=_SS)
    draw.polygon(xy(s.outer_lip), fill=skin - 55)
    draw.polygon(xy(s.inner_lip), fill=skin - 110)

    small = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BOX).filter(ImageFilter.GaussianBlur(0.8))
    arr = np.asarray(small, dtype=float) + rng.normal(0.0, look["noise"], (IMAGE_SIZE, IMAGE_SIZE))
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write images, landmark and AU files plus ``manifest.json`` under
    ``out_dir`` and return the dataset as loaded from them."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise IoError(f"cannot write to {out}: {exc.strerror}") from None

    neutral = canonical_face()
    records = []
    for si in range(spec.n_subjects):
        sid = f"S{si + 1:02d}"
        srng = np.random.default_rng([spec.seed, si])
        offset = srng.normal(0.0, spec.shape_offset_sd, (66, 2))
        look = {"skin": int(srng.integers(140, 196)), "bg": float(srng.uniform(25, 70)), "noise": spec.pixel_noise}
        for qi in range(spec.sequences_per_subject):
            qid = f"{sid}_q{qi}"
            rng = np.random.default_rng([spec.seed, si, qi + 1])
            pose = _pose(rng)
            levels = _sequence_levels(spec, rng)
            seq_dir = out / sid / qid
            seq_dir.mkdir(parents=True, exist_ok=True)
            for k, level in enumerate(levels):
                coding = decompose_level(int(level), rng)
                eyes, nose = max(coding.au6, coding.au7), max(coding.au9, coding.au10)
                shape = deform(neutral + offset, coding.au4, eyes, nose, coding.au43)
                pts = _apply_pose(shape, pose) + rng.normal(0.0, spec.landmark_noise, (66, 2))
                image = render_face(pts, coding, look, rng)
                fid = f"{qid}_f{k:04d}"
                paths = {ext: seq_dir / f"{fid}{ext}" for ext in (".png", ".pts", ".au")}
                Image.fromarray(image, mode="L").save(paths[".png"], format="PNG")
                write_landmarks(paths[".pts"], pts)
                write_au_file(paths[".au"], coding)
                records.append(FrameRecord(
                    frame_id=fid, subject_id=sid, sequence_id=qid, index=k,
                    image_path=str(paths[".png"]), landmark_path=str(paths[".pts"]),
                    au_path=str(paths[".au"]),
                    landmarks=np.array([[float(x), float(y)] for x, y in pts.tolist()]),
                    coding=coding, pspi=int(level),
                ))
    dataset = DatasetManifest(os.fspath(out), records, name=spec.name)
    write_manifest(out / "manifest.json", dataset)
    return dataset
