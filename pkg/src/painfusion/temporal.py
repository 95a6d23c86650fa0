"""Inputs for the external deep-feature channel.

Region masks and temporal difference stacks reproduce the preprocessing the
convolutional network consumes; the network itself runs elsewhere, and its
per-frame activations come back through :func:`load_external_channel`.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateRegion, DimMismatch, EmptySequence, IoError, MissingFrames, ParseError
from .registration import CROP_SIZE, DEFAULT_SCHEME, LandmarkScheme

WINDOW = 5
MARGIN = 0.10
_DISK = 32


def convex_hull(points) -> np.ndarray:
    """Hull vertices, counter-clockwise in ``(x, y)``."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        raise DegenerateRegion(f"need 3 distinct points for a region, got {len(pts)}")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateRegion(f"region points are degenerate: {exc}".splitlines()[0]) from None
    return pts[hull.vertices]


def dilate_convex(polygon, margin: float) -> np.ndarray:
    """Convex polygon grown outward by ``margin`` (Minkowski sum with a disk,
    the disk approximated by a regular 32-gon)."""
    if margin <= 0:
        return np.asarray(polygon, dtype=float)
    t = np.linspace(0.0, 2 * np.pi, _DISK, endpoint=False)
    disk = margin * np.stack([np.cos(t), np.sin(t)], axis=1)
    grown = (np.asarray(polygon, dtype=float)[:, None, :] + disk[None]).reshape(-1, 2)
    return convex_hull(grown)


def rasterize_convex(polygon, shape) -> np.ndarray:
    """1 for every pixel centre inside or on a convex polygon, else 0."""
    poly = np.asarray(polygon, dtype=float)
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(float)
    inside = np.ones(shape, dtype=bool)
    # counter-clockwise in (x, y): each edge has the interior on its left
    for (x0, y0), (x1, y1) in zip(poly, np.roll(poly, -1, axis=0)):
        cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        inside &= cross >= 0
    return inside.astype(np.uint8)


@dataclass(frozen=True)
class BinaryMask:
    mask: np.ndarray
    eye_region: np.ndarray
    mouth_region: np.ndarray


def build_binary_mask(
    landmarks,
    scheme: LandmarkScheme = DEFAULT_SCHEME,
    dims=(CROP_SIZE, CROP_SIZE),
    margin: float = MARGIN,
) -> BinaryMask:
    """Eye and mouth region mask over a ``W x H`` canonical crop.

    The eye region is the hull of brow and eye points, the mouth region the
    hull of mouth points; both are grown by ``margin`` times the inter-ocular
    distance before rasterization.
    """
    pts = np.asarray(getattr(landmarks, "landmarks", landmarks), dtype=float)
    width, height = dims
    grow = margin * scheme.interocular(pts)
    eye = dilate_convex(convex_hull(pts[list(scheme.brows + scheme.eyes)]), grow)
    mouth = dilate_convex(convex_hull(pts[list(scheme.mouth)]), grow)
    mask = rasterize_convex(eye, (height, width)) | rasterize_convex(mouth, (height, width))
    return BinaryMask(mask, eye, mouth)


def difference_stack(frames: Sequence, t: int, window: int = WINDOW) -> np.ndarray:
    """``[I_{t-2} - I_t, I_{t-1} - I_t, I_t, I_{t+1} - I_t, I_{t+2} - I_t]``.

    Neighbours past either end of the sequence repeat the nearest frame.
    Unsigned integer planes are widened to a signed type first, so
    ``plane + I_t`` reproduces every neighbour exactly.  Works the same for
    images and for binary masks.
    """
    if len(frames) == 0:
        raise EmptySequence("difference stack needs at least one frame")
    if not 0 <= t < len(frames):
        raise IndexError(f"t={t} outside a sequence of {len(frames)} frames")
    planes = [np.asarray(frames[min(max(j, 0), len(frames) - 1)]) for j in range(t - window // 2, t + window // 2 + 1)]
    centre = planes[window // 2]
    kind = centre.dtype
    if kind.kind in "ub":
        kind = np.int16 if kind.itemsize == 1 or kind.kind == "b" else np.int64
    elif kind.kind == "i":
        kind = np.int64
    stack = np.stack([p.astype(kind) for p in planes])
    ref = centre.astype(kind)
    for k in range(window):
        if k != window // 2:
            stack[k] -= ref
    return stack


def sequence_stacks(frames: Sequence, window: int = WINDOW):
    return [difference_stack(frames, t, window) for t in range(len(frames))]


@dataclass(frozen=True)
class ExternalChannelSpec:
    channel: str
    dim: int
    path: str | None = None


@dataclass
class FeatureTable:
    """Per-frame feature vectors of one channel, in insertion order."""

    channel: str
    dim: int
    frame_ids: list = field(default_factory=list)
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((0, self.dim))
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, self.dim)
        if len(self.frame_ids) != len(self.values):
            raise DimMismatch(f"channel {self.channel}: {len(self.frame_ids)} ids for {len(self.values)} rows")
        self._index = {fid: i for i, fid in enumerate(self.frame_ids)}

    def __len__(self):
        return len(self.frame_ids)

    def __contains__(self, frame_id):
        return frame_id in self._index

    def get(self, frame_id) -> np.ndarray:
        return self.values[self._index[frame_id]]

    def rows(self, frame_ids) -> np.ndarray:
        missing = [f for f in frame_ids if f not in self._index]
        if missing:
            raise MissingFrames(
                f"channel {self.channel}: {len(missing)} frame(s) without features, e.g. {missing[:3]}",
                missing, self.channel,
            )
        return self.values[[self._index[f] for f in frame_ids]]

    def as_dict(self) -> Mapping[str, np.ndarray]:
        return {f: self.values[i] for i, f in enumerate(self.frame_ids)}


def load_external_channel(path, spec: ExternalChannelSpec) -> FeatureTable:
    """Read an external channel file.

    Format: a header ``frame_id,<dim>`` then one row per frame, the frame id
    followed by ``dim`` comma-separated floats.  A completely empty file is an
    empty table.
    """
    if not os.path.exists(path):
        raise IoError(f"external channel {spec.channel}: no such file {path}")
    ids, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return FeatureTable(spec.channel, spec.dim)
        if len(header) != 2 or header[0].strip() != "frame_id":
            raise ParseError("header must be 'frame_id,<dim>'", path, 1)
        try:
            declared = int(header[1])
        except ValueError:
            raise ParseError(f"bad dimensionality {header[1]!r}", path, 1) from None
        if declared != spec.dim:
            raise DimMismatch(f"{path}: channel {spec.channel} declares {declared} values per frame, expected {spec.dim}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            frame_id, values = row[0].strip(), row[1:]
            if len(values) != spec.dim:
                raise DimMismatch(f"{path}:{lineno}: frame {frame_id!r} has {len(values)} values, expected {spec.dim}")
            try:
                rows.append([float(v) for v in values])
            except ValueError:
                raise ParseError(f"frame {frame_id!r}: non-numeric value", path, lineno) from None
            ids.append(frame_id)
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate frame ids", path)
    return FeatureTable(spec.channel, spec.dim, ids, np.array(rows, dtype=float).reshape(-1, spec.dim))


def write_external_channel(path, table: FeatureTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame_id", table.dim])
        for fid, row in zip(table.frame_ids, table.values):
            writer.writerow([fid] + [repr(float(v)) for v in row])
