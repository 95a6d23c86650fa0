"""Landmark schema, generalized Procrustes mean shape and face registration.

Shapes are ``(66, 2)`` arrays of ``(x, y)`` pixel coordinates, with pixel
``(row=v, col=u)`` centred on ``(x=u, y=v)``.  Similarity transforms are held
as a complex scale-rotation ``a = s * exp(i*theta)`` and a complex translation,
so ``T(p) = a * p + t`` with points read as ``x + iy``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import BadInput, DegenerateAnchors, EmptyDataset, OutOfBounds

N_POINTS = 66
CROP_SIZE = 128
CROP_PAD = 0.2


def _span(start, stop):
    return tuple(range(start, stop))


@dataclass(frozen=True)
class LandmarkScheme:
    """Index table for the 66-point layout (68-point layout minus the two
    inner-mouth corners).  Ranges are half-open in the constructor helpers
    below but stored as explicit tuples so a custom table can be supplied."""

    jaw: tuple = _span(0, 17)
    right_brow: tuple = _span(17, 22)
    left_brow: tuple = _span(22, 27)
    nose: tuple = _span(27, 36)
    right_eye: tuple = _span(36, 42)
    left_eye: tuple = _span(42, 48)
    outer_lip: tuple = _span(48, 60)
    inner_lip: tuple = _span(60, 66)
    eye_corners: tuple = (36, 39, 42, 45)
    mouth_corners: tuple = (48, 54)

    @property
    def brows(self):
        return self.right_brow + self.left_brow

    @property
    def eyes(self):
        return self.right_eye + self.left_eye

    @property
    def mouth(self):
        return self.outer_lip + self.inner_lip

    @property
    def inner(self):
        """The 49 points on brows, nose, eyes and mouth."""
        return self.brows + self.nose + self.eyes + self.mouth

    @property
    def anchors(self):
        return self.eye_corners + self.mouth_corners

    @property
    def stable(self):
        return self.nose + self.eye_corners

    def eye_centers(self, points):
        points = np.asarray(points, dtype=float)
        return points[list(self.right_eye)].mean(axis=0), points[list(self.left_eye)].mean(axis=0)

    def interocular(self, points):
        right, left = self.eye_centers(points)
        return float(np.hypot(*(left - right)))


DEFAULT_SCHEME = LandmarkScheme()


@dataclass(frozen=True)
class LandmarkFrame:
    points: np.ndarray
    frame_id: str = ""
    subject_id: str = ""
    sequence_id: str = ""

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.shape != (N_POINTS, 2):
            raise BadInput(f"frame {self.frame_id!r}: expected {N_POINTS}x2 landmarks, got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise BadInput(f"frame {self.frame_id!r}: non-finite landmark coordinates")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float = 1.0
    rotation: float = 0.0
    translation: tuple = (0.0, 0.0)

    @classmethod
    def from_complex(cls, a: complex, t: complex) -> "SimilarityTransform":
        return cls(float(abs(a)), float(math.atan2(a.imag, a.real)), (float(t.real), float(t.imag)))

    @property
    def a(self) -> complex:
        return self.scale * complex(math.cos(self.rotation), math.sin(self.rotation))

    @property
    def t(self) -> complex:
        return complex(*self.translation)

    def apply(self, points) -> np.ndarray:
        z = _to_complex(points)
        return _to_points(self.a * z + self.t)

    def inverse(self) -> "SimilarityTransform":
        inv = 1.0 / self.a
        return SimilarityTransform.from_complex(inv, -inv * self.t)

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """``self ∘ inner``: apply ``inner`` first."""
        return SimilarityTransform.from_complex(self.a * inner.a, self.a * inner.t + self.t)

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix acting on column vectors ``(x, y, 1)``."""
        c, s = self.a.real, self.a.imag
        tx, ty = self.translation
        return np.array([[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]])


IDENTITY = SimilarityTransform()


def _to_complex(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points[..., 0] + 1j * points[..., 1]


def _to_points(z) -> np.ndarray:
    return np.stack([np.real(z), np.imag(z)], axis=-1)


@dataclass(frozen=True)
class MeanShape:
    """Procrustes mean in the normalized frame: centroid at the origin, RMS
    point norm 1, eye line horizontal."""

    points: np.ndarray
    subjects: frozenset = field(default_factory=frozenset)
    mode: str = "train"

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        points.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "subjects", frozenset(self.subjects))

    @property
    def provenance(self) -> str:
        if self.mode == "full":
            return "full-dataset"
        return ",".join(sorted(self.subjects))


def _normalize(z: np.ndarray) -> np.ndarray:
    """Center and scale complex shapes (last axis = points) to unit RMS norm."""
    z = z - z.mean(axis=-1, keepdims=True)
    rms = np.sqrt(np.mean(np.abs(z) ** 2, axis=-1, keepdims=True))
    return z / rms


def _orient(z: np.ndarray, scheme: LandmarkScheme) -> np.ndarray:
    right = z[list(scheme.right_eye)].mean()
    left = z[list(scheme.left_eye)].mean()
    d = left - right
    if abs(d) == 0:
        return z
    return z * (abs(d) / d)


def compute_mean_shape(
    frames: Iterable,
    *,
    scheme: LandmarkScheme = DEFAULT_SCHEME,
    tol: float = 1e-8,
    max_iter: int = 100,
    mode: str = "train",
) -> MeanShape:
    """Generalized Procrustes mean of a set of landmark frames.

    Every shape is aligned (similarity, no reflection) to the running mean, the
    aligned shapes are averaged and the average renormalized, until the mean
    moves less than ``tol`` or ``max_iter`` rounds have run.  The result is
    rotated so the line between the eye centres is horizontal, which makes it
    independent of any global similarity applied to the inputs.
    """
    frames = list(frames)
    if not frames:
        raise EmptyDataset("cannot compute a mean shape from zero frames")
    shapes = np.stack([np.asarray(getattr(f, "points", f), dtype=float) for f in frames])
    subjects = frozenset(getattr(f, "subject_id", "") for f in frames) - {""}
    z = _normalize(_to_complex(shapes))
    mean = _orient(z[0], scheme)
    for _ in range(max_iter):
        # optimal complex factor per shape; shapes are already centred
        a = (np.conj(z) @ mean) / np.sum(np.abs(z) ** 2, axis=1)
        new = _orient(_normalize(np.mean(a[:, None] * z, axis=0)), scheme)
        moved = np.max(np.abs(new - mean))
        mean = new
        if moved < tol:
            break
    return MeanShape(_to_points(mean), subjects=subjects, mode=mode)


def fit_similarity(source, target) -> SimilarityTransform:
    """Least-squares similarity (no reflection) taking ``source`` onto ``target``."""
    zs = _to_complex(source)
    zt = _to_complex(target)
    if zs.shape != zt.shape or zs.ndim != 1:
        raise BadInput("source and target must be matching Nx2 point sets")
    _check_anchor_geometry(zs)
    _check_anchor_geometry(zt)
    ms, mt = zs.mean(), zt.mean()
    cs, ct = zs - ms, zt - mt
    a = np.vdot(cs, ct) / np.vdot(cs, cs).real
    return SimilarityTransform.from_complex(complex(a), complex(mt - a * ms))


def _check_anchor_geometry(z: np.ndarray, rel_tol: float = 1e-9):
    if z.size < 3:
        raise DegenerateAnchors(f"need at least 3 anchor points, got {z.size}")
    centred = _to_points(z - z.mean())
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] < 1e-12:
        raise DegenerateAnchors("anchor points coincide")
    if sv[1] < rel_tol * sv[0]:
        raise DegenerateAnchors("anchor points are collinear")


@dataclass(frozen=True)
class AlignedFace:
    landmarks: np.ndarray
    transform: SimilarityTransform
    image: np.ndarray | None = None
    frame_id: str = ""
    subject_id: str = ""


def procrustes_align(frame, mean, anchors: Sequence[int] = DEFAULT_SCHEME.anchors) -> AlignedFace:
    """Fit a similarity on ``anchors`` only and apply it to all 66 points.

    ``mean`` may be a :class:`MeanShape` or any ``(66, 2)`` reference, such as
    the crop-space template from :func:`canonical_template`.
    """
    anchors = list(anchors)
    if len(anchors) < 3:
        raise DegenerateAnchors(f"need at least 3 anchors, got {len(anchors)}")
    if min(anchors) < 0 or max(anchors) >= N_POINTS:
        raise BadInput(f"anchor indices must lie in [0, {N_POINTS - 1}]")
    points = np.asarray(getattr(frame, "points", frame), dtype=float)
    reference = np.asarray(getattr(mean, "points", mean), dtype=float)
    transform = fit_similarity(points[anchors], reference[anchors])
    return AlignedFace(
        landmarks=transform.apply(points),
        transform=transform,
        frame_id=getattr(frame, "frame_id", ""),
        subject_id=getattr(frame, "subject_id", ""),
    )


def canonical_template(mean: MeanShape, size: int = CROP_SIZE, pad: float = CROP_PAD) -> np.ndarray:
    """Mean shape placed in crop pixel coordinates.

    The mean-shape bounding box, squared up and padded by ``pad`` of its side on
    every edge, is mapped onto the ``size x size`` crop.
    """
    pts = np.asarray(mean.points if isinstance(mean, MeanShape) else mean, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = float(np.max(hi - lo)) * (1.0 + 2.0 * pad)
    centre = (lo + hi) / 2.0
    return (pts - centre) * (size / side) + (size - 1) / 2.0


def crop_and_normalize_face(image, frame, transform: SimilarityTransform, size: int = CROP_SIZE) -> np.ndarray:
    """Warp ``image`` into the canonical crop frame and resample to ``size x size``.

    ``transform`` maps raw image pixels to crop pixels.  Sampling is bilinear
    with edge replication; the result is 8-bit.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise BadInput(f"expected a 2-D grayscale image, got shape {image.shape}")
    h, w = image.shape
    points = np.asarray(getattr(frame, "points", frame), dtype=float)
    if np.any(points[:, 0] < 0) or np.any(points[:, 0] > w - 1) or np.any(points[:, 1] < 0) or np.any(points[:, 1] > h - 1):
        raise OutOfBounds(f"frame {getattr(frame, 'frame_id', '')!r}: landmarks outside the {w}x{h} image")
    v, u = np.mgrid[0:size, 0:size].astype(float)
    inv = transform.inverse()
    src = inv.a * (u + 1j * v) + inv.t
    warped = ndimage.map_coordinates(
        image.astype(float), [src.imag, src.real], order=1, mode="nearest"
    )
    return np.clip(np.floor(warped + 0.5), 0, 255).astype(np.uint8)


def register_face(image, frame, template, anchors=DEFAULT_SCHEME.anchors, size: int = CROP_SIZE) -> AlignedFace:
    """Align ``frame`` to ``template`` (crop pixel space) and crop the image."""
    aligned = procrustes_align(frame, template, anchors)
    crop = crop_and_normalize_face(image, frame, aligned.transform, size)
    return AlignedFace(aligned.landmarks, aligned.transform, crop, aligned.frame_id, aligned.subject_id)
