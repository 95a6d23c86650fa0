"""218-D shape descriptor computed from registered landmarks.

Block layout (frozen, models depend on it)::

    displacement from mean, 49 inner points, x/y interleaved    98
    segment lengths, brows (open) and eyes (closed)             20
    segment lengths, outer lip (closed) and inner lip (open)    17
    distance of each inner point to the stable-point median     49
    interior angles, brows (open) and eyes (closed)             18
    interior angles, outer lip (closed) and inner lip (open)    16
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateAngle, DegenerateAngleWarning
from .registration import DEFAULT_SCHEME, LandmarkScheme

GF_DIM = 218
BLOCK_SIZES = (98, 20, 17, 49, 18, 16)
BLOCK_NAMES = ("displacement", "eye_brow_lengths", "mouth_lengths", "stable_distances", "eye_brow_angles", "mouth_angles")
_EPS = 1e-12


def interior_angle(prev, mid, nxt) -> float:
    """Angle at ``mid`` between the rays to ``prev`` and ``nxt``, in degrees."""
    a = np.asarray(prev, dtype=float) - np.asarray(mid, dtype=float)
    b = np.asarray(nxt, dtype=float) - np.asarray(mid, dtype=float)
    na, nb = np.hypot(*a), np.hypot(*b)
    if na < _EPS or nb < _EPS:
        raise DegenerateAngle("angle vertex coincides with a neighbour")
    cos = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def chain_segments(chain, closed):
    chain = list(chain)
    pairs = list(zip(chain[:-1], chain[1:]))
    if closed:
        pairs.append((chain[-1], chain[0]))
    return pairs


def chain_triples(chain, closed):
    chain = list(chain)
    n = len(chain)
    if closed:
        return [(chain[i - 1], chain[i], chain[(i + 1) % n]) for i in range(n)]
    return [(chain[i - 1], chain[i], chain[i + 1]) for i in range(1, n - 1)]


@dataclass(frozen=True)
class GeometryTables:
    inner: np.ndarray
    stable: np.ndarray
    eye_brow_segments: np.ndarray
    mouth_segments: np.ndarray
    eye_brow_triples: np.ndarray
    mouth_triples: np.ndarray


@lru_cache(maxsize=8)
def geometry_tables(scheme: LandmarkScheme = DEFAULT_SCHEME) -> GeometryTables:
    brow_eye = [(scheme.right_brow, False), (scheme.left_brow, False), (scheme.right_eye, True), (scheme.left_eye, True)]
    mouth = [(scheme.outer_lip, True), (scheme.inner_lip, False)]
    return GeometryTables(
        inner=np.array(scheme.inner),
        stable=np.array(scheme.stable),
        eye_brow_segments=np.array([p for c, closed in brow_eye for p in chain_segments(c, closed)]),
        mouth_segments=np.array([p for c, closed in mouth for p in chain_segments(c, closed)]),
        eye_brow_triples=np.array([t for c, closed in brow_eye for t in chain_triples(c, closed)]),
        mouth_triples=np.array([t for c, closed in mouth for t in chain_triples(c, closed)]),
    )


@dataclass(frozen=True)
class GeometricFeature:
    values: np.ndarray
    degenerate_angles: int = 0

    @property
    def flagged(self) -> bool:
        return self.degenerate_angles > 0

    def block(self, name: str) -> np.ndarray:
        i = BLOCK_NAMES.index(name)
        start = sum(BLOCK_SIZES[:i])
        return self.values[start:start + BLOCK_SIZES[i]]


def _lengths(points, pairs):
    d = points[..., pairs[:, 1], :] - points[..., pairs[:, 0], :]
    return np.sqrt(np.sum(d * d, axis=-1))


def _angles(points, triples):
    a = points[..., triples[:, 0], :] - points[..., triples[:, 1], :]
    b = points[..., triples[:, 2], :] - points[..., triples[:, 1], :]
    na = np.sqrt(np.sum(a * a, axis=-1))
    nb = np.sqrt(np.sum(b * b, axis=-1))
    bad = (na < _EPS) | (nb < _EPS)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)
    angles = np.degrees(np.arccos(cos))
    # tracker glitches: coincident points give a straight angle
    return np.where(bad, 180.0, angles), bad


def geometric_matrix(landmarks, mean, scheme: LandmarkScheme = DEFAULT_SCHEME):
    """Vectorized descriptor for a stack of aligned shapes ``(n, 66, 2)``.

    Returns ``(features (n, 218), degenerate-angle counts (n,))``.
    """
    pts = np.asarray(landmarks, dtype=float)
    ref = np.asarray(getattr(mean, "points", mean), dtype=float)
    tab = geometry_tables(scheme)
    disp = (pts[:, tab.inner, :] - ref[tab.inner, :]).reshape(len(pts), -1)
    median = np.median(pts[:, tab.stable, :], axis=1)
    stable = np.sqrt(np.sum((pts[:, tab.inner, :] - median[:, None, :]) ** 2, axis=-1))
    eb_angles, eb_bad = _angles(pts, tab.eye_brow_triples)
    m_angles, m_bad = _angles(pts, tab.mouth_triples)
    features = np.concatenate([
        disp,
        _lengths(pts, tab.eye_brow_segments),
        _lengths(pts, tab.mouth_segments),
        stable,
        eb_angles,
        m_angles,
    ], axis=1)
    return features, eb_bad.sum(axis=1) + m_bad.sum(axis=1)


def extract_geometric(aligned, mean, scheme: LandmarkScheme = DEFAULT_SCHEME) -> GeometricFeature:
    """218-D descriptor of one aligned face.

    ``aligned`` and ``mean`` must live in the same frame (both in crop pixels,
    or both normalized).  Degenerate angles become 180 degrees and are counted
    in :attr:`GeometricFeature.degenerate_angles`.
    """
    pts = np.asarray(getattr(aligned, "landmarks", aligned), dtype=float)
    features, bad = geometric_matrix(pts[None], mean, scheme)
    if bad[0]:
        warnings.warn(f"{int(bad[0])} degenerate landmark angle(s) replaced by 180 degrees", DegenerateAngleWarning)
    return GeometricFeature(features[0], int(bad[0]))
