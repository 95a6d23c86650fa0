"""A parametric 66-point face used by the synthetic data generator.

Coordinates are pixels in a 128x128 image.  Pain-related action units move
landmarks along fixed linear displacement fields, one field per PSPI term:
brow lowering (AU4), orbital tightening (max of AU6/AU7), nose wrinkle and
upper-lip raise (max of AU9/AU10) and eye closure (AU43).
"""

import numpy as np

from .registration import DEFAULT_SCHEME


def _arc(cx, cy, rx, ry, start, stop, n):
    t = np.linspace(start, stop, n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _eye(cx, cy, half_width, upper, lower):
    # corner, two upper-lid points, corner, two lower-lid points
    return np.array([
        [cx - half_width, cy],
        [cx - half_width / 3, cy - upper],
        [cx + half_width / 3, cy - upper],
        [cx + half_width, cy],
        [cx + half_width / 3, cy + lower],
        [cx - half_width / 3, cy + lower],
    ])


def canonical_face() -> np.ndarray:
    """Neutral frontal face, shape ``(66, 2)``."""
    jaw = _arc(64.0, 52.0, 38.0, 60.0, np.pi, 0.0, 17)
    jaw[:, 1] = 52.0 + 60.0 * np.sin(np.linspace(0.0, np.pi, 17))
    right_brow = np.stack([np.linspace(34, 57, 5), 39.0 - 4.0 * np.sin(np.linspace(0.3, np.pi - 0.3, 5))], axis=1)
    left_brow = right_brow.copy()
    left_brow[:, 0] = 128.0 - right_brow[::-1, 0]
    left_brow[:, 1] = right_brow[::-1, 1]
    bridge = np.stack([np.full(4, 64.0), np.linspace(47, 65, 4)], axis=1)
    nostrils = np.stack([np.linspace(56, 72, 5), 70.0 + np.array([0.0, 1.5, 2.5, 1.5, 0.0])], axis=1)
    right_eye = _eye(46.0, 51.0, 8.0, 3.5, 3.0)
    left_eye = _eye(82.0, 51.0, 8.0, 3.5, 3.0)
    outer = np.concatenate([
        _arc(64.0, 89.0, 15.0, 5.0, np.pi, 2 * np.pi, 7),     # 48..54 upper lip, left to right
        _arc(64.0, 89.0, 15.0, 7.0, 0.0, np.pi, 7)[1:-1],      # 55..59 lower lip, right to left
    ])
    outer[1:6, 1] -= np.array([0.0, 1.0, 0.0, 1.0, 0.0])       # cupid's bow
    inner = np.array([[55.0, 88.5], [64.0, 87.8], [73.0, 88.5], [73.0, 89.5], [64.0, 90.4], [55.0, 89.5]])
    face = np.concatenate([jaw, right_brow, left_brow, bridge, nostrils, right_eye, left_eye, outer, inner])
    assert face.shape == (66, 2)
    return face


def _fields(scheme=DEFAULT_SCHEME):
    neutral = canonical_face()
    brow = np.zeros((66, 2))
    for idx in scheme.right_brow:
        brow[idx] = (0.35, 1.1)
    for idx in scheme.left_brow:
        brow[idx] = (-0.35, 1.1)
    # inner brow ends pull in further
    brow[21] += (0.35, 0.25)
    brow[22] += (-0.35, 0.25)

    orbit = np.zeros((66, 2))
    for eye in (scheme.right_eye, scheme.left_eye):
        upper, lower = eye[1:3], eye[4:6]
        for idx in upper:
            orbit[idx] = (0.0, 0.35)
        for idx in lower:
            orbit[idx] = (0.0, -0.3)

    lip = np.zeros((66, 2))
    for idx in range(31, 36):
        lip[idx] = (0.0, -0.35)
    for idx in (49, 50, 51, 52, 53):
        lip[idx] = (0.0, -0.9)
    for idx in (60, 61, 62):
        lip[idx] = (0.0, -0.7)
    for idx in (48, 54):
        lip[idx] = (0.0, -0.3)

    # AU43 closes the lids onto the eye axis (displacement equals the neutral aperture)
    closure = np.zeros((66, 2))
    for eye in (scheme.right_eye, scheme.left_eye):
        axis_y = neutral[eye[0], 1]
        for idx in eye[1:3] + eye[4:6]:
            closure[idx] = (0.0, 0.8 * (axis_y - neutral[idx, 1]))
    return brow, orbit, lip, closure


_FIELDS = _fields()


def deform(points, au4, eyes, nose, au43):
    """Apply the pain displacement fields.

    ``eyes`` and ``nose`` are ``max(AU6, AU7)`` and ``max(AU9, AU10)``.  The
    orbital field is scaled down when AU43 already closes the eye.
    """
    brow, orbit, lip, closure = _FIELDS
    out = np.asarray(points, dtype=float) + au4 * brow + nose * lip
    out = out + (1 - 0.8 * au43) * eyes * orbit * 0.5 + au43 * closure
    return out
