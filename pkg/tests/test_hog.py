import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from painfusion.errors import BadPatch
from painfusion.face_model import canonical_face
from painfusion.hog import HOG_DIM, extract_hog, hog_descriptor_patch


def oracle_patch(patch):
    """Pixel-by-pixel HOG with plain Python loops."""
    p = [[float(v) for v in row] for row in patch]
    n = len(p)

    def px(r, c):
        return p[min(max(r, 0), n - 1)][min(max(c, 0), n - 1)]

    hist = [[0.0] * 9 for _ in range(4)]
    for r in range(n):
        for c in range(n):
            gx = px(r, c + 1) - px(r, c - 1)
            gy = px(r + 1, c) - px(r - 1, c)
            mag = math.hypot(gx, gy)
            if mag == 0:
                continue
            ang = math.degrees(math.atan2(gy, gx)) % 180.0
            if ang >= 180.0:
                ang -= 180.0
            # centres at 10 + 20k
            left = math.floor((ang - 10.0) / 20.0)
            w_right = (ang - (10.0 + 20.0 * left)) / 20.0
            cell = (r // 12) * 2 + (c // 12)
            hist[cell][left % 9] += mag * (1 - w_right)
            hist[cell][(left + 1) % 9] += mag * w_right
    flat = [v for h in hist for v in h]
    norm = math.sqrt(sum(v * v for v in flat))
    return np.array([v / norm for v in flat]) if norm > 0 else np.zeros(36)


def test_constant_patch_is_zero():
    assert np.all(hog_descriptor_patch(np.full((24, 24), 90.0)) == 0)


def test_vertical_step_edge():
    patch = np.zeros((24, 24))
    patch[:, 12:] = 255
    d = hog_descriptor_patch(patch)
    np.testing.assert_allclose(d, oracle_patch(patch), atol=1e-12)
    cells = d.reshape(4, 9)
    # horizontal gradient -> orientation 0 deg, which sits between bins 8 and 0
    assert np.all(cells[:, 1:8] == 0)
    assert np.all(cells[:, 0] > 0) and np.allclose(cells[:, 0], cells[:, 8])


def test_ramp_gives_identical_cells():
    patch = np.tile(np.arange(24.0), (24, 1))
    d = hog_descriptor_patch(patch)
    np.testing.assert_allclose(d, oracle_patch(patch), atol=1e-12)
    cells = d.reshape(4, 9)
    for k in range(1, 4):
        np.testing.assert_allclose(cells[k], cells[0], atol=1e-15)


def test_random_patches_match_oracle():
    rng = np.random.default_rng(8)
    for _ in range(10):
        patch = rng.integers(0, 256, (24, 24))
        np.testing.assert_allclose(hog_descriptor_patch(patch), oracle_patch(patch), atol=1e-12)


def test_bad_patch():
    with pytest.raises(BadPatch):
        hog_descriptor_patch(np.zeros((23, 24)))


def test_extract_dimensions_and_constant_image():
    face = canonical_face()
    assert HOG_DIM == 2376
    feat = extract_hog(np.full((128, 128), 30, np.uint8), face)
    assert feat.shape == (2376,) and np.all(feat == 0)


def test_corner_landmark_is_clamped():
    rng = np.random.default_rng(1)
    image = rng.integers(0, 256, (128, 128)).astype(np.uint8)
    pts = canonical_face()
    pts[0] = (3.0, 3.0)
    pts[1] = (126.6, 120.2)
    feat = extract_hog(image, pts)
    np.testing.assert_allclose(feat[:36], oracle_patch(image[0:24, 0:24]), atol=1e-12)
    np.testing.assert_allclose(feat[36:72], oracle_patch(image[104:128, 104:128]), atol=1e-12)
    # an interior point: patch centred on the rounded landmark
    x, y = np.floor(pts[30] + 0.5).astype(int)
    np.testing.assert_allclose(feat[30 * 36:31 * 36], oracle_patch(image[y - 12:y + 12, x - 12:x + 12]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(0.05, 20))
def test_intensity_invariances(seed, offset, scale):
    rng = np.random.default_rng(seed)
    image = rng.normal(100, 30, (128, 128))
    image[40:60, :] = 5.0  # a flat band so some blocks may be zero
    pts = canonical_face()
    base = extract_hog(image, pts)
    assert np.all(np.isfinite(base)) and np.all(base >= 0)
    norms = np.linalg.norm(base.reshape(66, 36), axis=1)
    assert np.all(norms <= 1 + 1e-6)
    np.testing.assert_allclose(extract_hog(image + offset, pts), base, atol=1e-6)
    np.testing.assert_allclose(extract_hog(image * scale, pts), base, atol=1e-6)


def test_deterministic():
    rng = np.random.default_rng(2)
    image = rng.integers(0, 256, (128, 128)).astype(np.uint8)
    pts = canonical_face()
    assert extract_hog(image, pts).tobytes() == extract_hog(image.copy(), pts.copy()).tobytes()
