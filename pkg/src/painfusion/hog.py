"""Landmark-anchored HOG descriptors.

Each landmark gets a 24x24 patch split into 2x2 cells of 12x12 pixels; each
cell is a 9-bin histogram of unsigned gradient orientation (20 degree bins,
centres at 10, 30, ..., 170) with magnitude-weighted linear interpolation
between the two nearest centres.  The 36 values of a patch are L2-normalized
together.  66 landmarks give 2376 values.
"""

import numpy as np

from .errors import BadPatch

PATCH = 24
CELLS = 2
BINS = 9
HOG_DIM = 66 * CELLS * CELLS * BINS


def _gradients(patches):
    padded = np.pad(patches, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = padded[:, 1:-1, 2:] - padded[:, 1:-1, :-2]
    gy = padded[:, 2:, 1:-1] - padded[:, :-2, 1:-1]
    return gx, gy


def hog_descriptors(patches, cells: int = CELLS, bins: int = BINS) -> np.ndarray:
    """Descriptors for a stack of square patches, shape ``(k, p, p)`` -> ``(k, cells*cells*bins)``."""
    patches = np.asarray(patches, dtype=float)
    if patches.ndim != 3 or patches.shape[1] != patches.shape[2] or patches.shape[1] % cells:
        raise BadPatch(f"patches must be (k, p, p) with p divisible by {cells}, got {patches.shape}")
    k, p, _ = patches.shape
    gx, gy = _gradients(patches)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    theta[theta >= 180.0] -= 180.0

    width = 180.0 / bins
    pos = theta / width - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % bins
    hi = (lo + 1) % bins

    cell = p // cells
    rows = np.arange(p) // cell
    cell_id = rows[:, None] * cells + rows[None, :]
    base = (np.arange(k)[:, None, None] * cells * cells + cell_id[None]) * bins
    size = k * cells * cells * bins
    hist = np.bincount((base + lo).ravel(), (mag * (1.0 - frac)).ravel(), minlength=size)
    hist += np.bincount((base + hi).ravel(), (mag * frac).ravel(), minlength=size)
    hist = hist.reshape(k, cells * cells * bins)

    norm = np.sqrt(np.sum(hist * hist, axis=1, keepdims=True))
    return np.divide(hist, norm, out=np.zeros_like(hist), where=norm > 0)


def hog_descriptor_patch(patch, cells: int = CELLS, bins: int = BINS, size: int = PATCH) -> np.ndarray:
    patch = np.asarray(patch)
    if patch.shape != (size, size):
        raise BadPatch(f"expected a {size}x{size} patch, got {patch.shape}")
    return hog_descriptors(patch[None], cells, bins)[0]


def patch_origins(landmarks, shape, size: int = PATCH) -> np.ndarray:
    """Top-left ``(row, col)`` of the patch centred on each rounded landmark,
    clamped so the patch stays inside an image of ``shape``."""
    pts = np.asarray(landmarks, dtype=float)
    h, w = shape
    centre = np.floor(pts + 0.5).astype(np.int64)
    col = np.clip(centre[:, 0] - size // 2, 0, w - size)
    row = np.clip(centre[:, 1] - size // 2, 0, h - size)
    return np.stack([row, col], axis=1)


def extract_patches(image, landmarks, size: int = PATCH) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    origins = patch_origins(landmarks, image.shape, size)
    offs = np.arange(size)
    rows = origins[:, 0, None, None] + offs[None, :, None]
    cols = origins[:, 1, None, None] + offs[None, None, :]
    return image[rows, cols]


def extract_hog(image, landmarks, size: int = PATCH, cells: int = CELLS, bins: int = BINS) -> np.ndarray:
    """Concatenated patch descriptors in landmark order (2376 values for 66 points)."""
    image = np.asarray(image)
    if image.ndim != 2 or min(image.shape) < size:
        raise BadPatch(f"image of shape {image.shape} cannot hold a {size}x{size} patch")
    return hog_descriptors(extract_patches(image, landmarks, size), cells, bins).ravel()
