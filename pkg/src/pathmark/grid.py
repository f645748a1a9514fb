"""Linear resampling operators and DCT bases shared by the pipeline.

Every resampler here is expressed as a dense matrix so that its transpose
is available for analytic gradients.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=256)
def corner_aligned_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation with the first and last samples pinned to the ends."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"sizes must be >= 1, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    for i in range(n_out):
        pos = 0.0 if n_out == 1 else i * (n_in - 1) / (n_out - 1)
        j0 = min(int(np.floor(pos)), n_in - 2)
        frac = pos - j0
        m[i, j0] += 1.0 - frac
        m[i, j0 + 1] += frac
    m.setflags(write=False)
    return m


@lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centred triangle filter, widened when shrinking (antialiased bilinear)."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"sizes must be >= 1, got {n_in} -> {n_out}")
    scale = n_in / n_out
    support = max(scale, 1.0)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale
        lo = max(0, int(np.floor(center - support)))
        hi = min(n_in, int(np.ceil(center + support)))
        j = np.arange(lo, hi)
        w = np.maximum(0.0, 1.0 - np.abs((j + 0.5 - center) / support))
        m[i, lo:hi] = w / w.sum()
    m.setflags(write=False)
    return m


def apply_separable(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Apply ``rows @ img @ cols.T`` to a 2D or channel-last 3D array."""
    if img.ndim == 2:
        return rows @ img @ cols.T
    return np.einsum("ij,jkc,lk->ilc", rows, img, cols)


def resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    return apply_separable(img, resize_matrix(img.shape[0], h), resize_matrix(img.shape[1], w))


@lru_cache(maxsize=32)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; ``C @ x`` transforms, ``C.T @ X`` inverts."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    c[0] *= np.sqrt(1.0 / n)
    c[1:] *= np.sqrt(2.0 / n)
    c.setflags(write=False)
    return c


@lru_cache(maxsize=32)
def zigzag(n: int) -> tuple:
    """(row, col) index arrays of an n x n grid in JPEG zigzag order."""
    order = []
    for s in range(2 * n - 1):
        diag = [(r, s - r) for r in range(n) if 0 <= s - r < n]
        # odd anti-diagonals run downward, even ones upward
        order.extend(diag if s % 2 else diag[::-1])
    rows = np.array([p[0] for p in order])
    cols = np.array([p[1] for p in order])
    return rows, cols


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image centre with bilinear sampling and zero fill."""
    h, w = img.shape[:2]
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    dy, dx = yy - cy, xx - cx
    sx = c * dx + s * dy + cx
    sy = -s * dx + c * dy + cy
    # snap round-off so that multiples of 360 degrees land exactly on the grid
    tol = 1e-9
    sx = np.where(np.abs(sx - np.round(sx)) < tol, np.round(sx), sx)
    sy = np.where(np.abs(sy - np.round(sy)) < tol, np.round(sy), sy)
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.minimum(np.floor(sx).astype(int), max(w - 2, 0))
    y0 = np.minimum(np.floor(sy).astype(int), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if img.ndim == 3:
        fx, fy, inside = fx[..., None], fy[..., None], inside[..., None]
    out = (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )
    return np.where(inside, out, 0.0)
