"""Independent brute-force reference implementations used by the tests."""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.ndimage import gaussian_filter


def dbscan_reference(points, eps: float, min_pts: int):
    """Textbook DBSCAN on an explicit distance matrix.

    Returns ``(core, components, noise, adj)``: the boolean core mask,
    clusters as frozensets of core indices, the set of noise indices and
    the eps-adjacency matrix. Border assignment is left open because it is
    order dependent.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return np.zeros(0, bool), [], set(), np.zeros((0, 0), bool)
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    adj = dist <= eps
    core = adj.sum(axis=1) >= min_pts
    seen = np.zeros(n, bool)
    components = []
    for s in range(n):
        if not core[s] or seen[s]:
            continue
        comp, queue = set(), deque([s])
        seen[s] = True
        while queue:
            p = queue.popleft()
            comp.add(p)
            for q in np.flatnonzero(adj[p] & core):
                if not seen[q]:
                    seen[q] = True
                    queue.append(q)
        components.append(frozenset(comp))
    reachable = (adj[:, core].any(axis=1)) | core
    noise = set(np.flatnonzero(~reachable).tolist())
    return core, components, noise, adj


def ssim_reference(a, b, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM on grey images via scipy's Gaussian filter (symmetric borders)."""
    f = lambda x: gaussian_filter(x, sigma, mode="reflect", truncate=3.5)  # noqa: E731
    mu_a, mu_b = f(a), f(b)
    saa = f(a * a) - mu_a**2
    sbb = f(b * b) - mu_b**2
    sab = f(a * b) - mu_a * mu_b
    c1, c2 = k1**2, k2**2
    s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2))
    return float(s.mean())


def central_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Coordinate-wise central difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn(x)
        flat[i] = old - h
        fm = fn(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, robust to individually tiny gradient entries."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / scale)


def kink_free_perturbation(rng, shape, lo=0.005, hi=0.06):
    """Random-sign perturbation whose magnitudes are a permuted even grid.

    All magnitudes are distinct and at least ``(hi - lo) / n`` apart, so the
    absolute value and the TV differences stay away from their kinks under
    a central difference of step 1e-5.
    """
    n = int(np.prod(shape))
    mags = lo + (hi - lo) * rng.permutation(n) / max(n - 1, 1)
    signs = rng.choice([-1.0, 1.0], size=n)
    return (signs * mags).reshape(shape)
