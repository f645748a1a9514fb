"""Density-based clustering (DBSCAN) over 2D point sets."""

import numpy as np
from scipy.spatial import cKDTree

NOISE = -1


def dbscan(points, eps: float = 1.5, min_pts: int = 5) -> tuple[np.ndarray, int]:
    """Cluster ``points`` (n x 2) and return ``(labels, cluster_count)``.

    A point is core when its closed eps-ball (itself included) holds at least
    ``min_pts`` points. Clusters are the connected components of core points;
    a border point joins the cluster of its lowest-index core neighbour.
    Labels are renumbered by each cluster's first member in lexicographic
    (row-major) point order, so the result does not depend on input order.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return np.empty(0, dtype=int), 0
    if eps <= 0 or min_pts < 1:
        raise ValueError(f"need eps > 0 and min_pts >= 1, got eps={eps}, min_pts={min_pts}")

    order = np.lexsort((pts[:, 1], pts[:, 0]))
    sorted_pts = pts[order]
    neighbours = cKDTree(sorted_pts).query_ball_point(sorted_pts, r=eps)
    core = np.fromiter((len(nb) >= min_pts for nb in neighbours), dtype=bool, count=n)

    labels = np.full(n, NOISE, dtype=int)
    count = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != NOISE:
            continue
        labels[seed] = count
        stack = [seed]
        while stack:
            p = stack.pop()
            for q in neighbours[p]:
                if core[q] and labels[q] == NOISE:
                    labels[q] = count
                    stack.append(q)
        count += 1

    for p in np.flatnonzero(~core):
        core_nb = [q for q in neighbours[p] if core[q]]
        if core_nb:
            labels[p] = labels[min(core_nb)]

    # border points can precede their cluster's first core point; renumber
    remap = {}
    for lab in labels:
        if lab != NOISE and lab not in remap:
            remap[lab] = len(remap)
    remap[NOISE] = NOISE
    out = np.empty(n, dtype=int)
    out[order] = [remap[lab] for lab in labels]
    return out, count
