"""DBSCAN entry points used by plane grouping and object densification.

Both wrap scikit-learn. Neighbourhoods are closed balls (distance <= eps)
and ``min_pts`` counts the point itself. Cluster ids follow the index of
each cluster's first core point, and a border point reachable from several
clusters joins the earliest one, so labels depend only on input order.
"""

from __future__ import annotations

import numpy as np
from sklearn.cluster import DBSCAN


def dbscan_precomputed(dist: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    model = DBSCAN(eps=eps, min_samples=min_pts, metric="precomputed")
    return model.fit_predict(dist).astype(np.int64)


def dbscan_points(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    model = DBSCAN(eps=eps, min_samples=min_pts, algorithm="kd_tree")
    return model.fit_predict(pts).astype(np.int64)


def groups_from_labels(labels: np.ndarray) -> list[list[int]]:
    """Member lists per cluster; each noise point becomes its own group.

    Groups are ordered by their smallest member index.
    """
    groups: dict[int, list[int]] = {}
    singles = []
    for i, lab in enumerate(labels):
        if lab < 0:
            singles.append([i])
        else:
            groups.setdefault(int(lab), []).append(i)
    out = list(groups.values()) + singles
    out.sort(key=lambda g: g[0])
    return out
