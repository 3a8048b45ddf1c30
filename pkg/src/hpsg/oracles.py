"""Brute-force reference implementations used as equality oracles in tests.

Each routine is deliberately naive and imports nothing from the rest of
the package. Inputs above the documented size caps are refused so the
oracles stay obviously correct.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

MAX_POINTS = 10_000
MAX_CLUSTER_ITEMS = 200
MAX_MST_NODES = 8
MAX_EMBEDDINGS = 10_000


class OracleSizeError(ValueError):
    pass


def _cap(n: int, limit: int, what: str) -> None:
    if n > limit:
        raise OracleSizeError(f"{what}: {n} exceeds the oracle cap of {limit}")


def brute_inliers(points, normal, offset, tau) -> list[int]:
    """Indices whose point-to-plane distance is at most ``tau``."""
    pts = [tuple(float(c) for c in p) for p in points]
    _cap(len(pts), MAX_POINTS, "brute_inliers")
    a, b, c = (float(v) for v in normal)
    out = []
    for i, (x, y, z) in enumerate(pts):
        if abs(a * x + b * y + c * z - float(offset)) <= tau:
            out.append(i)
    return out


def brute_dbscan(dist, eps: float, min_pts: int) -> list[int]:
    """DBSCAN over an explicit distance matrix (list of lists).

    Neighbourhoods are closed balls that include the point itself. Clusters
    are numbered in order of their lowest core point; a border point
    reachable from several clusters joins the lowest-numbered one. Noise is -1.
    """
    n = len(dist)
    _cap(n, MAX_CLUSTER_ITEMS, "brute_dbscan")
    nbrs = [[j for j in range(n) if dist[i][j] <= eps] for i in range(n)]
    core = [len(nbrs[i]) >= min_pts for i in range(n)]
    labels = [-1] * n
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        # core points connected to i through chains of core neighbours
        members = {i}
        changed = True
        while changed:
            changed = False
            for p in list(members):
                for q in nbrs[p]:
                    if core[q] and q not in members:
                        members.add(q)
                        changed = True
        for p in members:
            labels[p] = cluster
        cluster += 1
    for i in range(n):
        if core[i]:
            continue
        owners = [labels[j] for j in nbrs[i] if core[j]]
        if owners:
            labels[i] = min(owners)
    return labels


def euclidean_matrix(points) -> list[list[float]]:
    pts = [tuple(float(c) for c in p) for p in points]
    return [[math.dist(p, q) for q in pts] for p in pts]


@lru_cache(maxsize=None)
def _all_trees(n: int) -> tuple:
    """Every labelled spanning tree on n nodes, decoded from Prüfer sequences."""
    if n == 1:
        return ((),)
    if n == 2:
        return (((0, 1),),)
    trees = []
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for v in seq:
            degree[v] += 1
        edges = []
        for v in seq:
            leaf = min(u for u in range(n) if degree[u] == 1)
            edges.append((min(leaf, v), max(leaf, v)))
            degree[leaf] -= 1
            degree[v] -= 1
        u, w = [x for x in range(n) if degree[x] == 1]
        edges.append((u, w))
        trees.append(tuple(edges))
    return tuple(trees)


def count_spanning_trees(n: int) -> int:
    _cap(n, MAX_MST_NODES, "count_spanning_trees")
    return len(_all_trees(n))


def brute_mst(weights) -> tuple[float, tuple]:
    """Minimum total weight over all spanning trees of the complete graph.

    ``weights`` is a symmetric n x n nested list. Returns (weight, edges) of
    the first minimal tree in enumeration order.
    """
    n = len(weights)
    _cap(n, MAX_MST_NODES, "brute_mst")
    best, best_tree = math.inf, ()
    for tree in _all_trees(n):
        total = 0.0
        for a, b in tree:
            total += float(weights[a][b])
        if total < best:
            best, best_tree = total, tree
    return (0.0 if n <= 1 else best), best_tree


def is_spanning_tree(n: int, edges) -> bool:
    if len(edges) != max(n - 1, 0):
        return False
    parent = list(range(n))

    def root(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = root(a), root(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return len({root(x) for x in range(n)}) <= 1


def brute_topk(scores: dict, k: int) -> list:
    """Keys of the k largest scores; ties go to the smaller key."""
    _cap(len(scores), MAX_EMBEDDINGS, "brute_topk")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [key for key, _ in ranked[:k]]


def brute_bfs2(nodes, edges, seeds) -> tuple[set, set]:
    """Nodes within two hops of any seed and the edges with both ends among them.

    ``edges`` is a list of (edge_id, a, b). Distances are found by repeated
    relaxation over the full edge list.
    """
    _cap(len(nodes), MAX_EMBEDDINGS, "brute_bfs2")
    INF = 10**9
    dist = {v: INF for v in nodes}
    for s in seeds:
        dist[s] = 0
    for _ in range(2):
        new = dict(dist)
        for _, a, b in edges:
            new[b] = min(new[b], dist[a] + 1)
            new[a] = min(new[a], dist[b] + 1)
        dist = new
    inside = {v for v, d in dist.items() if d <= 2}
    kept = {eid for eid, a, b in edges if a in inside and b in inside}
    return inside, kept


def box_iou(a, b) -> float:
    """Closed-form IoU of boxes given as (xmin, ymin, zmin, xmax, ymax, zmax)."""
    inter = 1.0
    for i in range(3):
        side = min(a[i + 3], b[i + 3]) - max(a[i], b[i])
        if side <= 0:
            return 0.0
        inter *= side
    va = (a[3] - a[0]) * (a[4] - a[1]) * (a[5] - a[2])
    vb = (b[3] - b[0]) * (b[4] - b[1]) * (b[5] - b[2])
    return inter / (va + vb - inter)


def brute_unionfind_fusion(detections, kappa: float) -> list[list[int]]:
    """Replay of the sequential merge on boxes only.

    ``detections`` is a list of (view_id, instance_id, box) in input order.
    Returns groups of input indices, groups in creation order and members
    in processing order.
    """
    _cap(len(detections), MAX_CLUSTER_ITEMS, "brute_unionfind_fusion")
    order = sorted(range(len(detections)), key=lambda i: (detections[i][0], i))
    groups: list[list[int]] = []
    boxes: list[list[float]] = []
    first_group_of_id: dict = {}
    for i in order:
        _, inst, box = detections[i]
        box = [float(v) for v in box]
        target = first_group_of_id.get(inst)
        if target is None:
            best = kappa
            for g, gb in enumerate(boxes):
                v = box_iou(box, gb)
                if v > best:
                    best, target = v, g
        if target is None:
            if inst not in first_group_of_id:
                first_group_of_id[inst] = len(groups)
            groups.append([i])
            boxes.append(box)
        else:
            groups[target].append(i)
            gb = boxes[target]
            boxes[target] = [min(gb[j], box[j]) for j in range(3)] + [max(gb[j], box[j]) for j in range(3, 6)]
    return groups


def brute_max_planar_ratio(points, tau: float) -> float:
    """Largest fraction of points within ``tau`` of a plane through any point triple."""
    pts = [tuple(float(c) for c in p) for p in points]
    _cap(len(pts), 60, "brute_max_planar_ratio")
    best = 0
    for p, q, r in itertools.combinations(pts, 3):
        u = [q[i] - p[i] for i in range(3)]
        v = [r[i] - p[i] for i in range(3)]
        n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
        norm = math.sqrt(sum(c * c for c in n))
        if norm < 1e-12:
            continue
        n = [c / norm for c in n]
        d = sum(n[i] * p[i] for i in range(3))
        count = sum(1 for s in pts if abs(sum(n[i] * s[i] for i in range(3)) - d) <= tau)
        best = max(best, count)
    return best / len(pts) if pts else 0.0
