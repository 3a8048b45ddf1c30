"""Three-level scene graph: scene type, structural planes, objects.

Edges come in three levels: 0 links the scene-type node to every
structural plane, 1 links planes to objects, 2 links objects to objects.
Levels 1 and 2 are drawn from a minimum spanning tree over pairwise
bounding-box dissimilarity.
"""

from __future__ import annotations

import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotation import ObjectSummary
from .fusion import ObjectInstance
from .geometry import Box3D, iou_3d_batch
from .labeling import GravityFrame, LabeledPlane

GRAPH_VERSION = 1
STRUCTURE_TEMPLATE = "This is a {label} in the {scene}."
DISTANCE_CAP_M = 10.0


class EmptySceneError(ValueError):
    pass


class GraphFormatError(ValueError):
    pass


def _r6(x: float) -> float:
    """Round to 6 significant digits (the on-disk precision)."""
    x = float(x)
    if x == 0.0 or not math.isfinite(x):
        return 0.0 if x == 0.0 else x
    return float(f"{x:.6g}")


def _canon(obj):
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canon(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _r6(obj)
    return obj


def dumps_canonical(doc) -> str:
    """Sorted keys, compact separators, floats at 6 significant digits."""
    return json.dumps(_canon(doc), sort_keys=True, separators=(",", ":")) + "\n"


@dataclass(frozen=True)
class Node:
    node_id: int
    level: int
    caption: str
    payload: dict
    embedding: tuple[float, ...]

    @property
    def label(self) -> str:
        return str(self.payload.get("label", "scene" if self.level == 0 else "object"))

    def to_json(self) -> dict:
        return {"node_id": self.node_id, "level": self.level, "caption": self.caption,
                "payload": self.payload, "embedding": list(self.embedding)}


@dataclass(frozen=True)
class Edge:
    edge_id: int
    endpoints: tuple[int, int]
    level: int
    relation: str
    weight: float

    def to_json(self) -> dict:
        return {"edge_id": self.edge_id, "endpoints": list(self.endpoints), "level": self.level,
                "relation": self.relation, "weight": self.weight}


@dataclass(eq=False)
class Hpsg:
    nodes: list[Node]
    edges: list[Edge]
    meta: dict = field(default_factory=dict)
    adjacency: dict[int, list[int]] = field(init=False)

    def __post_init__(self):
        self.adjacency = build_adjacency(self.nodes, self.edges)
        self._by_id = {n.node_id: n for n in self.nodes}

    def node(self, node_id: int) -> Node:
        return self._by_id[node_id]

    def edge_index(self) -> dict[int, Edge]:
        return {e.edge_id: e for e in self.edges}

    def to_dict(self) -> dict:
        return {"version": GRAPH_VERSION, "meta": self.meta,
                "nodes": [n.to_json() for n in self.nodes],
                "edges": [e.to_json() for e in self.edges]}

    def to_json(self) -> str:
        return dumps_canonical(self.to_dict())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hpsg):
            return NotImplemented
        return self.to_json() == other.to_json()

    def levels(self, level: int) -> list[Node]:
        return [n for n in self.nodes if n.level == level]


def build_adjacency(nodes, edges) -> dict[int, list[int]]:
    adj: dict[int, set[int]] = {n.node_id: set() for n in nodes}
    for e in edges:
        a, b = e.endpoints
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return {k: sorted(v) for k, v in sorted(adj.items())}


# --- candidate pool ----------------------------------------------------------


def similarity_matrix(boxes: list[Box3D]) -> np.ndarray:
    """Pairwise 3D IoU with a unit diagonal."""
    n = len(boxes)
    if n == 0:
        return np.zeros((0, 0))
    lo = np.array([b.lo for b in boxes])
    hi = np.array([b.hi for b in boxes])
    S = iou_3d_batch(lo[:, None, :], hi[:, None, :], lo[None, :, :], hi[None, :, :])
    S = np.minimum(S, S.T)  # exact symmetry
    np.fill_diagonal(S, 1.0)
    return S


def mst_weight(s: float, ci, cj) -> float:
    """Dissimilarity 1 - IoU, plus a capped centroid distance term when IoU is zero."""
    w = 1.0 - s
    if s == 0.0:
        dist = float(np.linalg.norm(np.asarray(ci, dtype=np.float64) - np.asarray(cj, dtype=np.float64)))
        w += min(dist, DISTANCE_CAP_M) / DISTANCE_CAP_M
    return w


def mst_candidate_pool(S: np.ndarray, centroids) -> list[tuple[int, int]]:
    """Kruskal MST over all components; ties broken by (min id, max id).

    Returns the tree's pairs ``(i, j)`` with ``i < j`` in ascending order.
    """
    n = S.shape[0]
    if n == 0:
        raise ValueError("need at least one component")
    cents = np.asarray(centroids, dtype=np.float64).reshape(n, 3)
    weighted = sorted((mst_weight(float(S[i, j]), cents[i], cents[j]), i, j)
                      for i in range(n) for j in range(i + 1, n))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    pairs = []
    for _, i, j in weighted:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
            pairs.append((i, j))
            if len(pairs) == n - 1:
                break
    return sorted(pairs)


# --- construction ------------------------------------------------------------


def _reachable(start: int, node_ids, edges) -> set[int]:
    adj = build_adjacency([Node(i, 0, "", {}, ()) for i in node_ids], edges)
    seen = {start}
    todo = deque([start])
    while todo:
        for m in adj[todo.popleft()]:
            if m not in seen:
                seen.add(m)
                todo.append(m)
    return seen


def _connected(node_ids, edges) -> bool:
    node_ids = list(node_ids)
    if not node_ids:
        return True
    return len(_reachable(node_ids[0], node_ids, edges)) == len(set(node_ids))


def _object_summary(obj: ObjectInstance) -> ObjectSummary:
    return ObjectSummary(obj.caption or obj.label, tuple(float(v) for v in obj.centroid), obj.bbox)


def _directed_relation(annotator, a: ObjectSummary, b: ObjectSummary) -> tuple[str, bool]:
    """Relation for an unordered pair; returns (relation, swapped)."""
    rel = annotator.estimate_relation(a, b)
    if rel in ("on", "in"):
        return rel, False
    rev = annotator.estimate_relation(b, a)
    if rev in ("on", "in"):
        return rev, True
    return rel, False


def plane_payload(lp: LabeledPlane) -> dict:
    p = lp.plane
    return {"label": lp.label.value, "normal": list(p.params.normal), "offset": p.params.offset_d,
            "area_m2": p.area_m2, "boundary_length_m": p.boundary_length_m,
            "supporting_views": list(p.supporting_views), "inlier_count": len(p.points),
            "bbox": lp.bbox.as_list(), "centroid": [float(v) for v in lp.centroid]}


def object_payload(obj: ObjectInstance) -> dict:
    d = obj.summary()
    d["label"] = obj.label
    return d


def build_hpsg(planes: list[LabeledPlane], objects: list[ObjectInstance], annotator,
               frame: GravityFrame | None = None, meta: dict | None = None,
               threads: int = 1) -> Hpsg:
    """Assemble the graph from labelled planes and fused objects.

    Non-structural planes are left out. Object pairs in the spanning tree
    get a relation from ``annotator``; "none" pairs are dropped unless that
    would disconnect the graph, in which case they become "next_to".
    """
    structural = [lp for lp in planes if lp.label.is_structural]
    objects = sorted(objects, key=lambda o: o.object_key)
    if not structural and not objects:
        raise EmptySceneError("scene has neither structural planes nor objects")

    scene_type = annotator.summarize_scene_type([o.caption or o.label for o in objects])
    captions = [scene_type]
    captions += [STRUCTURE_TEMPLATE.format(label=lp.label.value, scene=scene_type) for lp in structural]
    captions += [o.caption or o.label for o in objects]
    levels = [0] + [1] * len(structural) + [2] * len(objects)
    payloads = [{"label": "scene", "scene_type": scene_type}]
    payloads += [plane_payload(lp) for lp in structural]
    payloads += [object_payload(o) for o in objects]
    n_planes = len(structural)
    node_ids = list(range(len(levels)))

    boxes = [lp.bbox for lp in structural] + [o.bbox for o in objects]
    cents = [b.center for b in boxes]
    S = similarity_matrix(boxes)
    pairs = mst_candidate_pool(S, cents) if boxes else []

    edges: list[tuple[tuple[int, int], int, str, float]] = []
    for p in range(n_planes):
        edges.append(((0, 1 + p), 0, "default", 1.0))
    summaries = [_object_summary(o) for o in objects]
    for i, j in pairs:
        w = mst_weight(float(S[i, j]), cents[i], cents[j])
        a, b = 1 + i, 1 + j
        if i < n_planes and j < n_planes:
            continue
        if i < n_planes:
            edges.append(((a, b), 1, "topological", w))
            continue
        rel, swapped = _directed_relation(annotator, summaries[i - n_planes], summaries[j - n_planes])
        edges.append(((b, a) if swapped else (a, b), 2, rel, w))

    def as_edges(items):
        return [Edge(k, ends, lvl, rel, w) for k, (ends, lvl, rel, w) in enumerate(items)]

    # drop "none" relations one at a time unless that disconnects the graph
    k = 0
    while k < len(edges):
        ends, lvl, rel, w = edges[k]
        if lvl == 2 and rel == "none":
            trial = edges[:k] + edges[k + 1:]
            if _connected(node_ids, as_edges(trial)):
                edges = trial
                continue
            edges[k] = (ends, lvl, "next_to", w)
        k += 1

    # objects still unreachable from the scene node hang off the nearest plane
    reach = _reachable(0, node_ids, as_edges(edges))
    for idx, obj in enumerate(objects):
        nid = 1 + n_planes + idx
        if nid in reach:
            continue
        c = obj.centroid
        if n_planes:
            dists = []
            for p, lp in enumerate(structural):
                n = np.asarray(lp.plane.params.normal)
                if frame is not None:
                    n = frame.rotation @ n
                dists.append((abs(float(n @ c) - lp.plane.params.offset_d), p))
            _, best = min(dists)
            edges.append(((1 + best, nid), 1, "topological",
                          mst_weight(float(S[best, n_planes + idx]), cents[best], cents[n_planes + idx])))
        else:
            edges.append(((0, nid), 0, "default", 1.0))
        reach = _reachable(0, node_ids, as_edges(edges))

    def embed(text):
        return annotator.embed_text(text)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(embed, captions))
    else:
        vectors = [embed(c) for c in captions]

    nodes = [Node(i, levels[i], captions[i], _canon(payloads[i]),
                  tuple(_canon(np.asarray(vectors[i], dtype=np.float64))))
             for i in node_ids]
    out_meta = dict(meta or {})
    if hasattr(annotator, "meta"):
        out_meta["annotator"] = annotator.meta()
    return Hpsg(nodes, [Edge(k, ends, lvl, rel, _r6(w)) for k, (ends, lvl, rel, w) in enumerate(edges)],
                _canon(out_meta))


# --- validation and I/O --------------------------------------------------------


def validate_graph(g: Hpsg) -> list[str]:
    """Invariant violations of ``g`` (empty when the graph is valid)."""
    problems = []
    ids = [n.node_id for n in g.nodes]
    if len(set(ids)) != len(ids):
        problems.append("duplicate node ids")
    level_of = {n.node_id: n.level for n in g.nodes}
    if sum(1 for n in g.nodes if n.level == 0) != 1:
        problems.append("graph must have exactly one level-0 node")
    has_planes = any(n.level == 1 for n in g.nodes)
    for n in g.nodes:
        if n.level not in (0, 1, 2):
            problems.append(f"node {n.node_id}: invalid level {n.level}")
        if not n.caption.strip():
            problems.append(f"node {n.node_id}: empty caption")
        norm = math.sqrt(sum(v * v for v in n.embedding))
        if abs(norm - 1.0) > 1e-5:
            problems.append(f"node {n.node_id}: embedding norm {norm:.8f}")
    allowed = {0: {(0, 1)} if has_planes else {(0, 1), (0, 2)}, 1: {(1, 2)}, 2: {(2, 2)}}
    eids = [e.edge_id for e in g.edges]
    if len(set(eids)) != len(eids):
        problems.append("duplicate edge ids")
    for e in g.edges:
        a, b = e.endpoints
        if a not in level_of or b not in level_of:
            problems.append(f"edge {e.edge_id}: unknown endpoint")
            continue
        if a == b:
            problems.append(f"edge {e.edge_id}: self loop")
        pair = tuple(sorted((level_of[a], level_of[b])))
        if pair not in allowed.get(e.level, set()):
            problems.append(f"edge {e.edge_id}: level {e.level} cannot join levels {pair}")
    if g.adjacency != build_adjacency(g.nodes, g.edges):
        problems.append("adjacency does not match edges")
    if not problems and not _connected(ids, g.edges):
        problems.append("graph is not connected")
    return problems


def save_graph(g: Hpsg, path) -> None:
    Path(path).write_text(g.to_json())


def graph_from_dict(doc: dict) -> Hpsg:
    if not isinstance(doc, dict):
        raise GraphFormatError("graph document must be a JSON object")
    if doc.get("version") != GRAPH_VERSION:
        raise GraphFormatError(f"unsupported graph version {doc.get('version')!r}")
    try:
        nodes = [Node(int(n["node_id"]), int(n["level"]), str(n["caption"]), dict(n["payload"]),
                      tuple(float(v) for v in n["embedding"])) for n in doc["nodes"]]
        edges = [Edge(int(e["edge_id"]), (int(e["endpoints"][0]), int(e["endpoints"][1])),
                      int(e["level"]), str(e["relation"]), float(e["weight"])) for e in doc["edges"]]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise GraphFormatError(f"malformed graph: {exc!r}") from exc
    g = Hpsg(nodes, edges, dict(doc.get("meta", {})))
    problems = validate_graph(g)
    if problems:
        raise GraphFormatError("; ".join(problems))
    return g


def load_graph(path) -> Hpsg:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"graph file is not valid JSON: {exc}") from exc
    return graph_from_dict(doc)
