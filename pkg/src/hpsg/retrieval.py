"""Query-driven subgraph extraction and LLM context rendering."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .graph import Hpsg

DEFAULT_K = 5
DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class QueryRequest:
    query_text: str
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


@dataclass
class SubgraphResult:
    seed_ids: list[int]
    node_ids: list[int]
    edge_ids: list[int]
    scores: dict[int, float]
    context_text: str = field(default="")

    def to_json(self) -> dict:
        return {"seeds": self.seed_ids, "nodes": self.node_ids, "edges": self.edge_ids,
                "scores": {str(k): v for k, v in sorted(self.scores.items())},
                "context_text": self.context_text}


def score_nodes(g: Hpsg, query_vec, tau: float = DEFAULT_TAU) -> dict[int, float]:
    """exp(cosine(query, node) / tau) for every node."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    q = np.asarray(query_vec, dtype=np.float64)
    q = q / np.linalg.norm(q)
    E = np.array([n.embedding for n in g.nodes], dtype=np.float64)
    E = E / np.linalg.norm(E, axis=1, keepdims=True)
    cos = np.clip(E @ q, -1.0, 1.0)
    return {n.node_id: float(s) for n, s in zip(g.nodes, np.exp(cos / tau))}


def top_k_seeds(scores: dict[int, float], k: int) -> list[int]:
    """The k best node ids by descending score; equal scores go to the lower id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = np.fromiter(scores.keys(), dtype=np.int64, count=len(scores))
    vals = np.fromiter(scores.values(), dtype=np.float64, count=len(scores))
    n = len(ids)
    if k < n:
        kth = np.partition(vals, n - k)[n - k]
        above = np.flatnonzero(vals > kth)
        tied = np.flatnonzero(vals == kth)
        tied = tied[np.argsort(ids[tied], kind="stable")][: k - len(above)]
        pick = np.concatenate([above, tied])
    else:
        pick = np.arange(n)
    order = np.lexsort((ids[pick], -vals[pick]))
    return [int(i) for i in ids[pick][order]]


def expand_two_hop(g: Hpsg, seeds: list[int], scores: dict[int, float] | None = None) -> SubgraphResult:
    """Seeds plus their first and second neighbours, with every edge among them."""
    dist = {}
    todo = deque()
    for s in seeds:
        if s not in g.adjacency:
            raise KeyError(f"seed {s} is not a node of the graph")
        if s not in dist:
            dist[s] = 0
            todo.append(s)
    while todo:
        u = todo.popleft()
        if dist[u] == 2:
            continue
        for v in g.adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                todo.append(v)
    inside = set(dist)
    edge_ids = sorted(e.edge_id for e in g.edges if e.endpoints[0] in inside and e.endpoints[1] in inside)
    node_scores = {} if scores is None else {i: scores[i] for i in sorted(inside)}
    return SubgraphResult(list(seeds), sorted(inside), edge_ids, node_scores)


def _fmt(values) -> str:
    return ", ".join(f"{float(v):.2f}" for v in values)


def node_line(node) -> str:
    head = f"[{node.node_id}] ({node.level}, {node.label}) {node.caption}"
    p = node.payload
    if "centroid" in p and "bbox" in p:
        head += f" @ ({_fmt(p['centroid'])}) [{_fmt(p['bbox'])}]"
    return head


def render_context(sub: SubgraphResult, g: Hpsg) -> str:
    """One line per node (best score first), then one line per edge by (level, edge_id)."""
    score = sub.scores
    nodes = sorted(sub.node_ids, key=lambda i: (-score.get(i, 0.0), i))
    lines = [node_line(g.node(i)) for i in nodes]
    edges = g.edge_index()
    for e in sorted((edges[i] for i in sub.edge_ids), key=lambda e: (e.level, e.edge_id)):
        a, b = e.endpoints
        lines.append(f"[{a}] --{e.relation}--> [{b}]")
    return "\n".join(lines)


def retrieve(g: Hpsg, request: QueryRequest, embed) -> SubgraphResult:
    """Score, seed, expand and render for one query; ``embed`` maps text to a vector."""
    scores = score_nodes(g, embed(request.query_text), request.tau)
    seeds = top_k_seeds(scores, request.k)
    sub = expand_two_hop(g, seeds, scores)
    sub.context_text = render_context(sub, g)
    return sub


def full_graph_result(g: Hpsg, scores: dict[int, float] | None = None) -> SubgraphResult:
    """The whole graph as a SubgraphResult (baseline for context-size comparisons)."""
    ids = sorted(n.node_id for n in g.nodes)
    scores = scores or {i: 1.0 for i in ids}
    sub = SubgraphResult([], ids, sorted(e.edge_id for e in g.edges), dict(scores))
    sub.context_text = render_context(sub, g)
    return sub
