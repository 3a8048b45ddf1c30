"""Scoring a pipeline run against synthetic ground truth."""

from __future__ import annotations

import time
from collections import Counter

import numpy as np

from .config import PipelineConfig
from .graph import Hpsg
from .oracles import brute_bfs2, brute_topk
from .pipeline import ParseResult, StageError, run_build, run_parse
from .retrieval import QueryRequest, expand_two_hop, full_graph_result, retrieve, score_nodes, top_k_seeds

NORMAL_TOL_DEG = 2.0
OFFSET_TOL_M = 0.01
PLANE_RUNTIME_LIMIT_S = 30.0
END_TO_END_LIMIT_S = 60.0
CONTEXT_RATIO_LIMIT = 0.40
MIN_OBJECTS_FOR_RATIO = 30
PROBE_QUERY = "what is on the table"
CRITERIA = ("1_planes", "3_labels", "6_retrieval_exactness", "8_end_to_end", "9_context_ratio")


def match_planes(detected: list, truth: list[dict]) -> list[tuple[int, int, float, float]]:
    """Greedy one-to-one matches (gt index, detected index, normal error deg, offset error m)."""
    pairs = []
    for g, t in enumerate(truth):
        tn, td = np.asarray(t["normal"], dtype=np.float64), float(t["offset"])
        for k, lp in enumerate(detected):
            n, d = lp.plane.params.n, lp.plane.params.offset_d
            ang = float(np.degrees(np.arccos(np.clip(n @ tn, -1.0, 1.0))))
            err_d = abs(d - td)
            if ang < NORMAL_TOL_DEG and err_d < OFFSET_TOL_M:
                pairs.append((ang + 100.0 * err_d, g, k, ang, err_d))
    used_g, used_k, out = set(), set(), []
    for _, g, k, ang, err_d in sorted(pairs):
        if g in used_g or k in used_k:
            continue
        used_g.add(g)
        used_k.add(k)
        out.append((g, k, ang, err_d))
    return sorted(out)


def fusion_purity(parsed: ParseResult) -> float:
    """Mean share of each object's observations carrying its majority instance id."""
    if not parsed.objects:
        return 0.0
    shares = []
    for obj in parsed.objects:
        counts = Counter(o.instance_id for o in obj.view_observations)
        shares.append(max(counts.values()) / sum(counts.values()))
    return float(np.mean(shares))


def _edge_present(g: Hpsg, a_key: int, b_key: int, relation: str) -> bool:
    node_of = {n.payload.get("object_key"): n.node_id for n in g.nodes if n.level == 2}
    if a_key not in node_of or b_key not in node_of:
        return False
    ends = (node_of[a_key], node_of[b_key])
    return any(e.endpoints == ends and e.relation == relation for e in g.edges)


def _object_key_for_instance(parsed: ParseResult, instance_id: int) -> int | None:
    for obj in parsed.objects:
        if any(o.instance_id == instance_id for o in obj.view_observations):
            return obj.object_key
    return None


def _empty_report(error: str | None) -> dict:
    return {
        "metrics": {"plane_count": 0, "gt_plane_count": 0, "plane_precision": 0.0, "plane_recall": 0.0,
                    "max_normal_error_deg": None, "max_offset_error_m": None, "plane_runtime_s": None,
                    "label_accuracy": 0.0, "label_counts": {}, "object_count": 0, "fusion_purity": 0.0,
                    "relation_recall": 0.0, "node_count": 0, "context_tokens": None,
                    "full_tokens": None, "context_ratio": None, "total_runtime_s": None},
        "criteria": {c: {"pass": False, "applicable": True, "detail": error or "not run"} for c in CRITERIA},
        "error": error,
    }


def evaluate(views, truth: dict, captions: dict, cfg: PipelineConfig, annotator,
             threads: int = 1) -> dict:
    """Run parse + build + probe query and compare with ``truth`` (ground_truth.json layout)."""
    report = _empty_report(None)
    m, crit = report["metrics"], report["criteria"]
    t_start = time.perf_counter()
    try:
        parsed = run_parse(views, cfg, captions, annotator, threads)
        g = run_build(parsed, annotator, threads)
    except StageError as exc:
        return _empty_report(str(exc))

    gt_planes = truth["planes"]
    matches = match_planes(parsed.planes, gt_planes)
    m["plane_count"] = len(parsed.planes)
    m["gt_plane_count"] = len(gt_planes)
    m["plane_precision"] = len(matches) / len(parsed.planes) if parsed.planes else 0.0
    m["plane_recall"] = len(matches) / len(gt_planes) if gt_planes else 0.0
    if matches:
        m["max_normal_error_deg"] = max(a for _, _, a, _ in matches)
        m["max_offset_error_m"] = max(d for _, _, _, d in matches)
    m["plane_runtime_s"] = parsed.timings.get("plane_detection")
    ok1 = (len(parsed.planes) == len(gt_planes) and len(matches) == len(gt_planes)
           and m["plane_runtime_s"] < PLANE_RUNTIME_LIMIT_S)
    crit["1_planes"] = {"pass": ok1, "applicable": True,
                        "detail": f"{len(parsed.planes)} planes, {len(matches)}/{len(gt_planes)} matched"}

    correct = sum(1 for gi, k, _, _ in matches if parsed.planes[k].label.value == gt_planes[gi]["label"])
    m["label_accuracy"] = correct / len(gt_planes) if gt_planes else 0.0
    m["label_counts"] = parsed.label_counts()
    want = dict(Counter(t["label"] for t in gt_planes))
    ok3 = m["label_accuracy"] == 1.0 and m["label_counts"] == want
    crit["3_labels"] = {"pass": ok3, "applicable": True, "detail": f"labels {m['label_counts']}"}

    m["object_count"] = len(parsed.objects)
    m["fusion_purity"] = fusion_purity(parsed)
    by_name = {o["name"]: o for o in truth["objects"]}
    found = 0
    for a, b, rel in truth["relations"]:
        ka = _object_key_for_instance(parsed, by_name[a]["instance_id"])
        kb = _object_key_for_instance(parsed, by_name[b]["instance_id"])
        if ka is not None and kb is not None and _edge_present(g, ka, kb, rel):
            found += 1
    m["relation_recall"] = found / len(truth["relations"]) if truth["relations"] else 1.0
    m["node_count"] = len(g.nodes)

    embed_dim = len(g.nodes[0].embedding)
    q = annotator.embed_text(PROBE_QUERY)
    scores = score_nodes(g, q, cfg.retrieval.tau)
    k = cfg.retrieval.k
    seeds = top_k_seeds(scores, k)
    inside, kept = brute_bfs2([n.node_id for n in g.nodes],
                              [(e.edge_id, *e.endpoints) for e in g.edges], seeds)
    sub = expand_two_hop(g, seeds, scores)
    ok6 = (seeds == brute_topk(scores, k) and set(sub.node_ids) == inside and set(sub.edge_ids) == kept
           and len(q) == embed_dim)
    crit["6_retrieval_exactness"] = {"pass": ok6, "applicable": True, "detail": f"seeds {seeds}"}

    result = retrieve(g, QueryRequest(PROBE_QUERY, k, cfg.retrieval.tau), annotator.embed_text)
    elapsed = time.perf_counter() - t_start
    m["total_runtime_s"] = elapsed
    table_on = [(a, b) for a, b, rel in truth["relations"]
                if rel == "on" and by_name[b]["tag"] == "table"]
    if table_on:
        a, b = table_on[0]
        ka = _object_key_for_instance(parsed, by_name[a]["instance_id"])
        kb = _object_key_for_instance(parsed, by_name[b]["instance_id"])
        node_of = {n.payload.get("object_key"): n.node_id for n in g.nodes if n.level == 2}
        na, nb = node_of.get(ka), node_of.get(kb)
        text = result.context_text
        ok8 = (na is not None and nb is not None and f"[{na}] " in text and f"[{nb}] " in text
               and f"[{na}] --on--> [{nb}]" in text and elapsed < END_TO_END_LIMIT_S)
        crit["8_end_to_end"] = {"pass": ok8, "applicable": True,
                                "detail": f"{by_name[a]['tag']} node {na}, {by_name[b]['tag']} node {nb}"}
    else:
        crit["8_end_to_end"] = {"pass": None, "applicable": False, "detail": "no object on a table"}

    full = full_graph_result(g, scores)
    m["context_tokens"] = len(result.context_text.split())
    m["full_tokens"] = len(full.context_text.split())
    m["context_ratio"] = m["context_tokens"] / m["full_tokens"]
    if len(parsed.objects) >= MIN_OBJECTS_FOR_RATIO:
        crit["9_context_ratio"] = {"pass": m["context_ratio"] <= CONTEXT_RATIO_LIMIT, "applicable": True,
                                   "detail": f"ratio {m['context_ratio']:.3f}"}
    else:
        crit["9_context_ratio"] = {"pass": None, "applicable": False,
                                   "detail": f"needs >= {MIN_OBJECTS_FOR_RATIO} objects"}
    return report

