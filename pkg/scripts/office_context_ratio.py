"""Rendered-context size of the probe query versus the whole office graph.

    python scripts/office_context_ratio.py [--k 5] [--seed 0]
"""

import argparse
import time

from hpsg import synth
from hpsg.annotation import StubAnnotator
from hpsg.config import PipelineConfig
from hpsg.evaluate import PROBE_QUERY
from hpsg.pipeline import run_build, run_parse
from hpsg.retrieval import QueryRequest, full_graph_result, retrieve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--q", default=PROBE_QUERY)
    args = ap.parse_args()

    scene = synth.generate(synth.office_spec(rng_seed=args.seed))
    captions = {(c["instance_id"], c["view_id"]): c["caption"] for c in scene.captions}
    ann = StubAnnotator()
    t0 = time.perf_counter()
    parsed = run_parse(scene.views, PipelineConfig(rng_seed=args.seed), captions, ann)
    g = run_build(parsed, ann)
    t_build = time.perf_counter() - t0

    t0 = time.perf_counter()
    sub = retrieve(g, QueryRequest(args.q, k=args.k), ann.embed_text)
    t_query = time.perf_counter() - t0
    full = full_graph_result(g)
    n_sub, n_full = len(sub.context_text.split()), len(full.context_text.split())
    print(f"objects {len(parsed.objects)}, nodes {len(g.nodes)}, edges {len(g.edges)}")
    print(f"parse+build {t_build:.1f} s, query {t_query * 1000:.1f} ms")
    print(f"seeds {sub.seed_ids}, subgraph {len(sub.node_ids)} nodes")
    print(f"context tokens {n_sub} / {n_full} = {n_sub / n_full:.3f}")


if __name__ == "__main__":
    main()
