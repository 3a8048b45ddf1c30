"""Command-line entry point: synth, parse, build-graph, query, eval.

Exit codes: 0 success, 1 module failure, 2 usage / missing input,
3 empty scene, 4 malformed graph, 5 ground truth missing.
stdout carries only machine-readable payloads; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from .annotation import annotator_from_env
from .config import ConfigError, PipelineConfig, load_config
from .graph import EmptySceneError, GraphFormatError, load_graph, save_graph
from .ingest import SceneFormatError, load_scene
from .pipeline import StageError, load_captions, read_parse, run_build, run_parse, write_parse
from .retrieval import QueryRequest, retrieve

log = logging.getLogger("hpsg")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_EMPTY, EXIT_GRAPH, EXIT_NO_GT = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _config(args) -> PipelineConfig:
    try:
        cfg = load_config(getattr(args, "config", None))
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    overrides = {"rng_seed": getattr(args, "seed", None)}
    if getattr(args, "k", None) is not None:
        overrides["retrieval__k"] = args.k
    if getattr(args, "tau", None) is not None:
        overrides["retrieval__tau"] = args.tau
    return cfg.with_overrides(**overrides)


def _annotator(cfg: PipelineConfig, dim: int | None = None):
    return annotator_from_env(dim or cfg.annotation.embed_dim, cfg.annotation.timeout_s)


def _load_views(scene: Path):
    try:
        return load_scene(scene)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except SceneFormatError as exc:
        raise CliError(f"[scene_ingest] {exc}", EXIT_USAGE) from exc


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


# --- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import SceneSpecError, generate, preset_spec, write_scene

    try:
        spec = preset_spec(args.preset, sigma=args.sigma, rng_seed=args.seed or 0, rot_deg=args.rot)
        scene = generate(spec)
    except SceneSpecError as exc:
        raise CliError(f"[synth_bench] {exc}", EXIT_USAGE) from exc
    manifest = write_scene(scene, args.out)
    _emit({"manifest": str(manifest), "views": len(scene.views), "preset": args.preset,
           "gt_planes": len(scene.truth.planes), "gt_objects": len(scene.truth.objects)})
    return EXIT_OK


def cmd_parse(args) -> int:
    cfg = _config(args)
    views = _load_views(Path(args.scene))
    if args.dry_run:
        _emit({"scene": str(args.scene), "views": len(views), "valid": True,
               "config": cfg.fingerprint()})
        return EXIT_OK
    scene_dir = Path(args.scene) if Path(args.scene).is_dir() else Path(args.scene).parent
    annotator = _annotator(cfg)
    try:
        result = run_parse(views, cfg, load_captions(scene_dir), annotator, args.threads)
    finally:
        annotator.close()
    for stage, secs in result.timings.items():
        log.info("%s: %.2f s", stage, secs)
    p_path, o_path = write_parse(result, args.out)
    _emit({"planes": str(p_path), "objects": str(o_path), "plane_count": len(result.planes),
           "labels": result.label_counts(), "object_count": len(result.objects),
           "dropped_detections": result.dropped_detections})
    return EXIT_OK


def _graph_meta(cfg: PipelineConfig, with_timestamp: bool) -> dict:
    meta = {"config": cfg.fingerprint(), "rng_seed": cfg.rng_seed}
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        meta["built_at"] = datetime.fromtimestamp(int(epoch), timezone.utc).isoformat()
    elif with_timestamp:
        meta["built_at"] = datetime.now(timezone.utc).isoformat()
    return meta


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    try:
        parsed = read_parse(args.parsed)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except (KeyError, ValueError) as exc:
        raise CliError(f"[cli] malformed parse output: {exc}", EXIT_USAGE) from exc
    annotator = _annotator(cfg)
    try:
        g = run_build(parsed, annotator, args.threads, _graph_meta(cfg, args.timestamp))
    except StageError as exc:
        if isinstance(exc.cause, EmptySceneError):
            raise CliError(str(exc), EXIT_EMPTY) from exc
        raise
    finally:
        annotator.close()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(g, out)
    _emit({"graph": str(out), "nodes": len(g.nodes), "edges": len(g.edges)})
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _config(args)
    try:
        g = load_graph(args.graph)
    except FileNotFoundError as exc:
        raise CliError(f"graph not found: {args.graph}", EXIT_USAGE) from exc
    except GraphFormatError as exc:
        raise CliError(f"[hpsg_graph] {exc}", EXIT_GRAPH) from exc
    if not g.nodes:
        raise CliError("[hpsg_graph] graph has no nodes", EXIT_GRAPH)
    annotator = _annotator(cfg, dim=len(g.nodes[0].embedding))
    try:
        request = QueryRequest(args.q, cfg.retrieval.k, cfg.retrieval.tau)
        result = retrieve(g, request, annotator.embed_text)
    finally:
        annotator.close()
    if args.context_only:
        sys.stdout.write(result.context_text + "\n")
    else:
        _emit(result.to_json())
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import evaluate
    from .synth import generate, load_ground_truth, preset_spec

    cfg = _config(args)
    if args.preset:
        scene = generate(preset_spec(args.preset, sigma=args.sigma, rng_seed=args.seed or 0,
                                     rot_deg=args.rot))
        views, truth = scene.views, scene.truth.to_json()
        captions = {(c["instance_id"], c["view_id"]): c["caption"] for c in scene.captions}
        source = f"preset:{args.preset}"
    else:
        if args.scene is None:
            raise CliError("eval needs a scene directory or --preset", EXIT_USAGE)
        scene_dir = Path(args.scene)
        views = _load_views(scene_dir)
        try:
            truth = load_ground_truth(scene_dir if scene_dir.is_dir() else scene_dir.parent)
        except FileNotFoundError as exc:
            raise CliError(str(exc), EXIT_NO_GT) from exc
        captions = load_captions(scene_dir if scene_dir.is_dir() else scene_dir.parent)
        source = str(scene_dir)
    annotator = _annotator(cfg)
    try:
        report = evaluate(views, truth, captions, cfg, annotator, args.threads)
    finally:
        annotator.close()
    report["source"] = source
    applicable = [c["pass"] for c in report["criteria"].values() if c["applicable"]]
    report["passed"] = bool(applicable) and all(applicable)
    if args.json:
        _emit(report)
    else:
        for name, c in report["criteria"].items():
            state = "n/a " if not c["applicable"] else ("PASS" if c["pass"] else "FAIL")
            sys.stdout.write(f"{state} {name}: {c['detail']}\n")
    return EXIT_OK


# --- wiring ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hpsg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    s.add_argument("preset", choices=["room", "office", "tilted-room", "two-rooms"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--sigma", type=float, default=0.005, help="point noise (m)")
    s.add_argument("--rot", type=float, default=15.0, help="tilt for tilted-room (deg)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("parse", help="planes, labels and fused objects from a scene")
    s.add_argument("scene", help="scene directory or scene.json")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=_positive_int, default=1)
    s.add_argument("--dry-run", action="store_true", help="validate inputs only")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("build-graph", help="assemble the scene graph from parse output")
    s.add_argument("parsed", help="directory holding planes.json and objects.json")
    s.add_argument("--out", required=True, help="graph.json path")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=_positive_int, default=1)
    s.add_argument("--timestamp", action="store_true", help="record the build time in meta")
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("query", help="retrieve the query subgraph and its rendered context")
    s.add_argument("graph")
    s.add_argument("--q", required=True, help="query text")
    s.add_argument("--k", type=_positive_int)
    s.add_argument("--tau", type=_positive_float)
    s.add_argument("--config")
    s.add_argument("--context-only", action="store_true", help="print only the context text")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", help="score the pipeline against synthetic ground truth")
    s.add_argument("scene", nargs="?", help="scene directory with ground_truth.json")
    s.add_argument("--preset", choices=["room", "office", "tilted-room", "two-rooms"])
    s.add_argument("--sigma", type=float, default=0.005)
    s.add_argument("--rot", type=float, default=15.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--threads", type=_positive_int, default=1)
    s.add_argument("--json", action="store_true", help="emit the full metrics JSON")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except CliError as exc:
        print(f"hpsg {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except StageError as exc:
        print(f"hpsg {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
