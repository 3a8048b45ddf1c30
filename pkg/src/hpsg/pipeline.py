"""End-to-end stages and their on-disk artefacts.

``parse`` turns a scene directory into labelled planes and fused, captioned
objects (planes.json, objects.json and raw point files); ``build`` turns
those into a graph.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotation import top_captions
from .config import PipelineConfig
from .fusion import ObjectInstance, Observation, extract_candidates, fuse
from .geometry import Box3D, PlaneParams
from .graph import Hpsg, build_hpsg, dumps_canonical
from .ingest import PointCloud, ViewBundle
from .labeling import GravityFrame, LabeledPlane, StructuralLabel, estimate_gravity, label_planes
from .planes import GlobalPlane, detect_planes

log = logging.getLogger(__name__)

PARSE_VERSION = 1


class StageError(RuntimeError):
    """A pipeline failure attributed to the module that raised it."""

    def __init__(self, module: str, exc: BaseException):
        super().__init__(f"[{module}] {type(exc).__name__}: {exc}")
        self.module = module
        self.cause = exc


@dataclass
class ParseResult:
    frame: GravityFrame
    planes: list[LabeledPlane]
    objects: list[ObjectInstance]
    dropped_detections: int = 0
    timings: dict = field(default_factory=dict)

    def label_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for lp in self.planes:
            out[lp.label.value] = out.get(lp.label.value, 0) + 1
        return out


def load_captions(scene_dir) -> dict[tuple[int, int], str]:
    """``captions.json`` as {(instance_id, view_id): caption}; empty when absent."""
    path = Path(scene_dir) / "captions.json"
    if not path.is_file():
        return {}
    doc = json.loads(path.read_text())
    return {(int(c["instance_id"]), int(c["view_id"])): str(c["caption"]) for c in doc}


def caption_objects(objects: list[ObjectInstance], lookup: dict, annotator) -> list[ObjectInstance]:
    out = []
    for obj in objects:
        raw = top_captions(obj.view_observations, lookup)
        if raw:
            caption, tag, tags = annotator.refine_captions(raw)
        else:
            caption = tag = obj.category_hint or "object"
            tags = [tag]
        out.append(dataclasses.replace(obj, raw_captions=tuple(raw), caption=caption,
                                       canonical_tag=tag, tag_set=tuple(tags)))
    return out


def _stage(module: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # attribute the failure, let the caller decide the exit code
        raise StageError(module, exc) from exc


def run_parse(views: list[ViewBundle], cfg: PipelineConfig, captions: dict, annotator,
              threads: int = 1) -> ParseResult:
    t = {}
    t0 = time.perf_counter()
    planes = _stage("plane_detection", detect_planes, views, cfg.plane_config, cfg.tau_conf, threads)
    t["plane_detection"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    frame = _stage("structure_labeling", estimate_gravity, planes, cfg.prior_up)
    labeled = _stage("structure_labeling", label_planes, planes, frame, cfg.labels)
    t["structure_labeling"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cands, dropped = _stage("object_fusion", extract_candidates, views, cfg.fusion, cfg.tau_conf)
    objects = _stage("object_fusion", fuse, cands, cfg.fusion, frame.to_frame)
    objects = _stage("annotation", caption_objects, objects, captions, annotator)
    t["object_fusion"] = time.perf_counter() - t0
    return ParseResult(frame, labeled, objects, dropped, t)


def run_build(parsed: ParseResult, annotator, threads: int = 1, meta: dict | None = None) -> Hpsg:
    return _stage("hpsg_graph", build_hpsg, parsed.planes, parsed.objects, annotator,
                  parsed.frame, meta, threads)


# --- persistence ---------------------------------------------------------------


def _write_points(path: Path, points: np.ndarray) -> None:
    np.asarray(points, dtype="<f4").tofile(path)


def _read_points(path: Path) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(-1, 3).astype(np.float64)


def write_parse(result: ParseResult, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    (out_dir / "points").mkdir(parents=True, exist_ok=True)
    planes = []
    for i, lp in enumerate(result.planes):
        rel = f"points/plane_{i:03d}.f32"
        _write_points(out_dir / rel, lp.plane.points.points)
        planes.append({**lp.plane.summary(), "index": i, "label": lp.label.value,
                       "member_count": lp.plane.member_count, "bbox": lp.bbox.as_list(),
                       "centroid": lp.centroid, "points": rel})
    plane_doc = {"version": PARSE_VERSION,
                 "frame": {"up": list(result.frame.up), "floor_height": result.frame.floor_height},
                 "planes": planes}
    objects = []
    for obj in result.objects:
        rel = f"points/object_{obj.object_key:03d}.f32"
        _write_points(out_dir / rel, obj.merged_points.points)
        objects.append({**obj.summary(), "members": list(obj.members), "points": rel})
    object_doc = {"version": PARSE_VERSION, "dropped_detections": result.dropped_detections,
                  "objects": objects}
    p_path, o_path = out_dir / "planes.json", out_dir / "objects.json"
    p_path.write_text(dumps_canonical(plane_doc))
    o_path.write_text(dumps_canonical(object_doc))
    return p_path, o_path


def read_parse(parsed_dir) -> ParseResult:
    parsed_dir = Path(parsed_dir)
    p_path, o_path = parsed_dir / "planes.json", parsed_dir / "objects.json"
    for p in (p_path, o_path):
        if not p.is_file():
            raise FileNotFoundError(f"parse output not found: {p}")
    pdoc = json.loads(p_path.read_text())
    odoc = json.loads(o_path.read_text())
    for name, doc in (("planes.json", pdoc), ("objects.json", odoc)):
        if doc.get("version") != PARSE_VERSION:
            raise ValueError(f"{name}: unsupported version {doc.get('version')!r}")
    up = np.asarray(pdoc["frame"]["up"], dtype=np.float64)
    frame = GravityFrame(tuple(float(v) for v in up / np.linalg.norm(up)),
                         float(pdoc["frame"]["floor_height"]))
    planes = []
    for d in pdoc["planes"]:
        gp = GlobalPlane(PlaneParams.from_arrays(d["normal"], d["offset"]),
                         PointCloud(_read_points(parsed_dir / d["points"])),
                         tuple(d["supporting_views"]), float(d["area_m2"]),
                         float(d["boundary_length_m"]), int(d["member_count"]))
        planes.append(LabeledPlane(gp, StructuralLabel(d["label"]), Box3D.from_list(d["bbox"])))
    objects = []
    for d in odoc["objects"]:
        objects.append(ObjectInstance(
            object_key=int(d["object_key"]),
            merged_points=PointCloud(_read_points(parsed_dir / d["points"])),
            instance_id=int(d["instance_id"]), bbox=Box3D.from_list(d["bbox"]),
            view_observations=tuple(Observation(int(v), int(i), float(c))
                                    for v, i, c in d["view_observations"]),
            raw_captions=tuple(d["raw_captions"]), caption=d["caption"],
            canonical_tag=d["canonical_tag"], tag_set=tuple(d["tag_set"]),
            category_hint=d.get("category_hint"), members=tuple(d.get("members", ()))))
    return ParseResult(frame, planes, objects, int(odoc.get("dropped_detections", 0)))
