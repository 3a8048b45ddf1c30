"""Cross-view object fusion: density filtering then the sequential ID / IoU merge."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .clustering import dbscan_points
from .geometry import Box3D, iou_3d
from .ingest import DEFAULT_TAU_CONF, PointCloud, ViewBundle, lift_masked_points

log = logging.getLogger(__name__)


class CandidateDropped(Exception):
    """Every point of a detection was density noise; the detection is discarded."""


@dataclass(frozen=True)
class FusionConfig:
    kappa: float = 0.25
    dbscan_eps_m: float = 0.05
    dbscan_min_pts: int = 5

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("FusionConfig.kappa must lie in (0, 1)")
        if self.dbscan_eps_m <= 0 or self.dbscan_min_pts <= 0:
            raise ValueError("FusionConfig DBSCAN parameters must be > 0")


@dataclass(frozen=True, eq=False)
class LocalObjectCandidate:
    geometry: PointCloud
    instance_id: int
    source_view: int
    seg_confidence: float = 1.0
    category_hint: str | None = None

    def __post_init__(self):
        if len(self.geometry) == 0:
            raise ValueError("object candidate has no geometry")


class Observation(NamedTuple):
    view_id: int
    instance_id: int
    seg_confidence: float


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    object_key: int
    merged_points: PointCloud
    instance_id: int
    bbox: Box3D
    view_observations: tuple[Observation, ...]
    raw_captions: tuple[str, ...] = ()
    caption: str = ""
    canonical_tag: str = ""
    tag_set: tuple[str, ...] = ()
    category_hint: str | None = None
    embedding: np.ndarray | None = field(default=None)
    members: tuple[int, ...] = ()  # indices of the merged detections in the input list

    def __post_init__(self):
        if len(self.raw_captions) > 5:
            raise ValueError("at most 5 raw captions are kept per object")

    @property
    def centroid(self) -> np.ndarray:
        return self.bbox.center

    @property
    def label(self) -> str:
        return self.canonical_tag or self.category_hint or "object"

    def summary(self) -> dict:
        return {
            "object_key": self.object_key,
            "instance_id": self.instance_id,
            "bbox": self.bbox.as_list(),
            "centroid": [float(v) for v in self.centroid],
            "point_count": len(self.merged_points),
            "view_observations": [list(o) for o in self.view_observations],
            "raw_captions": list(self.raw_captions),
            "caption": self.caption,
            "canonical_tag": self.canonical_tag,
            "tag_set": list(self.tag_set),
            "category_hint": self.category_hint,
        }


def densify_filter(candidate: LocalObjectCandidate, cfg: FusionConfig) -> LocalObjectCandidate:
    """Keep only the largest Euclidean DBSCAN cluster of the candidate's points.

    Equal-size clusters are decided by the distance of their centroid to
    the original centroid (closer wins). Raises CandidateDropped when every
    point is noise.
    """
    geom = candidate.geometry
    labels = dbscan_points(geom.points, cfg.dbscan_eps_m, cfg.dbscan_min_pts)
    valid = labels[labels >= 0]
    if valid.size == 0:
        raise CandidateDropped(
            f"view {candidate.source_view} instance {candidate.instance_id}: all points are noise")
    ids, sizes = np.unique(valid, return_counts=True)
    center = geom.points.mean(axis=0)

    def key(i):
        member = geom.points[labels == ids[i]]
        return (-sizes[i], float(np.linalg.norm(member.mean(axis=0) - center)), int(ids[i]))

    best = ids[min(range(len(ids)), key=key)]
    keep = labels == best
    if keep.all():
        return candidate
    px = None if geom.pixels is None else geom.pixels[keep]
    return replace(candidate, geometry=PointCloud(geom.points[keep], geom.source_view, px))


def _bbox(points: np.ndarray, to_frame) -> Box3D:
    return Box3D.from_points(points if to_frame is None else to_frame(points))


def fuse(candidates: list[LocalObjectCandidate], cfg: FusionConfig, to_frame=None) -> list[ObjectInstance]:
    """Fold detections, in (view_id, input) order, into a global object set.

    A detection joins the object whose instance id equals its own; failing
    that, the object with the highest IoU above ``kappa`` (ties to the lower
    key); otherwise it starts a new object. ``to_frame`` maps scene points to
    the gravity frame in which boxes are axis-aligned.
    """
    order = sorted(range(len(candidates)), key=lambda i: (candidates[i].source_view, i))
    objects: list[dict] = []
    by_id: dict[int, int] = {}
    for i in order:
        cand = candidates[i]
        box = _bbox(cand.geometry.points, to_frame)
        target = by_id.get(cand.instance_id)
        if target is None:
            best_iou = cfg.kappa
            for k, obj in enumerate(objects):
                v = iou_3d(box, obj["bbox"])
                if v > best_iou:
                    best_iou, target = v, k
        obs = Observation(cand.source_view, cand.instance_id, float(cand.seg_confidence))
        if target is None:
            by_id.setdefault(cand.instance_id, len(objects))
            objects.append({"points": [cand.geometry.points], "instance_id": cand.instance_id,
                            "bbox": box, "obs": [obs], "hint": cand.category_hint, "members": [i]})
        else:
            obj = objects[target]
            obj["points"].append(cand.geometry.points)
            obj["bbox"] = obj["bbox"].union(box)
            obj["obs"].append(obs)
            obj["members"].append(i)
            if obj["hint"] is None:
                obj["hint"] = cand.category_hint
    return [
        ObjectInstance(object_key=k, merged_points=PointCloud(np.concatenate(o["points"])),
                       instance_id=o["instance_id"], bbox=o["bbox"],
                       view_observations=tuple(o["obs"]), category_hint=o["hint"],
                       members=tuple(o["members"]))
        for k, o in enumerate(objects)
    ]


def extract_candidates(views: list[ViewBundle], cfg: FusionConfig,
                       tau_conf: float = DEFAULT_TAU_CONF) -> tuple[list[LocalObjectCandidate], int]:
    """Lift and density-filter every instance mask; returns (kept, dropped count)."""
    kept, dropped = [], 0
    for view in sorted(views, key=lambda v: v.view_id):
        for mask in view.masks_of_kind("instance"):
            cloud = lift_masked_points(view, mask, tau_conf)
            if len(cloud) == 0:
                continue
            cand = LocalObjectCandidate(cloud, mask.instance_id, view.view_id, mask.confidence,
                                        mask.category_hint)
            try:
                kept.append(densify_filter(cand, cfg))
            except CandidateDropped as exc:
                log.info("dropped detection: %s", exc)
                dropped += 1
    return kept, dropped
