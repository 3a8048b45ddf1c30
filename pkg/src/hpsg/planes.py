"""Planar structure extraction: per-mask RANSAC, grouping, growth and cross-view merge."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import dbscan_precomputed, groups_from_labels
from .geometry import (
    PlaneParams,
    estimate_normals,
    fit_plane_lstsq,
    hull_area_perimeter,
    is_degenerate,
    pps_distance_matrix,
)
from .ingest import (
    DEFAULT_TAU_CONF,
    InstanceMask2D,
    PointCloud,
    ViewBundle,
    filter_by_confidence,
    lift_masked_points,
)

log = logging.getLogger(__name__)


class DegenerateCloudError(ValueError):
    """Raised by RANSAC when the input points are coincident or collinear."""


@dataclass(frozen=True)
class PlaneDetectConfig:
    tau_dist: float = 0.02
    rho_min_inlier: float = 0.5
    ransac_iters: int = 500
    theta_ang: float = math.radians(15.0)
    delta_dist: float = 0.03
    pps_eps_intra: float = 0.10
    pps_eps_global: float = 0.15
    dbscan_min_pts: int = 2
    rng_seed: int = 0
    normal_k: int = 16
    min_mask_points: int = 30

    def __post_init__(self):
        for name in ("tau_dist", "rho_min_inlier", "ransac_iters", "theta_ang", "delta_dist",
                     "pps_eps_intra", "pps_eps_global", "dbscan_min_pts", "normal_k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"PlaneDetectConfig.{name} must be > 0")
        if self.rho_min_inlier > 1:
            raise ValueError("PlaneDetectConfig.rho_min_inlier must be <= 1")


@dataclass(frozen=True, eq=False)
class PlaneCandidate:
    params: PlaneParams
    inliers: PointCloud
    source_view: int | None
    inlier_ratio: float
    # the cloud the inliers were selected from
    support: PointCloud = field(default=None)


@dataclass(frozen=True, eq=False)
class GlobalPlane:
    params: PlaneParams
    points: PointCloud
    supporting_views: tuple[int, ...]
    area_m2: float
    boundary_length_m: float
    member_count: int = 1

    def summary(self) -> dict:
        return {
            "normal": list(self.params.normal),
            "offset": self.params.offset_d,
            "area_m2": self.area_m2,
            "boundary_length_m": self.boundary_length_m,
            "supporting_views": list(self.supporting_views),
            "inlier_count": len(self.points),
        }


def _inlier_mask(points: np.ndarray, params: PlaneParams, tau: float) -> np.ndarray:
    return np.abs(points @ params.n - params.offset_d) <= tau


def _select(cloud: PointCloud, keep: np.ndarray) -> PointCloud:
    px = None if cloud.pixels is None else cloud.pixels[keep]
    return PointCloud(cloud.points[keep], cloud.source_view, px)


def fit_plane_ransac(cloud: PointCloud, cfg: PlaneDetectConfig,
                     rng: np.random.Generator | None = None) -> PlaneCandidate | None:
    """Best-consensus plane from 3-point samples, refined by least squares.

    The returned inlier set is exactly the points within ``tau_dist`` of the
    reported (refit, canonical) plane. Returns None when the inlier ratio
    falls below ``rho_min_inlier``; raises DegenerateCloudError for
    collinear or coincident input.
    """
    pts = cloud.points
    n_pts = len(pts)
    if n_pts < 3:
        raise ValueError("RANSAC needs at least 3 points")
    if is_degenerate(pts):
        raise DegenerateCloudError("points are collinear or coincident")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    samples = rng.integers(0, n_pts, size=(cfg.ransac_iters, 3))
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    scale = float(np.ptp(pts, axis=0).max()) ** 2
    valid = norms > 1e-12 * max(scale, 1e-300)
    normals[valid] /= norms[valid, None]
    offsets = np.einsum("ij,ij->i", normals, a)

    counts = np.full(cfg.ransac_iters, -1, dtype=np.int64)
    rms = np.full(cfg.ransac_iters, np.inf)
    chunk = max(1, 2_000_000 // n_pts)
    for s in range(0, cfg.ransac_iters, chunk):
        e = min(s + chunk, cfg.ransac_iters)
        res = np.abs(normals[s:e] @ pts.T - offsets[s:e, None])
        inl = res <= cfg.tau_dist
        cnt = inl.sum(axis=1)
        sq = np.where(inl, res * res, 0.0).sum(axis=1)
        counts[s:e] = np.where(valid[s:e], cnt, -1)
        with np.errstate(invalid="ignore", divide="ignore"):
            rms[s:e] = np.where(cnt > 0, np.sqrt(sq / np.maximum(cnt, 1)), np.inf)
    if counts.max() < 3:
        return None
    # most inliers, then lowest RMS, then earliest iteration
    order = np.lexsort((np.arange(cfg.ransac_iters), rms, -counts))
    best = int(order[0])
    params = PlaneParams.from_arrays(normals[best], offsets[best])
    keep = _inlier_mask(pts, params, cfg.tau_dist)

    for _ in range(10):
        if keep.sum() < 3 or is_degenerate(pts[keep]):
            break
        refit = fit_plane_lstsq(pts[keep])
        new_keep = _inlier_mask(pts, refit, cfg.tau_dist)
        if new_keep.sum() < keep.sum():
            break
        params, changed = refit, not np.array_equal(new_keep, keep)
        keep = new_keep
        if not changed:
            break
    keep = _inlier_mask(pts, params, cfg.tau_dist)
    ratio = float(keep.sum()) / n_pts
    if ratio < cfg.rho_min_inlier:
        return None
    return PlaneCandidate(params, _select(cloud, keep), cloud.source_view, ratio, cloud)


def cluster_pps(candidates: list[PlaneParams], eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels of plane parameters under the PPS metric; noise is -1."""
    return dbscan_precomputed(pps_distance_matrix(list(candidates)), eps, min_pts)


def _rows_of(view_points: PointCloud, pixels: np.ndarray) -> np.ndarray:
    rows = np.searchsorted(view_points.pixels, pixels)
    rows = np.clip(rows, 0, max(len(view_points) - 1, 0))
    if len(pixels) and not np.array_equal(view_points.pixels[rows], pixels):
        raise ValueError("plane inliers are not part of the view cloud")
    return rows


def _region_candidate(view_points: PointCloud, rows: np.ndarray, source_view) -> PlaneCandidate:
    region = _select(view_points, rows)
    params = fit_plane_lstsq(region.points)
    return PlaneCandidate(params, region, source_view, 1.0, region)


def region_grow(plane: PlaneCandidate, view_points: PointCloud, normals: np.ndarray,
                cfg: PlaneDetectConfig, neighbors: np.ndarray | None = None) -> PlaneCandidate:
    """Grow ``plane`` through the k-NN graph of ``view_points``.

    A point joins when it neighbours the region, its normal is within
    ``theta_ang`` of the plane normal (sign ignored) and it lies closer than
    ``delta_dist`` to the plane. The constraints use the input parameters;
    the plane is refit on the grown region afterwards. The returned
    candidate's inliers are the whole region.
    """
    if view_points.pixels is None or plane.inliers.pixels is None:
        raise ValueError("region growing needs pixel-indexed clouds")
    pts = view_points.points
    if neighbors is None:
        _, neighbors = estimate_normals(pts, cfg.normal_k)
    seed_rows = _rows_of(view_points, plane.inliers.pixels)
    n = plane.params.n
    cos_lim = math.cos(cfg.theta_ang)
    ok = (np.abs(pts @ n - plane.params.offset_d) < cfg.delta_dist) & \
         (np.abs(np.asarray(normals) @ n) > cos_lim)

    in_region = np.zeros(len(pts), dtype=bool)
    in_region[seed_rows] = True
    frontier = seed_rows
    while frontier.size:
        cand = np.unique(neighbors[frontier].ravel())
        cand = cand[~in_region[cand] & ok[cand]]
        in_region[cand] = True
        frontier = cand
    return _region_candidate(view_points, np.flatnonzero(in_region), plane.source_view)


def _merge_rows(view_points: PointCloud, members: list[PlaneCandidate]) -> np.ndarray:
    px = np.unique(np.concatenate([m.inliers.pixels for m in members]))
    return _rows_of(view_points, px)


def _consolidate(view_points: PointCloud, planes: list[PlaneCandidate],
                 cfg: PlaneDetectConfig) -> list[PlaneCandidate]:
    while len(planes) > 1:
        labels = cluster_pps([p.params for p in planes], cfg.pps_eps_intra, cfg.dbscan_min_pts)
        groups = groups_from_labels(labels)
        if len(groups) == len(planes):
            break
        planes = [planes[g[0]] if len(g) == 1 else
                  _region_candidate(view_points, _merge_rows(view_points, [planes[i] for i in g]),
                                    planes[g[0]].source_view)
                  for g in groups]
    return planes


def detect_view_planes(view: ViewBundle, class_agnostic_masks: list[InstanceMask2D],
                       cfg: PlaneDetectConfig,
                       tau_conf: float = DEFAULT_TAU_CONF) -> list[PlaneCandidate]:
    """Refined, consolidated planes of one view.

    lift -> RANSAC per mask -> PPS DBSCAN -> region growing -> PPS
    consolidation -> inliers re-selected within ``tau_dist``.
    """
    cloud = filter_by_confidence(view, tau_conf)
    if len(cloud) < 3:
        return []
    normals, nbrs = estimate_normals(cloud.points, cfg.normal_k)

    candidates = []
    for j, mask in enumerate(class_agnostic_masks):
        lifted = lift_masked_points(view, mask, tau_conf)
        if len(lifted) < max(3, cfg.min_mask_points):
            continue
        rng = np.random.default_rng([cfg.rng_seed, view.view_id, j])
        try:
            cand = fit_plane_ransac(lifted, cfg, rng)
        except DegenerateCloudError:
            log.debug("view %d mask %d: degenerate geometry", view.view_id, j)
            continue
        if cand is not None:
            candidates.append(cand)
    if not candidates:
        return []

    labels = cluster_pps([c.params for c in candidates], cfg.pps_eps_intra, cfg.dbscan_min_pts)
    coarse = []
    for g in groups_from_labels(labels):
        members = [candidates[i] for i in g]
        coarse.append(_region_candidate(cloud, _merge_rows(cloud, members), view.view_id))

    grown = [region_grow(p, cloud, normals, cfg, nbrs) for p in coarse]
    refined = _consolidate(cloud, grown, cfg)

    out = []
    for region_plane in refined:
        region = region_plane.support
        keep = _inlier_mask(region.points, region_plane.params, cfg.tau_dist)
        if keep.sum() < 3:
            continue
        ratio = float(keep.sum()) / len(region)
        if ratio < cfg.rho_min_inlier:
            continue
        out.append(PlaneCandidate(region_plane.params, _select(region, keep), view.view_id,
                                  ratio, region))
    return out


def align_cross_view(per_view: list[list[PlaneCandidate]], cfg: PlaneDetectConfig) -> list[GlobalPlane]:
    """Merge per-view planes that cluster together in PPS into global planes."""
    flat = [p for planes in per_view for p in planes]
    if not flat:
        return []
    labels = cluster_pps([p.params for p in flat], cfg.pps_eps_global, cfg.dbscan_min_pts)
    out = []
    for g in groups_from_labels(labels):
        members = [flat[i] for i in g]
        pts = np.concatenate([m.inliers.points for m in members])
        params = fit_plane_lstsq(pts)
        area, perimeter = hull_area_perimeter(pts, params)
        if area <= 0.0:
            continue
        views = tuple(sorted({m.source_view for m in members if m.source_view is not None}))
        out.append(GlobalPlane(params, PointCloud(pts), views, area, perimeter, len(members)))
    return out


def detect_planes(views: list[ViewBundle], cfg: PlaneDetectConfig,
                  tau_conf: float = DEFAULT_TAU_CONF, threads: int = 1) -> list[GlobalPlane]:
    """Whole plane stage over all views (per-view work optionally threaded)."""

    def one(view: ViewBundle):
        return detect_view_planes(view, view.masks_of_kind("segment"), cfg, tau_conf)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_view = list(pool.map(one, views))
    else:
        per_view = [one(v) for v in views]
    return align_cross_view(per_view, cfg)
