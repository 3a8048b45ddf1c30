"""Floor / ceiling / wall labelling of global planes in a gravity-aligned frame."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, PlaneParams, line_angle_deg, project_to_plane, rotation_aligning
from .planes import GlobalPlane

# planes whose normal is within this cone of the prior may seed the floor
GRAVITY_PRIOR_CONE_DEG = 25.0
# fraction of scene points that must sit above a floor hypothesis
FLOOR_ABOVE_FRACTION = 0.9
# slack below the floor hypothesis still counted as "above" (sensor noise)
FLOOR_ABOVE_SLACK_M = 0.1
# horizontal planes this close to the lowest one are floors too
FLOOR_BAND_M = 0.2


class StructuralLabel(str, enum.Enum):
    FLOOR = "floor"
    CEILING = "ceiling"
    WALL = "wall"
    NON_STRUCTURAL = "non_structural"

    @property
    def is_structural(self) -> bool:
        return self is not StructuralLabel.NON_STRUCTURAL


class GravityIndeterminateError(RuntimeError):
    pass


@dataclass(frozen=True)
class GravityFrame:
    up: tuple[float, float, float]
    floor_height: float

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.up)) - 1.0) > 1e-6:
            raise ValueError("gravity up vector must be unit length")

    @property
    def rotation(self) -> np.ndarray:
        """Rotation taking scene coordinates to the frame whose z axis is ``up``."""
        return rotation_aligning(self.up, (0.0, 0.0, 1.0))

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T

    def height(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ np.asarray(self.up)


@dataclass(frozen=True)
class LabelConfig:
    ceiling_cone_deg: float = 20.0
    wall_ortho_tol_deg: float = 10.0
    min_wall_area_m2: float = 0.5
    min_wall_boundary_m: float = 2.0
    min_wall_views: int = 2

    def __post_init__(self):
        for name in ("ceiling_cone_deg", "wall_ortho_tol_deg", "min_wall_area_m2",
                     "min_wall_boundary_m", "min_wall_views"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LabelConfig.{name} must be > 0")


@dataclass(frozen=True, eq=False)
class LabeledPlane:
    plane: GlobalPlane
    label: StructuralLabel
    # inliers projected onto the plane, bounded in the gravity frame
    bbox: Box3D

    @property
    def centroid(self) -> np.ndarray:
        return self.bbox.center


def estimate_gravity(planes: list[GlobalPlane], prior_up=None) -> GravityFrame:
    """Bootstrap the up direction from the best floor hypothesis.

    Candidates are planes within 25 degrees of ``prior_up`` (default +z),
    oriented to agree with it. A candidate qualifies when at least 90 % of
    all plane points lie above it (10 cm slack); the qualifying plane with
    the most points wins. Without a qualifier the largest candidate is used.
    """
    if not planes:
        raise GravityIndeterminateError("no planes to estimate gravity from")
    prior = np.array((0.0, 0.0, 1.0) if prior_up is None else prior_up, dtype=np.float64)
    prior /= np.linalg.norm(prior)
    all_pts = np.concatenate([p.points.points for p in planes])

    hypotheses = []
    for idx, p in enumerate(planes):
        n = p.params.n
        if line_angle_deg(n, prior) >= GRAVITY_PRIOR_CONE_DEG:
            continue
        d = p.params.offset_d
        if n @ prior < 0:
            n, d = -n, -d
        above = float(np.mean(all_pts @ n - d > -FLOOR_ABOVE_SLACK_M))
        hypotheses.append((above >= FLOOR_ABOVE_FRACTION, len(p.points), -idx, n, d))
    if not hypotheses:
        raise GravityIndeterminateError(
            f"gravity indeterminate: no plane within {GRAVITY_PRIOR_CONE_DEG:g} deg of the prior up")
    _, _, _, n, d = max(hypotheses, key=lambda h: h[:3])
    return GravityFrame(tuple(float(v) for v in n / np.linalg.norm(n)), float(d))


FLAT_AXIS_M = 1e-4


def plane_bbox(plane: GlobalPlane, frame: GravityFrame) -> Box3D:
    """Box of the inliers projected onto the plane, in the gravity frame.

    Axes thinner than FLAT_AXIS_M (rounding residue of the projection) are
    collapsed so an axis-aligned plane has exactly zero volume and IoU 0.
    """
    flat = frame.to_frame(project_to_plane(plane.points.points, plane.params))
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    thin = hi - lo < FLAT_AXIS_M
    mid = (lo + hi) / 2.0
    lo[thin] = mid[thin]
    hi[thin] = mid[thin]
    return Box3D(tuple(float(v) for v in lo), tuple(float(v) for v in hi))


def _plane_height(params: PlaneParams, frame: GravityFrame) -> float:
    # height of the plane where it crosses the up axis
    c = float(params.n @ np.asarray(frame.up))
    return params.offset_d / c


def classify_plane(plane: GlobalPlane, frame: GravityFrame, cfg: LabelConfig,
                   lowest_height: float | None = None) -> StructuralLabel:
    angle = line_angle_deg(plane.params.n, frame.up)
    if angle < cfg.ceiling_cone_deg:
        h = _plane_height(plane.params, frame)
        floor_ref = frame.floor_height if lowest_height is None else min(lowest_height, frame.floor_height)
        if h <= floor_ref + FLOOR_BAND_M:
            return StructuralLabel.FLOOR
        if h - frame.floor_height > 0:
            return StructuralLabel.CEILING
        return StructuralLabel.NON_STRUCTURAL
    if abs(angle - 90.0) < cfg.wall_ortho_tol_deg:
        if (plane.area_m2 >= cfg.min_wall_area_m2
                and plane.boundary_length_m >= cfg.min_wall_boundary_m
                and len(plane.supporting_views) >= cfg.min_wall_views):
            return StructuralLabel.WALL
    return StructuralLabel.NON_STRUCTURAL


def label_planes(planes: list[GlobalPlane], frame: GravityFrame,
                 cfg: LabelConfig | None = None) -> list[LabeledPlane]:
    cfg = cfg or LabelConfig()
    heights = [_plane_height(p.params, frame) for p in planes
               if line_angle_deg(p.params.n, frame.up) < cfg.ceiling_cone_deg]
    lowest = min(heights) if heights else None
    return [LabeledPlane(p, classify_plane(p, frame, cfg, lowest), plane_bbox(p, frame))
            for p in planes]

