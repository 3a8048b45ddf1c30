"""Scene manifest loading and mask lifting.

A scene directory holds ``scene.json`` plus headerless little-endian
row-major grids: point maps (H*W*3 float32), confidence maps (H*W float32)
and masks (H*W uint8, 0/1). Pixel ``(row, col)`` has flat index
``row * width + col``; every cloud produced here keeps its pixels in that
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1
DEFAULT_TAU_CONF = 3.0

# "instance" masks carry persistent object IDs; "segment" masks are the
# class-agnostic regions used for plane detection.
MASK_KINDS = ("instance", "segment")


class SceneFormatError(ValueError):
    """Invalid or inconsistent scene input, attributed to a view and field."""

    def __init__(self, message: str, view_id: int | None = None, field_name: str | None = None):
        where = []
        if view_id is not None:
            where.append(f"view {view_id}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.view_id = view_id
        self.field_name = field_name


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    source_view: int | None = None
    # flat pixel indices of the points, when they come from a view grid
    pixels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        if self.pixels is not None:
            px = np.asarray(self.pixels, dtype=np.int64).reshape(-1)
            if len(px) != len(pts):
                raise ValueError("pixel index array must match the number of points")
            object.__setattr__(self, "pixels", _frozen(px))

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        same_px = (self.pixels is None and other.pixels is None) or (
            self.pixels is not None and other.pixels is not None
            and np.array_equal(self.pixels, other.pixels))
        return (self.source_view == other.source_view and same_px
                and np.array_equal(self.points, other.points))

    @classmethod
    def empty(cls, source_view: int | None = None) -> "PointCloud":
        return cls(np.zeros((0, 3)), source_view, np.zeros(0, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class InstanceMask2D:
    mask: np.ndarray  # (H, W) bool
    instance_id: int
    confidence: float = 1.0
    category_hint: str | None = None
    kind: str = "instance"

    def __post_init__(self):
        m = np.asarray(self.mask).astype(bool)
        if m.ndim != 2:
            raise ValueError("mask must be a 2D grid")
        if not m.any():
            raise ValueError(f"mask for instance {self.instance_id} has no true pixel")
        if self.instance_id < 0:
            raise ValueError("instance_id must be >= 0")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("mask confidence must lie in [0, 1]")
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "mask", _frozen(m))

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstanceMask2D):
            return NotImplemented
        return (self.instance_id == other.instance_id and self.confidence == other.confidence
                and self.category_hint == other.category_hint and self.kind == other.kind
                and np.array_equal(self.mask, other.mask))


@dataclass(frozen=True, eq=False)
class ViewBundle:
    view_id: int
    width: int
    height: int
    point_map: np.ndarray  # (H, W, 3) float
    confidence_map: np.ndarray  # (H, W) float
    masks: tuple[InstanceMask2D, ...] = field(default_factory=tuple)
    image_path: str | None = None

    def __post_init__(self):
        pm = np.asarray(self.point_map, dtype=np.float32)
        cm = np.asarray(self.confidence_map, dtype=np.float32)
        shape = (self.height, self.width)
        if pm.shape != shape + (3,):
            raise SceneFormatError(f"expected shape {shape + (3,)}, got {pm.shape}",
                                   self.view_id, "point_map")
        if cm.shape != shape:
            raise SceneFormatError(f"expected shape {shape}, got {cm.shape}",
                                   self.view_id, "confidence_map")
        if not np.all(np.isfinite(pm)):
            raise SceneFormatError("non-finite values", self.view_id, "point_map")
        if not np.all(np.isfinite(cm)):
            raise SceneFormatError("non-finite values", self.view_id, "confidence_map")
        if np.any(cm < 0):
            raise SceneFormatError("negative confidence", self.view_id, "confidence_map")
        for m in self.masks:
            if m.mask.shape != shape:
                raise SceneFormatError(
                    f"mask of instance {m.instance_id} has shape {m.mask.shape}, expected {shape}",
                    self.view_id, "masks")
        object.__setattr__(self, "point_map", _frozen(pm))
        object.__setattr__(self, "confidence_map", _frozen(cm))
        object.__setattr__(self, "masks", tuple(self.masks))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ViewBundle):
            return NotImplemented
        return (self.view_id == other.view_id and self.width == other.width
                and self.height == other.height and self.image_path == other.image_path
                and np.array_equal(self.point_map, other.point_map)
                and np.array_equal(self.confidence_map, other.confidence_map)
                and self.masks == other.masks)

    def masks_of_kind(self, kind: str) -> list[InstanceMask2D]:
        return [m for m in self.masks if m.kind == kind]


def filter_by_confidence(view: ViewBundle, tau_conf: float = DEFAULT_TAU_CONF) -> PointCloud:
    """Points whose confidence is at least ``tau_conf``, in row-major pixel order."""
    if tau_conf < 0:
        raise ValueError("tau_conf must be >= 0")
    keep = view.confidence_map.reshape(-1) >= tau_conf
    pixels = np.flatnonzero(keep)
    pts = view.point_map.reshape(-1, 3)[pixels]
    return PointCloud(pts, view.view_id, pixels)


def lift_masked_points(view: ViewBundle, mask: InstanceMask2D,
                       tau_conf: float = DEFAULT_TAU_CONF) -> PointCloud:
    """Confident points under ``mask``, in row-major pixel order."""
    if mask.mask.shape != (view.height, view.width):
        raise SceneFormatError("mask does not belong to this view", view.view_id, "masks")
    if tau_conf < 0:
        raise ValueError("tau_conf must be >= 0")
    keep = mask.mask.reshape(-1) & (view.confidence_map.reshape(-1) >= tau_conf)
    pixels = np.flatnonzero(keep)
    pts = view.point_map.reshape(-1, 3)[pixels]
    return PointCloud(pts, view.view_id, pixels)


# --- manifest I/O ------------------------------------------------------------


def _read_grid(path: Path, dtype, count: int, view_id: int, field_name: str) -> np.ndarray:
    if not path.is_file():
        raise SceneFormatError(f"missing file {path}", view_id, field_name)
    data = np.fromfile(path, dtype=np.dtype(dtype).newbyteorder("<"))
    if data.size != count:
        raise SceneFormatError(
            f"dimension mismatch: {path.name} holds {data.size} values, expected {count}",
            view_id, field_name)
    return data


def _field(entry: dict, name: str, view_id: int | None):
    if not isinstance(entry, dict) or name not in entry:
        raise SceneFormatError(f"missing field '{name}'", view_id, name)
    return entry[name]


def load_scene(manifest_path) -> list[ViewBundle]:
    """Load and validate every view listed in ``scene.json``; result is sorted by view_id."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "scene.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"scene manifest not found: {manifest_path}")
    root = manifest_path.parent
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"manifest is not valid JSON: {exc}") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise SceneFormatError(f"unsupported manifest version {doc.get('version')!r}")

    views = []
    seen = set()
    for entry in doc.get("views", []):
        vid = int(_field(entry, "view_id", None))
        if vid in seen:
            raise SceneFormatError("duplicate view_id", vid, "view_id")
        seen.add(vid)
        w, h = int(_field(entry, "width", vid)), int(_field(entry, "height", vid))
        if w <= 0 or h <= 0:
            raise SceneFormatError("width and height must be positive", vid, "width")
        pm = _read_grid(root / _field(entry, "point_map", vid), np.float32, w * h * 3, vid, "point_map")
        cm = _read_grid(root / _field(entry, "confidence_map", vid), np.float32, w * h, vid, "confidence_map")
        masks = []
        for m in entry.get("masks", []):
            raw = _read_grid(root / _field(m, "mask", vid), np.uint8, w * h, vid, "masks")
            if np.any(raw > 1):
                raise SceneFormatError(f"mask {m['mask']} is not 0/1", vid, "masks")
            try:
                masks.append(InstanceMask2D(
                    mask=raw.reshape(h, w).astype(bool),
                    instance_id=int(_field(m, "instance_id", vid)),
                    confidence=float(m.get("confidence", 1.0)),
                    category_hint=m.get("category_hint"),
                    kind=m.get("kind", "instance"),
                ))
            except ValueError as exc:
                raise SceneFormatError(str(exc), vid, "masks") from exc
        views.append(ViewBundle(
            view_id=vid, width=w, height=h,
            point_map=pm.reshape(h, w, 3), confidence_map=cm.reshape(h, w),
            masks=tuple(masks), image_path=entry.get("image_path"),
        ))
    views.sort(key=lambda v: v.view_id)
    return views


def save_scene(views: list[ViewBundle], out_dir, extra: dict | None = None) -> Path:
    """Write views in the manifest format; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in sorted(views, key=lambda v: v.view_id):
        stem = f"view_{v.view_id:03d}"
        v.point_map.astype("<f4").tofile(out_dir / f"{stem}_points.f32")
        v.confidence_map.astype("<f4").tofile(out_dir / f"{stem}_conf.f32")
        mask_entries = []
        for j, m in enumerate(v.masks):
            name = f"{stem}_mask_{j:03d}.u8"
            m.mask.astype(np.uint8).tofile(out_dir / name)
            me = {"instance_id": m.instance_id, "mask": name, "confidence": m.confidence,
                  "kind": m.kind}
            if m.category_hint is not None:
                me["category_hint"] = m.category_hint
            mask_entries.append(me)
        entry = {"view_id": v.view_id, "width": v.width, "height": v.height,
                 "point_map": f"{stem}_points.f32", "confidence_map": f"{stem}_conf.f32",
                 "masks": mask_entries}
        if v.image_path is not None:
            entry["image_path"] = v.image_path
        entries.append(entry)
    doc = {"version": MANIFEST_VERSION, "views": entries}
    if extra:
        doc.update(extra)
    path = out_dir / "scene.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path

