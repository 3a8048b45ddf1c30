"""Synthetic box-room scenes with exact ground truth.

Views are pinhole ray casts from cameras inside an axis-aligned room
furnished with axis-aligned box objects. Each pixel records the first
surface hit (plus Gaussian noise), a confidence value, and ground-truth
surface ids. Structural surfaces are emitted as class-agnostic "segment"
masks split into two fragments each, objects as "instance" masks with
persistent ids and a few stray pixels.

The room frame has its origin at the first camera, z up. ``rotation_deg``
tilts the whole scene about the x axis to exercise gravity estimation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PlaneParams, rotation_about
from .ingest import InstanceMask2D, ViewBundle, save_scene

SURFACE_NAMES = ("floor", "ceiling", "wall_x_min", "wall_x_max", "wall_y_min", "wall_y_max")
SEGMENT_ID_BASE = 10000
PRESETS = ("room", "office", "tilted-room", "two-rooms")

CAPTIONS = {
    "table": ["a wooden table", "a rectangular wooden table", "a brown table with a flat top", "a table"],
    "cup": ["a white ceramic cup", "a small white cup", "a cup", "a white coffee cup"],
    "chair": ["a grey chair", "a padded grey chair", "a chair", "a small upholstered chair"],
    "bed": ["a bed", "a bed with white sheets", "a neatly made double bed", "a large bed"],
    "cabinet": ["a cabinet", "a white storage cabinet", "a low cabinet with doors", "a white cabinet"],
    "desk": ["an office desk", "a grey desk", "a long work desk", "a desk"],
    "monitor": ["a computer monitor", "a black monitor", "a flat screen monitor", "a monitor"],
    "keyboard": ["a keyboard", "a black computer keyboard", "a wireless keyboard", "a slim keyboard"],
    "mug": ["a mug", "a red mug", "a coffee mug", "a blue ceramic mug"],
    "book": ["a book", "a hardcover book", "a thick red book", "a closed book"],
    "plant": ["a potted plant", "a green plant in a pot", "a small plant", "a leafy potted plant"],
    "shelf": ["a bookshelf", "a tall wooden bookshelf", "a shelf", "a brown shelf unit"],
    "box": ["a cardboard box", "a brown box", "a storage box", "a box"],
    "printer": ["a printer", "a white laser printer", "an office printer", "a grey printer"],
    "whiteboard": ["a whiteboard", "a white whiteboard on the wall", "a large whiteboard", "a whiteboard"],
    "bin": ["a trash bin", "a black waste bin", "a small bin", "a trash can"],
    "rack": ["a coat rack", "a standing coat rack", "a wooden coat rack", "a rack"],
}


class SceneSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    name: str
    tag: str
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    support: str | None = None  # name of the object this one rests on


@dataclass(frozen=True)
class RoomBox:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float]
    yaw_deg: float
    pitch_deg: float
    room: int = 0


@dataclass(frozen=True)
class SceneSpec:
    rooms: tuple[RoomBox, ...]
    objects: tuple[SceneObject, ...]
    cameras: tuple[Camera, ...]
    width: int = 256
    height: int = 192
    hfov_deg: float = 90.0
    sigma: float = 0.005
    dropout: float = 0.03
    stray_fraction: float = 0.02
    rotation_deg: float = 0.0
    rng_seed: int = 0
    min_segment_pixels: int = 60
    min_object_pixels: int = 12
    name: str = "custom"

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    def __post_init__(self):
        for r in self.rooms:
            if any(b <= a for a, b in zip(r.lo, r.hi)):
                raise SceneSpecError("room dimensions must be positive")
        if self.sigma < 0:
            raise SceneSpecError("sigma must be >= 0")
        if self.width <= 0 or self.height <= 0:
            raise SceneSpecError("image size must be positive")


@dataclass
class GroundTruth:
    planes: list[tuple[PlaneParams, str]]
    objects: list[dict]
    relations: list[tuple[str, str, str]]
    rotation: np.ndarray
    pixel_labels: dict[int, np.ndarray] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "planes": [{"normal": list(p.normal), "offset": p.offset_d, "label": lab}
                       for p, lab in self.planes],
            "objects": self.objects,
            "relations": [list(r) for r in self.relations],
            "rotation": self.rotation.tolist(),
            "pixel_labels": {str(v): f"view_{v:03d}_gt.i32" for v in sorted(self.pixel_labels)},
        }


@dataclass
class SyntheticScene:
    spec: SceneSpec
    views: list[ViewBundle]
    truth: GroundTruth
    captions: list[dict]


# --- validation -----------------------------------------------------------------


def _overlap_interior(a_lo, a_hi, b_lo, b_hi) -> bool:
    return all(min(a_hi[i], b_hi[i]) - max(a_lo[i], b_lo[i]) > 1e-9 for i in range(3))


def validate_spec(spec: SceneSpec) -> None:
    """Reject object placements that cannot be rendered consistently."""
    names = {}
    for obj in spec.objects:
        if obj.name in names:
            raise SceneSpecError(f"object {obj.name}: duplicate name")
        names[obj.name] = obj
        if obj.tag not in CAPTIONS:
            raise SceneSpecError(f"object {obj.name}: unknown tag {obj.tag!r}")
        if any(b <= a for a, b in zip(obj.lo, obj.hi)):
            raise SceneSpecError(f"object {obj.name}: box has non-positive size")
        if not any(all(r.lo[i] < obj.lo[i] and obj.hi[i] < r.hi[i] for i in range(3)) or
                   (all(r.lo[i] < obj.lo[i] and obj.hi[i] < r.hi[i] for i in (0, 1))
                    and r.lo[2] <= obj.lo[2] and obj.hi[2] < r.hi[2]) for r in spec.rooms):
            raise SceneSpecError(f"object {obj.name}: outside every room")
        for cam in spec.cameras:
            if all(obj.lo[i] - 0.05 <= cam.position[i] <= obj.hi[i] + 0.05 for i in range(3)):
                raise SceneSpecError(f"object {obj.name}: encloses a camera")
    for i, a in enumerate(spec.objects):
        for b in spec.objects[i + 1:]:
            if _overlap_interior(a.lo, a.hi, b.lo, b.hi):
                raise SceneSpecError(f"object {b.name}: intersects {a.name}")
    for obj in spec.objects:
        if obj.support is None:
            continue
        base = names.get(obj.support)
        if base is None:
            raise SceneSpecError(f"object {obj.name}: unknown support {obj.support!r}")
        if abs(obj.lo[2] - base.hi[2]) > 1e-9 or not all(
                base.lo[i] <= obj.lo[i] and obj.hi[i] <= base.hi[i] for i in (0, 1)):
            raise SceneSpecError(f"object {obj.name}: does not rest on {base.name}")


# --- rendering ------------------------------------------------------------------


def camera_rays(cam: Camera, width: int, height: int, hfov_deg: float) -> np.ndarray:
    yaw, pitch = math.radians(cam.yaw_deg), math.radians(cam.pitch_deg)
    fwd = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    up = np.cross(right, fwd)
    tx = math.tan(math.radians(hfov_deg) / 2.0)
    ty = tx * height / width
    xs = ((np.arange(width) + 0.5) / width * 2.0 - 1.0) * tx
    ys = (1.0 - (np.arange(height) + 0.5) / height * 2.0) * ty
    X, Y = np.meshgrid(xs, ys)
    d = fwd[None, None, :] + X[..., None] * right + Y[..., None] * up
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _room_hits(origin, dirs, room: RoomBox):
    lo, hi = np.asarray(room.lo), np.asarray(room.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (hi - origin) / dirs
        t_lo = (lo - origin) / dirs
    t_axis = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
    axis = np.argmin(t_axis, axis=-1)
    t = np.take_along_axis(t_axis, axis[..., None], axis=-1)[..., 0]
    positive = np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0] > 0
    # face ids: z-/z+ = floor/ceiling, then x-/x+, y-/y+
    face = np.select([axis == 2, axis == 0, axis == 1],
                     [np.where(positive, 1, 0), np.where(positive, 3, 2), np.where(positive, 5, 4)])
    return t, face


def _box_hits(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (np.asarray(lo) - origin) / dirs
        t2 = (np.asarray(hi) - origin) / dirs
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmin <= tmax) & (tmin > 1e-6)
    return np.where(hit, tmin, np.inf)


def _render(spec: SceneSpec, cam: Camera):
    """Per-pixel hit distance, direction and surface id (room faces 6*room + face, objects after)."""
    origin = np.asarray(cam.position, dtype=np.float64)
    dirs = camera_rays(cam, spec.width, spec.height, spec.hfov_deg)
    t, face = _room_hits(origin, dirs, spec.rooms[cam.room])
    sid = 6 * cam.room + face
    base = 6 * len(spec.rooms)
    for k, obj in enumerate(spec.objects):
        tk = _box_hits(origin, dirs, obj.lo, obj.hi)
        closer = tk < t
        t = np.where(closer, tk, t)
        sid = np.where(closer, base + k, sid)
    return origin + dirs * t[..., None], sid


def _face_plane(room: RoomBox, face: int) -> PlaneParams:
    axis = (2, 2, 0, 0, 1, 1)[face]
    value = (room.lo, room.hi, room.lo, room.hi, room.lo, room.hi)[face][axis]
    n = np.zeros(3)
    n[axis] = 1.0
    return PlaneParams.from_arrays(n, value)


def _face_label(face: int) -> str:
    return ("floor", "ceiling", "wall", "wall", "wall", "wall")[face]


def _support_tag(spec: SceneSpec, name: str) -> str:
    return next(o.tag for o in spec.objects if o.name == name)


def generate(spec: SceneSpec) -> SyntheticScene:
    validate_spec(spec)
    rng = np.random.default_rng(spec.rng_seed)
    R = rotation_about((1.0, 0.0, 0.0), spec.rotation_deg)
    base = 6 * len(spec.rooms)
    H, W = spec.height, spec.width

    views, captions, pixel_labels = [], [], {}
    for vid, cam in enumerate(spec.cameras):
        pts, sid = _render(spec, cam)
        pts = pts + rng.normal(0.0, spec.sigma, size=pts.shape) if spec.sigma > 0 else pts
        conf = rng.uniform(4.0, 10.0, size=(H, W))
        drop = rng.random((H, W)) < spec.dropout
        conf[drop] = rng.uniform(0.2, 2.0, size=int(drop.sum()))
        pts[drop] += rng.normal(0.0, 0.3, size=(int(drop.sum()), 3))
        pts = pts @ R.T
        pixel_labels[vid] = sid.astype(np.int32)

        masks = []
        for s in np.unique(sid[sid < base]):
            region = sid == s
            if region.sum() < spec.min_segment_pixels:
                continue
            cols = np.nonzero(region)[1]
            split = np.median(cols)
            halves = [region & (np.arange(W)[None, :] < split), region & (np.arange(W)[None, :] >= split)]
            if min(h.sum() for h in halves) < spec.min_segment_pixels // 2:
                halves = [region]
            for f, h in enumerate(halves):
                masks.append(InstanceMask2D(h, SEGMENT_ID_BASE + 10 * int(s) + f, 0.9, None, "segment"))
        for s in np.unique(sid[sid >= base]):
            k = int(s) - base
            region = sid == s
            n_px = int(region.sum())
            if n_px < spec.min_object_pixels:
                continue
            m = region.copy()
            n_stray = int(math.ceil(spec.stray_fraction * n_px))
            if n_stray:
                outside = np.flatnonzero(~region.reshape(-1))
                m.reshape(-1)[rng.choice(outside, size=n_stray, replace=False)] = True
            conf_mask = float(np.round(rng.uniform(0.6, 1.0), 4))
            obj = spec.objects[k]
            masks.append(InstanceMask2D(m, k, conf_mask, obj.tag, "instance"))
            options = CAPTIONS[obj.tag]
            text = options[int(rng.integers(len(options)))]
            if obj.support is not None:
                # crops of supported objects show what they stand on
                text += f" on a {_support_tag(spec, obj.support)}"
            captions.append({"instance_id": k, "view_id": vid, "caption": text,
                             "seg_confidence": conf_mask})
        views.append(ViewBundle(vid, W, H, pts.astype(np.float32), conf.astype(np.float32),
                                tuple(masks), image_path=f"synthetic://{spec.name}/{vid}"))

    gt_planes = []
    for r_idx, room in enumerate(spec.rooms):
        for face in range(6):
            p = _face_plane(room, face)
            gt_planes.append((PlaneParams.from_arrays(R @ p.n, p.offset_d), _face_label(face)))
    objects = [{"name": o.name, "tag": o.tag, "instance_id": k, "bbox_room": [*o.lo, *o.hi],
                "support": o.support} for k, o in enumerate(spec.objects)]
    relations = [(o.name, o.support, "on") for o in spec.objects if o.support]
    truth = GroundTruth(gt_planes, objects, relations, R, pixel_labels)
    return SyntheticScene(spec, views, truth, captions)


def write_scene(scene: SyntheticScene, out_dir) -> Path:
    """Write manifest, grids, captions.json and ground truth; returns the manifest path."""
    out_dir = Path(out_dir)
    manifest = save_scene(scene.views, out_dir)
    (out_dir / "captions.json").write_text(json.dumps(scene.captions, indent=1, sort_keys=True) + "\n")
    for vid, labels in scene.truth.pixel_labels.items():
        labels.astype("<i4").tofile(out_dir / f"view_{vid:03d}_gt.i32")
    (out_dir / "ground_truth.json").write_text(
        json.dumps(scene.truth.to_json(), indent=1, sort_keys=True) + "\n")
    return manifest


def load_ground_truth(scene_dir) -> dict:
    path = Path(scene_dir) / "ground_truth.json"
    if not path.is_file():
        raise FileNotFoundError(f"ground truth not found: {path}")
    return json.loads(path.read_text())


# --- presets --------------------------------------------------------------------


def ring_cameras(center=(0.0, 0.0), n_views: int = 8, pitch_deg: float = 20.0,
                 offset: float = 0.2, z: float = 0.0, room: int = 0) -> tuple[Camera, ...]:
    """Cameras near ``center`` looking outwards; pitch alternates down / up."""
    cams = []
    for k in range(n_views):
        yaw = 360.0 * k / n_views
        pitch = -pitch_deg if k % 2 == 0 else pitch_deg
        y = math.radians(yaw)
        pos = (center[0] - offset * math.cos(y), center[1] - offset * math.sin(y), z)
        cams.append(Camera(pos, yaw, pitch, room))
    return tuple(cams)


def _box(name, tag, x, y, z, support=None) -> SceneObject:
    return SceneObject(name, tag, (x[0], y[0], z[0]), (x[1], y[1], z[1]), support)


def room_spec(sigma: float = 0.005, rng_seed: int = 0, rotation_deg: float = 0.0) -> SceneSpec:
    """5 x 4 x 3 m room: table with a cup on it, chair, bed, cabinet; 8 views."""
    f = -1.4
    objects = (
        _box("table", "table", (0.4, 1.6), (-1.5, -0.7), (f, f + 0.75)),
        _box("cup", "cup", (0.9, 1.02), (-1.2, -1.08), (f + 0.75, f + 0.87), support="table"),
        _box("chair", "chair", (-0.5, 0.0), (-1.75, -1.25), (f, f + 0.45)),
        _box("bed", "bed", (-2.3, -0.9), (0.2, 1.8), (f, f + 0.5)),
        _box("cabinet", "cabinet", (1.5, 2.3), (1.2, 1.8), (f, f + 0.8)),
    )
    # the view order puts the downward view facing the table first
    cams = ring_cameras(n_views=8, pitch_deg=20.0)
    name = "tilted-room" if rotation_deg else "room"
    return SceneSpec((RoomBox((-2.5, -2.0, f), (2.5, 2.0, f + 3.0)),), objects, cams,
                     width=256, height=192, sigma=sigma, rng_seed=rng_seed,
                     rotation_deg=rotation_deg, name=name)


def office_spec(sigma: float = 0.005, rng_seed: int = 0) -> SceneSpec:
    """8 x 6 x 3 m office with 38 objects grouped on desks, a table and shelves."""
    f = -1.4
    objs = []
    for i, (sx, sy) in enumerate([(-1, -1), (-1, 1), (1, -1), (1, 1)]):
        cx, cy = 2.6 * sx, 2.1 * sy
        x = (cx - 0.7, cx + 0.7)
        y = (cy - 0.35, cy + 0.35)
        top = f + 0.75
        d = f"desk{i}"
        objs.append(_box(d, "desk", x, y, (f, top)))
        back = cy + 0.15 * sy
        objs.append(_box(f"monitor{i}", "monitor", (cx - 0.25, cx + 0.25),
                         tuple(sorted((back - 0.06, back + 0.06))), (top, top + 0.35), support=d))
        front = cy - 0.15 * sy
        objs.append(_box(f"keyboard{i}", "keyboard", (cx - 0.2, cx + 0.2),
                         tuple(sorted((front - 0.07, front + 0.07))), (top, top + 0.03), support=d))
        objs.append(_box(f"mug{i}", "mug", (cx + 0.4, cx + 0.5),
                         tuple(sorted((front - 0.05, front + 0.05))), (top, top + 0.12), support=d))
        chair_y = cy - 0.75 * sy
        objs.append(_box(f"chair{i}", "chair", (cx - 0.25, cx + 0.25),
                         tuple(sorted((chair_y - 0.25, chair_y + 0.25))), (f, f + 0.45)))
    top = f + 0.75
    objs.append(_box("table", "table", (-0.6, 0.6), (-1.2, -0.6), (f, top)))
    objs.append(_box("cup", "cup", (-0.3, -0.18), (-1.0, -0.88), (top, top + 0.12), support="table"))
    objs.append(_box("book", "book", (0.05, 0.3), (-1.0, -0.82), (top, top + 0.05), support="table"))
    objs.append(_box("plant_table", "plant", (0.35, 0.5), (-0.8, -0.65), (top, top + 0.3), support="table"))
    for i, sx in enumerate((-1, 1)):
        x = tuple(sorted((3.85 * sx, 3.45 * sx)))
        s = f"shelf{i}"
        objs.append(_box(s, "shelf", x, (-0.5, 0.5), (f, f + 1.6)))
        objs.append(_box(f"box{i}", "box", x, (-0.45, -0.1), (f + 1.6, f + 1.85), support=s))
        objs.append(_box(f"plant_shelf{i}", "plant", x, (0.1, 0.4), (f + 1.6, f + 1.9), support=s))
    objs.append(_box("cabinet", "cabinet", (-0.5, 0.5), (-2.85, -2.35), (f, f + 0.8)))
    objs.append(_box("printer", "printer", (-0.25, 0.25), (-2.8, -2.45), (f + 0.8, f + 1.05), support="cabinet"))
    objs.append(_box("whiteboard", "whiteboard", (-3.9, -3.88), (0.9, 2.4), (f + 1.0, f + 2.0)))
    objs.append(_box("bin0", "bin", (1.4, 1.7), (2.5, 2.8), (f, f + 0.4)))
    objs.append(_box("bin1", "bin", (-1.7, -1.4), (-2.8, -2.5), (f, f + 0.4)))
    objs.append(_box("plant0", "plant", (3.3, 3.7), (-2.8, -2.4), (f, f + 0.9)))
    objs.append(_box("plant1", "plant", (-3.7, -3.3), (-2.8, -2.4), (f, f + 0.9)))
    objs.append(_box("rack", "rack", (1.6, 1.9), (-2.8, -2.5), (f, f + 1.7)))
    cams = ring_cameras(n_views=8, pitch_deg=20.0)
    return SceneSpec((RoomBox((-4.0, -3.0, f), (4.0, 3.0, f + 3.0)),), tuple(objs), cams,
                     width=320, height=240, sigma=sigma, rng_seed=rng_seed, name="office")


def two_rooms_spec(sigma: float = 0.005, rng_seed: int = 0) -> SceneSpec:
    """Two 4 x 4 m rooms seen through level, vertically narrow views: only walls are visible."""
    f = -1.4
    rooms = (RoomBox((-2.0, -2.0, f), (2.0, 2.0, f + 3.0)), RoomBox((2.2, -2.0, f), (6.2, 2.0, f + 3.0)))
    cams = []
    for r, cx in enumerate((0.0, 4.2)):
        for k in range(4):
            cams.append(Camera((cx, 0.0, 0.0), 90.0 * k, 0.0, r))
    objects = (
        _box("table", "table", (-1.0, 0.0), (-1.6, -1.0), (f, f + 0.75)),
        _box("chair", "chair", (4.8, 5.3), (1.0, 1.5), (f, f + 0.45)),
    )
    return SceneSpec(rooms, objects, tuple(cams), width=256, height=48, sigma=sigma,
                     rng_seed=rng_seed, name="two-rooms")


def preset_spec(name: str, sigma: float = 0.005, rng_seed: int = 0, rot_deg: float = 15.0) -> SceneSpec:
    if name == "room":
        return room_spec(sigma, rng_seed)
    if name == "tilted-room":
        return room_spec(sigma, rng_seed, rotation_deg=rot_deg)
    if name == "office":
        return office_spec(sigma, rng_seed)
    if name == "two-rooms":
        return two_rooms_spec(sigma, rng_seed)
    raise SceneSpecError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
