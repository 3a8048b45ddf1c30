"""Small geometric primitives shared by the plane, fusion and graph stages."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

# rad per metre in the plane-parameter-space metric
PPS_LAMBDA = 1.0


@dataclass(frozen=True)
class PlaneParams:
    """Plane {p : <normal, p> = offset_d} in canonical sign."""

    normal: tuple[float, float, float]
    offset_d: float

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.normal, dtype=np.float64)

    @classmethod
    def from_arrays(cls, normal, offset) -> "PlaneParams":
        n, d = canonicalize(normal, offset)
        return cls(tuple(float(v) for v in n), float(d))

    def residuals(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points @ self.n - self.offset_d)


def canonicalize(normal, offset) -> tuple[np.ndarray, float]:
    """Unit-normalise and fix the sign so offset >= 0 (first nonzero component > 0 at offset 0)."""
    n = np.asarray(normal, dtype=np.float64)
    norm = float(np.linalg.norm(n))
    if norm == 0.0 or not math.isfinite(norm):
        raise ValueError("plane normal must be a finite nonzero vector")
    n = n / norm
    d = float(offset) / norm
    flip = d < 0.0
    if d == 0.0:
        nz = n[np.nonzero(n)[0][0]]
        flip = nz < 0.0
    if flip:
        n, d = -n, -d
    return n + 0.0, d + 0.0  # +0.0 drops negative zeros


def pps_distance(a: PlaneParams, b: PlaneParams, lam: float = PPS_LAMBDA) -> float:
    """Angle between normals plus lam * offset gap.

    Evaluated for both sign pairings of b and the smaller one kept, so the
    value is unchanged by (n, d) -> (-n, -d) on either side and stays
    continuous for planes passing close to the origin.
    """
    c = float(np.clip(np.dot(a.n, b.n), -1.0, 1.0))
    same = math.acos(c) + lam * abs(a.offset_d - b.offset_d)
    flipped = math.acos(-c) + lam * abs(a.offset_d + b.offset_d)
    return min(same, flipped)


def pps_distance_matrix(params: list[PlaneParams], lam: float = PPS_LAMBDA) -> np.ndarray:
    if not params:
        return np.zeros((0, 0))
    N = np.array([p.normal for p in params])
    D = np.array([p.offset_d for p in params])
    c = np.clip(N @ N.T, -1.0, 1.0)
    same = np.arccos(c) + lam * np.abs(D[:, None] - D[None, :])
    flipped = np.arccos(-c) + lam * np.abs(D[:, None] + D[None, :])
    out = np.minimum(same, flipped)
    np.fill_diagonal(out, 0.0)
    return out


def fit_plane_lstsq(points: np.ndarray) -> PlaneParams:
    """Total least squares plane through the points (smallest covariance eigenvector)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise ValueError("need at least 3 points to fit a plane")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    # explicit sums keep the reduction order independent of BLAS threading
    cov = np.einsum("ni,nj->ij", q, q)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, 0]
    return PlaneParams.from_arrays(n, float(n @ centroid))


def is_degenerate(points: np.ndarray, rel_tol: float = 1e-9) -> bool:
    """True when the points are (numerically) all coincident or collinear."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return True
    q = pts - pts.mean(axis=0)
    s = np.linalg.svd(q, compute_uv=False)
    if s[0] == 0.0:
        return True
    return bool(s[1] <= rel_tol * s[0])


def plane_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane orthogonal to ``normal``."""
    n = np.asarray(normal, dtype=np.float64)
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def project_to_plane(points: np.ndarray, params: PlaneParams) -> np.ndarray:
    n = params.n
    return points - np.outer(points @ n - params.offset_d, n)


def hull_area_perimeter(points: np.ndarray, params: PlaneParams) -> tuple[float, float]:
    """Area and perimeter of the 2D convex hull of points projected onto the plane."""
    if len(points) < 3:
        return 0.0, 0.0
    u, v = plane_basis(params.n)
    uv = np.column_stack([points @ u, points @ v])
    try:
        hull = ConvexHull(uv)
    except QhullError:
        return 0.0, 0.0
    # for 2D hulls scipy reports area as perimeter and volume as area
    return float(hull.volume), float(hull.area)


def estimate_normals(points: np.ndarray, k: int = 16, viewpoint=None):
    """PCA normals over the k nearest neighbours.

    Returns ``(normals, neighbours)`` where ``neighbours`` is the (N, k) index
    array of the k-NN graph (self included). Normals point towards
    ``viewpoint``; the cloud centroid is used when it is not given.
    """
    pts = np.asarray(points, dtype=np.float64)
    n_pts = len(pts)
    if n_pts == 0:
        return np.zeros((0, 3)), np.zeros((0, 0), dtype=np.int64)
    kk = min(k, n_pts)
    _, nbr = cKDTree(pts).query(pts, k=kk)
    nbr = np.asarray(nbr, dtype=np.int64).reshape(n_pts, kk)
    local = pts[nbr]
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    target = pts.mean(axis=0) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    flip = np.einsum("ni,ni->n", target - pts, normals) < 0.0
    normals[flip] *= -1.0
    return normals, nbr


# --- axis-aligned boxes ------------------------------------------------------


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned box given by its min and max corners (metres)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"invalid box: min {self.lo} exceeds max {self.hi}")

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Box3D":
        pts = np.asarray(points, dtype=np.float64)
        if len(pts) == 0:
            raise ValueError("cannot bound an empty point set")
        return cls(tuple(float(v) for v in pts.min(axis=0)),
                   tuple(float(v) for v in pts.max(axis=0)))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        e = self.extent
        return float(e[0] * e[1] * e[2])

    def union(self, other: "Box3D") -> "Box3D":
        return Box3D(tuple(min(a, b) for a, b in zip(self.lo, other.lo)),
                     tuple(max(a, b) for a, b in zip(self.hi, other.hi)))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> bool:
        pts = np.asarray(points, dtype=np.float64)
        return bool(np.all(pts >= np.asarray(self.lo) - tol) and np.all(pts <= np.asarray(self.hi) + tol))

    def inflate(self, margin: float) -> "Box3D":
        return Box3D(tuple(v - margin for v in self.lo), tuple(v + margin for v in self.hi))

    def as_list(self) -> list[float]:
        return [*self.lo, *self.hi]

    @classmethod
    def from_list(cls, values) -> "Box3D":
        v = [float(x) for x in values]
        return cls(tuple(v[:3]), tuple(v[3:]))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU of two axis-aligned boxes; 0 when the union has no volume."""
    inter = 1.0
    for i in range(3):
        overlap = min(a.hi[i], b.hi[i]) - max(a.lo[i], b.lo[i])
        if overlap <= 0.0:
            return 0.0
        inter *= overlap
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def iou_3d_batch(lo_a: np.ndarray, hi_a: np.ndarray, lo_b: np.ndarray, hi_b: np.ndarray) -> np.ndarray:
    """Vectorised ``iou_3d`` over rows of corner arrays."""
    overlap = np.clip(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0.0, None)
    inter = np.prod(overlap, axis=-1)
    union = np.prod(hi_a - lo_a, axis=-1) + np.prod(hi_b - lo_b, axis=-1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
    return np.minimum(out, 1.0)


def rotation_aligning(src, dst) -> np.ndarray:
    """Smallest rotation matrix R with R @ src == dst (unit vectors)."""
    a = np.asarray(src, dtype=np.float64)
    b = np.asarray(dst, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # 180 degrees about any axis orthogonal to a
        u, _ = plane_basis(a)
        return 2.0 * np.outer(u, u) - np.eye(3)
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def rotation_about(axis, degrees: float) -> np.ndarray:
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    t = math.radians(degrees)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(t) * K + (1 - math.cos(t)) * (K @ K)


def line_angle_deg(a, b) -> float:
    """Angle in [0, 90] degrees between two undirected directions."""
    c = abs(float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.degrees(math.acos(min(1.0, c)))
