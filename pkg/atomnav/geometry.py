"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from .errors import DegenerateCloud, NoDepth, ParseError

HALF_PI = np.pi / 2


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        raise ValueError("Rotation quaternion must not be zero")
    # unit input is kept bit-exact so serialized poses round-trip
    if abs(norm - 1.0) > 1e-12:
        q = q / norm
    # q and -q are the same rotation, keep the one with a positive leading component
    lead = np.flatnonzero(np.abs(q) > 1e-15)[0]
    if q[lead] < 0:
        q = -q
    return q


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform from a local frame into the Z-up world frame.

    Parameters
    ----------
    translation : np.ndarray
        Position of the local origin in meters.
    rotation : np.ndarray
        Unit quaternion (w, x, y, z). Normalized on construction.
    """
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError(f"Pose contains non-finite values: t={t}, q={q}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", _canonical_quat(q))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose3):
            return NotImplemented
        return (np.array_equal(self.translation, other.translation)
                and np.array_equal(self.rotation, other.rotation))

    __hash__ = None

    @classmethod
    def identity(cls) -> "Pose3":
        return cls()

    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w]).as_matrix()

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.matrix().T + self.translation

    def inverse(self) -> "Pose3":
        w, x, y, z = self.rotation
        conj = np.array([w, -x, -y, -z])
        return Pose3(-self.matrix().T @ self.translation, conj)

    def forward(self) -> np.ndarray:
        """Camera viewing direction (+Z of the local frame) in world coordinates."""
        return self.matrix()[:, 2]

    def heading(self) -> float:
        """Yaw of the viewing direction projected onto the ground plane."""
        fwd = self.forward()
        return float(np.arctan2(fwd[1], fwd[0]))

    def to_dict(self) -> Dict:
        return {"t": [float(v) for v in self.translation], "q": [float(v) for v in self.rotation]}

    @classmethod
    def from_dict(cls, data: Dict) -> "Pose3":
        return cls(np.array(data["t"], dtype=np.float64), np.array(data["q"], dtype=np.float64))

    def allclose(self, other: "Pose3", atol: float = 1e-9) -> bool:
        return (np.allclose(self.translation, other.translation, atol=atol)
                and np.allclose(self.matrix(), other.matrix(), atol=atol))


def compose(a: Pose3, b: Pose3) -> Pose3:
    """Pose that maps p to a(b(p))."""
    return Pose3(a.translation + a.matrix() @ b.translation, quat_multiply(a.rotation, b.rotation))


def camera_pose(x: float, y: float, yaw: float, height: float) -> Pose3:
    """Level camera at (x, y, height) looking along `yaw` (radians from world +X).

    Camera axes follow the pinhole convention: +Z forward, +X right, +Y down.
    """
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    qx, qy, qz, qw = Rotation.from_matrix(np.stack([right, down, fwd], axis=1)).as_quat()
    return Pose3(np.array([x, y, height]), np.array([qw, qx, qy, qz]))


@dataclass(frozen=True)
class Rigid2:
    """Planar rigid transform p -> R(theta) p + t."""
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation().T + np.array([self.tx, self.ty])

    def apply_vector(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation().T

    def inverse(self) -> "Rigid2":
        t = -self.rotation().T @ np.array([self.tx, self.ty])
        return Rigid2(-self.theta, float(t[0]), float(t[1]))

    def compose(self, other: "Rigid2") -> "Rigid2":
        t = self.apply(np.array([other.tx, other.ty]))
        return Rigid2(self.theta + other.theta, float(t[0]), float(t[1]))

    def as_pose3(self) -> Pose3:
        half = self.theta / 2
        return Pose3(np.array([self.tx, self.ty, 0.0]), np.array([np.cos(half), 0.0, 0.0, np.sin(half)]))

    def to_dict(self) -> Dict:
        return {"theta": float(self.theta), "t": [float(self.tx), float(self.ty)]}

    @classmethod
    def from_dict(cls, data: Dict) -> "Rigid2":
        return cls(float(data["theta"]), float(data["t"][0]), float(data["t"][1]))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"Principal point ({self.cx}, {self.cy}) outside "
                             f"{self.width}x{self.height} image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with the principal point at the image center."""
        f = (width / 2) / np.tan(np.deg2rad(hfov_deg) / 2)
        return cls(float(f), float(f), (width - 1) / 2, (height - 1) / 2, int(width), int(height))

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height

    def to_dict(self) -> Dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height)
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CameraIntrinsics":
        return cls(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
                   int(data["width"]), int(data["height"]))


def unproject(pixel: Tuple[float, float], depth_m: Optional[float], K: CameraIntrinsics,
              pose: Pose3) -> np.ndarray:
    """World point seen at `pixel` with Z-depth `depth_m`.

    Raises
    ------
    NoDepth
        If the depth is missing, non-finite or not positive.
    ValueError
        If the pixel lies outside the image.
    """
    if depth_m is None or not np.isfinite(depth_m) or depth_m <= 0:
        raise NoDepth(f"No valid depth at pixel {tuple(pixel)}: {depth_m}")
    u, v = pixel
    if not K.contains(u, v):
        raise ValueError(f"Pixel ({u}, {v}) outside {K.width}x{K.height} image")
    p_cam = depth_m * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    return pose.apply(p_cam)


def project(point: np.ndarray, K: CameraIntrinsics, pose: Pose3) -> Tuple[float, float]:
    """Pixel coordinates of a world point in front of the camera."""
    uv, z = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), K, pose)
    if z[0] <= 0:
        raise ValueError(f"Point {point} is behind the camera")
    return float(uv[0, 0]), float(uv[0, 1])


def project_points(points: np.ndarray, K: CameraIntrinsics,
                   pose: Pose3) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized projection, returns (uv [N, 2], z-depth [N])."""
    p_cam = pose.inverse().apply(points)
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * p_cam[:, 0] / z + K.cx
        v = K.fy * p_cam[:, 1] / z + K.cy
    return np.stack([u, v], axis=1), z


def unproject_depth(depth: np.ndarray, K: CameraIntrinsics, pose: Pose3,
                    mask: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray]:
    """Unproject every pixel with valid depth (optionally restricted to `mask`).

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        World points [N, 3] and their (u, v) pixel coordinates [N, 2].
    """
    valid = np.isfinite(depth) & (depth > 0)
    if mask is not None:
        valid &= mask.astype(bool)
    v, u = np.nonzero(valid)
    d = depth[v, u].astype(np.float64)
    p_cam = np.stack([(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, d], axis=1)
    return pose.apply(p_cam), np.stack([u, v], axis=1)


@dataclass(frozen=True, eq=False)
class PointCloud3:
    """Multiset of world points in meters."""
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("Point clouds may only contain finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud3):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    __hash__ = None

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def transformed(self, pose: Pose3) -> "PointCloud3":
        return PointCloud3(pose.apply(self.points))

    def concat(self, other: "PointCloud3") -> "PointCloud3":
        return PointCloud3(np.concatenate([self.points, other.points], axis=0))

    def to_blob(self) -> bytes:
        """Little-endian uint64 count followed by N x 3 float32 coordinates."""
        header = np.array([len(self)], dtype="<u8").tobytes()
        return header + self.points.astype("<f4").tobytes()

    @classmethod
    def from_blob(cls, data: bytes) -> "PointCloud3":
        if len(data) < 8:
            raise ParseError("Point cloud blob is shorter than its header", offset=len(data))
        n = int(np.frombuffer(data[:8], dtype="<u8")[0])
        expected = 8 + 12 * n
        if len(data) != expected:
            raise ParseError(f"Point cloud blob announces {n} points but has {len(data)} bytes",
                             offset=min(len(data), expected))
        pts = np.frombuffer(data[8:], dtype="<f4").reshape(n, 3)
        if not np.all(np.isfinite(pts)):
            raise ParseError("Point cloud blob contains non-finite coordinates", offset=8)
        return cls(pts.astype(np.float64))


def voxel_downsample(points: np.ndarray, voxel: float,
                     anchor: Optional[Sequence[float]] = None) -> np.ndarray:
    """Replace the points of every occupied voxel by their centroid.

    Parameters
    ----------
    points : np.ndarray
        World points [N, 3].
    voxel : float
        Edge length of the voxels in meters.
    anchor : Sequence[float], optional
        Planar pose (x, y, yaw) the voxel grid is attached to. Voxels are centered on grid
        points of this frame, so downsampling commutes with planar rigid motions of the
        points and the anchor alike. World axes if None.

    Returns
    -------
    np.ndarray
        Centroids [M, 3], ordered by voxel index in the anchor frame.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points
    local = points.copy()
    if anchor is not None:
        x, y, yaw = anchor
        c, s = np.cos(yaw), np.sin(yaw)
        dx, dy = points[:, 0] - x, points[:, 1] - y
        local[:, 0] = c * dx + s * dy
        local[:, 1] = -s * dx + c * dy
    keys = np.floor(local / voxel + 0.5).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_voxels = int(inverse.max()) + 1
    counts = np.bincount(inverse, minlength=n_voxels)
    sums = np.stack([np.bincount(inverse, weights=points[:, k], minlength=n_voxels) for k in range(3)],
                    axis=1)
    return sums / counts[:, None]


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    """Z-aligned box rotated by `yaw` about the vertical axis."""
    center: np.ndarray
    half_extents: np.ndarray
    yaw: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        half = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if not np.all(half > 0):
            raise ValueError(f"Box half extents must be positive, got {half}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_extents", half)
        object.__setattr__(self, "yaw", float(self.yaw))

    def __eq__(self, other) -> bool:
        if not isinstance(other, OrientedBox3):
            return NotImplemented
        return (np.array_equal(self.center, other.center)
                and np.array_equal(self.half_extents, other.half_extents) and self.yaw == other.yaw)

    __hash__ = None

    def _to_local(self, points: np.ndarray) -> np.ndarray:
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        d = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center
        return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        return np.all(np.abs(self._to_local(points)) <= self.half_extents + tol, axis=1)

    def volume(self) -> float:
        return float(8 * np.prod(self.half_extents))

    def footprint_area(self) -> float:
        return float(4 * self.half_extents[0] * self.half_extents[1])

    def corners_xy(self) -> np.ndarray:
        """Footprint corners [4, 2], counter-clockwise."""
        hx, hy = self.half_extents[:2]
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return Rigid2(self.yaw, self.center[0], self.center[1]).apply(local)

    def transformed(self, g: Rigid2) -> "OrientedBox3":
        xy = g.apply(self.center[:2])
        return OrientedBox3(np.array([xy[0], xy[1], self.center[2]]), self.half_extents,
                            self.yaw + g.theta)

    def to_dict(self) -> Dict:
        return {
            "center": [float(v) for v in self.center],
            "half_extents": [float(v) for v in self.half_extents],
            "yaw": float(self.yaw)
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "OrientedBox3":
        return cls(np.array(data["center"]), np.array(data["half_extents"]), float(data["yaw"]))


def trim_outliers(points: np.ndarray) -> np.ndarray:
    """Drop points outside the per-axis 1st-99th percentile band widened by 10% of its span."""
    lo = np.percentile(points, 1, axis=0)
    hi = np.percentile(points, 99, axis=0)
    span = hi - lo
    keep = np.all((points >= lo - 0.1 * span) & (points <= hi + 0.1 * span), axis=1)
    if keep.sum() < 4:
        return points
    return points[keep]


def _principal_yaw(xy: np.ndarray) -> float:
    centered = xy - xy.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return float(np.arctan2(vt[0, 1], vt[0, 0]))


def _wrap_quarter(angles: np.ndarray) -> np.ndarray:
    angles = np.mod(angles, HALF_PI)
    angles[angles >= HALF_PI - 1e-12] = 0.0
    return angles


def min_area_rectangle(xy: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Minimum-area enclosing rectangle by rotating calipers over the convex hull.

    Returns
    -------
    Tuple[float, np.ndarray, np.ndarray]
        Yaw in [0, pi/2), rectangle center and half extents along the rotated axes.
        Ties in area go to the smaller yaw.
    """
    try:
        hull_pts = xy[ConvexHull(xy).vertices]
        edges = np.roll(hull_pts, -1, axis=0) - hull_pts
        candidates = _wrap_quarter(np.arctan2(edges[:, 1], edges[:, 0]))
    except QhullError:
        # collinear footprint (e.g. a planar sign seen edge-on from above)
        hull_pts = xy
        candidates = _wrap_quarter(np.array([_principal_yaw(xy)]))

    best_area, best = np.inf, None
    for yaw in np.unique(np.round(candidates, 12)):
        c, s = np.cos(yaw), np.sin(yaw)
        local = hull_pts @ np.array([[c, -s], [s, c]])
        lo, hi = local.min(axis=0), local.max(axis=0)
        area = float(np.prod(hi - lo))
        if area < best_area - 1e-12 * max(best_area, 1.0):
            best_area, best = area, (float(yaw), lo, hi)

    yaw, lo, hi = best
    mid = (lo + hi) / 2
    c, s = np.cos(yaw), np.sin(yaw)
    center = np.array([c * mid[0] - s * mid[1], s * mid[0] + c * mid[1]])
    return yaw, center, (hi - lo) / 2


def fit_oriented_box(cloud: PointCloud3, min_half_extent: float = 0.005) -> OrientedBox3:
    """Fit a Z-aligned box with minimum footprint area to a point cloud.

    Parameters
    ----------
    cloud : PointCloud3
        At least 4 points, not all within 1 mm of a line.
    min_half_extent : float, optional
        Lower bound of each half extent, so planar clouds still get a box with volume.

    Returns
    -------
    OrientedBox3
        Box containing all points that survive the outlier trim.

    Raises
    ------
    DegenerateCloud
        If the cloud has fewer than 4 points or is (nearly) collinear.
    """
    pts = cloud.points
    if len(pts) < 4:
        raise DegenerateCloud(f"Need at least 4 points to fit a box, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    off_axis = centered - np.outer(centered @ vt[0], vt[0])
    if np.max(np.linalg.norm(off_axis, axis=1)) <= 1e-3:
        raise DegenerateCloud("All points lie within 1 mm of a line")

    pts = trim_outliers(pts)
    yaw, center_xy, half_xy = min_area_rectangle(pts[:, :2])
    z0, z1 = pts[:, 2].min(), pts[:, 2].max()
    half = np.maximum(np.array([half_xy[0], half_xy[1], (z1 - z0) / 2]), min_half_extent)
    return OrientedBox3(np.array([center_xy[0], center_xy[1], (z0 + z1) / 2]), half, yaw)
