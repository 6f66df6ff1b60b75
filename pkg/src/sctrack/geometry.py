"""Point clouds, oriented 3D boxes, pose offsets, and overlap/error metrics.

Conventions, fixed once for the whole package:
- point clouds are float64 arrays of shape (N, 3); empty clouds (0, 3) are legal
- the ground plane is spanned by (x, y), z points up
- yaw rotates about +z, counter-clockwise seen from above, normalized to (-pi, pi]
- box size is (width, height, length); length lies along the box's heading
  (local x), width along local y, height along z
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

ANGLE_SCALE_DEG = 5.0  # degrees of yaw worth one meter in the pose metric


def wrap_angle(rad):
    """Normalize an angle in radians to (-pi, pi]."""
    wrapped = math.fmod(rad + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def wrap_degrees(deg):
    """Normalize an angle in degrees to (-180, 180]."""
    wrapped = math.fmod(deg + 180.0, 360.0)
    if wrapped <= 0.0:
        wrapped += 360.0
    return wrapped - 180.0


def rotation_z(yaw):
    """3x3 rotation about +z by `yaw` radians (CCW from above)."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def as_cloud(points):
    """Coerce to a float64 (N, 3) array, accepting an empty list."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError(f"point cloud must have shape (N, 3), got {arr.shape}")
    return arr


@dataclass
class Box3D:
    """Oriented 3D bounding box, upright (yaw about the vertical axis only)."""

    center: np.ndarray
    size: np.ndarray  # (width, height, length)
    yaw: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(self.size <= 0.0):
            raise ValueError(f"box size components must be > 0, got {self.size}")
        self.yaw = wrap_angle(float(self.yaw))

    @property
    def width(self):
        return float(self.size[0])

    @property
    def height(self):
        return float(self.size[1])

    @property
    def length(self):
        return float(self.size[2])

    @property
    def volume(self):
        return float(self.size.prod())

    def corners_bev(self):
        """Ground-plane corners (4, 2), counter-clockwise."""
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def z_interval(self):
        half = self.height / 2.0
        return self.center[2] - half, self.center[2] + half

    def scaled(self, scale):
        return Box3D(self.center.copy(), self.size * scale, self.yaw)

    def expanded(self, margin):
        """Box grown by a fixed margin (meters) on every side."""
        return Box3D(self.center.copy(), self.size + 2.0 * margin, self.yaw)


@dataclass
class PoseOffset:
    """Planar perturbation of a box: translation in its local frame plus a yaw delta."""

    t_x: float = 0.0
    t_y: float = 0.0
    alpha: float = 0.0  # degrees

    def __post_init__(self):
        self.t_x = float(self.t_x)
        self.t_y = float(self.t_y)
        self.alpha = wrap_degrees(float(self.alpha))

    def magnitude(self):
        """Pose-space norm with the degrees-to-meters angle weighting."""
        return math.sqrt(self.t_x**2 + self.t_y**2 + (self.alpha / ANGLE_SCALE_DEG) ** 2)


def _to_local(cloud, box):
    return (cloud - box.center) @ rotation_z(box.yaw)  # R(-yaw) p == p @ R(yaw)


def points_in_box(cloud, box, scale=1.0):
    """Points strictly inside the box after scaling its size about the center.

    Original point order is preserved; the result may be empty.
    """
    if scale <= 0.0:
        raise ValueError("scale must be > 0")
    cloud = as_cloud(cloud)
    if cloud.shape[0] == 0:
        return cloud
    local = _to_local(cloud, box)
    half = box.size * scale / 2.0
    mask = (
        (np.abs(local[:, 0]) < half[2])  # length along local x
        & (np.abs(local[:, 1]) < half[0])  # width along local y
        & (np.abs(local[:, 2]) < half[1])  # height along z
    )
    return cloud[mask]


def crop_box(box, scale=None, margin=None):
    """Cropping box variant: scaled about its center or grown by a fixed margin."""
    if (scale is None) == (margin is None):
        raise ValueError("exactly one of scale/margin must be given")
    return box.scaled(scale) if scale is not None else box.expanded(margin)


def canonicalize(cloud, box):
    """Express points in the box frame (translate by -center, rotate by -yaw)."""
    cloud = as_cloud(cloud)
    if cloud.shape[0] == 0:
        return cloud
    return _to_local(cloud, box)


def box_to_world(cloud, box):
    """Inverse of canonicalize: box-frame points back into the world frame."""
    cloud = as_cloud(cloud)
    if cloud.shape[0] == 0:
        return cloud
    return cloud @ rotation_z(box.yaw).T + box.center


def resample(cloud, n, rng):
    """Return exactly n points by uniform subsampling or duplication.

    More points than n: uniform subsample without replacement. Fewer: every
    original point is kept once and the remainder is drawn uniformly with
    replacement. An empty cloud yields n origin points so downstream
    encoders always receive a valid tensor.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cloud = as_cloud(cloud)
    count = cloud.shape[0]
    if count == 0:
        return np.zeros((n, 3))
    if count >= n:
        idx = rng.choice(count, size=n, replace=False)
        return cloud[idx]
    extra = rng.choice(count, size=n - count, replace=True)
    return np.concatenate([cloud, cloud[extra]], axis=0)


def apply_offset(box, offset):
    """Shift a box by a planar offset expressed in its own local frame."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    shift = np.array(
        [c * offset.t_x - s * offset.t_y, s * offset.t_x + c * offset.t_y, 0.0]
    )
    return Box3D(
        box.center + shift,
        box.size.copy(),
        wrap_angle(box.yaw + math.radians(offset.alpha)),
    )


def pose_distance(a, b):
    """Planar pose metric: sqrt(dx^2 + dy^2 + (dyaw_deg / 5)^2)."""
    dx = a.center[0] - b.center[0]
    dy = a.center[1] - b.center[1]
    dalpha = wrap_degrees(math.degrees(a.yaw - b.yaw))
    return math.sqrt(dx * dx + dy * dy + (dalpha / ANGLE_SCALE_DEG) ** 2)


def center_error(a, b, bev=False):
    """Euclidean distance between box centers (planar distance in BEV mode)."""
    diff = a.center - b.center
    if bev:
        diff = diff[:2]
    return float(np.linalg.norm(diff))


def _polygon_area(poly):
    """Shoelace area of a polygon given as (V, 2) vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman: clip a convex subject polygon by a CCW convex polygon."""
    output = list(subject)
    for i in range(len(clip)):
        if not output:
            return np.zeros((0, 2))
        a = clip[i]
        b = clip[(i + 1) % len(clip)]
        edge = b - a
        polygon, output = output, []
        for j in range(len(polygon)):
            p = polygon[j]
            q = polygon[(j + 1) % len(polygon)]
            p_in = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0
            q_in = edge[0] * (q[1] - a[1]) - edge[1] * (q[0] - a[0]) >= 0.0
            if p_in:
                output.append(p)
            if p_in != q_in:
                denom = edge[0] * (q[1] - p[1]) - edge[1] * (q[0] - p[0])
                if denom != 0.0:
                    t = (edge[0] * (a[1] - p[1]) - edge[1] * (a[0] - p[0])) / denom
                    output.append(p + t * (q - p))
    return np.array(output) if output else np.zeros((0, 2))


def bev_intersection_area(a, b):
    """Area of the ground-plane intersection of two boxes."""
    return _polygon_area(_clip_polygon(a.corners_bev(), b.corners_bev()))


def iou_bev(a, b):
    """Intersection over union of the ground-plane rectangles."""
    inter = bev_intersection_area(a, b)
    area_a = a.width * a.length
    area_b = b.width * b.length
    union = area_a + area_b - inter
    return inter / union if union > 0.0 else 0.0


def iou_3d(a, b):
    """Oriented 3D IoU: BEV polygon intersection times vertical overlap, over union."""
    inter_area = bev_intersection_area(a, b)
    lo_a, hi_a = a.z_interval()
    lo_b, hi_b = b.z_interval()
    dz = max(0.0, min(hi_a, hi_b) - max(lo_a, lo_b))
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    return inter / union if union > 0.0 else 0.0
