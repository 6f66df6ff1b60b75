"""KITTI tracking-format ingestion and the matching on-disk writer.

Directory layout (one scene per sequence id):
    root/velodyne/<scene:04d>/<frame:06d>.bin   little-endian float32 (x,y,z,i)
    root/label_02/<scene:04d>.txt               one object row per line
    root/calib/<scene:04d>.txt                  projection/rectification/rigid maps

Scene splits: scenes 0-16 train, 17-18 validation, 19-20 test.

Frames: KITTI labels live in the rectified camera frame (x right, y down,
z forward, yaw about y). All tracking computations use a fixed right-handed
frame with z up obtained by the constant rotation (x, y, z)_track =
(x, z, -y)_camera, under which yaw_track = -rotation_y. LIDAR points are
converted once at load: velodyne -> camera (rigid + rectification) ->
tracking frame.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, MalformedFileError
from .geometry import Box3D, wrap_angle
from .tracklets import Frame, Tracklet

SPLIT_SCENES = {
    "train": tuple(range(0, 17)),
    "val": (17, 18),
    "test": (19, 20),
}

# constant camera->tracking rotation: (x, z, -y)
_CAM_TO_TRACK = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])

LABEL_COLUMNS = 17  # + optional score


@dataclass
class KittiLabel:
    frame: int
    track_id: int
    type: str
    truncated: float
    occluded: int
    alpha_obs: float
    bbox2d: tuple
    dimensions: tuple  # (height, width, length), meters
    location: tuple  # camera frame, bottom-face center
    rotation_y: float


@dataclass
class Calibration:
    rect: np.ndarray  # 3x3 rectification
    velo_to_cam: np.ndarray  # 3x4 rigid transform

    def __post_init__(self):
        self.rect = np.asarray(self.rect, dtype=np.float64).reshape(3, 3)
        self.velo_to_cam = np.asarray(self.velo_to_cam, dtype=np.float64).reshape(3, 4)
        for name, block in (("rect", self.rect), ("velo_to_cam rotation", self.velo_to_cam[:, :3])):
            if not np.allclose(block @ block.T, np.eye(3), atol=1e-3):
                raise MalformedFileError(f"calibration {name} block is not orthonormal")

    @classmethod
    def identity(cls):
        return cls(rect=np.eye(3), velo_to_cam=np.hstack([np.eye(3), np.zeros((3, 1))]))


def read_scan(path):
    """LIDAR scan file -> (N, 4) float64 array of (x, y, z, intensity)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % 16 != 0:
        raise MalformedFileError(
            f"{path}: size {len(raw)} is not a multiple of 16 bytes"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return data.astype(np.float64)


def write_scan(path, points, intensity=None):
    """Write (N, 3) points (+ optional intensity) as little-endian float32 rows."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if intensity is None:
        intensity = np.zeros(len(points))
    rows = np.column_stack([points, np.asarray(intensity).reshape(-1)])
    rows.astype("<f4").tofile(path)


def parse_labels(path):
    """Parse a KITTI tracking label file; unknown classes are retained."""
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in (LABEL_COLUMNS, LABEL_COLUMNS + 1):
                raise MalformedFileError(
                    f"{path}:{lineno}: expected {LABEL_COLUMNS} columns, got {len(parts)}"
                )
            try:
                labels.append(
                    KittiLabel(
                        frame=int(parts[0]),
                        track_id=int(parts[1]),
                        type=parts[2],
                        truncated=float(parts[3]),
                        occluded=int(float(parts[4])),
                        alpha_obs=float(parts[5]),
                        bbox2d=tuple(float(v) for v in parts[6:10]),
                        dimensions=tuple(float(v) for v in parts[10:13]),
                        location=tuple(float(v) for v in parts[13:16]),
                        rotation_y=float(parts[16]),
                    )
                )
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
    return labels


def parse_calib(path):
    """Parse a KITTI tracking calibration file into rect + velodyne->camera maps."""
    entries = {}
    with open(path) as fh:
        for line in fh:
            if ":" in line:
                key, _, rest = line.partition(":")
            else:
                key, _, rest = line.partition(" ")
            values = rest.split()
            if not values:
                continue
            try:
                entries[key.strip()] = np.array([float(v) for v in values])
            except ValueError:
                continue
    rect = None
    for key in ("R_rect", "R0_rect", "R_rect_00"):
        if key in entries:
            rect = entries[key]
            break
    velo = None
    for key in ("Tr_velo_cam", "Tr_velo_to_cam"):
        if key in entries:
            velo = entries[key]
            break
    if rect is None or velo is None:
        raise MalformedFileError(f"{path}: missing R_rect or Tr_velo_cam entries")
    return Calibration(rect=rect.reshape(3, 3), velo_to_cam=velo.reshape(3, 4))


def lidar_to_label_frame(points, calib):
    """Velodyne points -> rectified camera (label) frame."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = points @ calib.velo_to_cam[:, :3].T + calib.velo_to_cam[:, 3]
    return cam @ calib.rect.T


def label_frame_to_lidar(points, calib):
    """Inverse of lidar_to_label_frame; the composition is identity to 1e-9."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = points @ calib.rect  # rect is orthonormal
    return (cam - calib.velo_to_cam[:, 3]) @ calib.velo_to_cam[:, :3]


def camera_to_tracking(points):
    return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ _CAM_TO_TRACK.T


def tracking_to_camera(points):
    return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ _CAM_TO_TRACK


def lidar_to_tracking(points, calib):
    """Velodyne points -> tracking frame (done once at load)."""
    return camera_to_tracking(lidar_to_label_frame(points, calib))


def label_to_box(label):
    """KITTI label -> Box3D in the tracking frame."""
    h, w, l = label.dimensions
    x, y, z = label.location  # camera frame, bottom-face center
    center = np.array([x, z, h / 2.0 - y])
    return Box3D(center=center, size=(w, h, l), yaw=wrap_angle(-label.rotation_y))


def box_to_label_fields(box, frame, track_id, occluded=0, obj_type="Car"):
    """Box3D -> the textual KITTI label row fields (inverse of label_to_box)."""
    w, h, l = box.size
    cx, cy, cz = box.center
    location = (cx, h / 2.0 - cz, cy)
    rotation_y = wrap_angle(-box.yaw)
    alpha = wrap_angle(rotation_y - math.atan2(location[0], location[2]))
    return (
        f"{frame} {track_id} {obj_type} 0 {int(occluded)} {alpha:.9f} "
        f"0 0 50 50 "
        f"{h:.9f} {w:.9f} {l:.9f} {location[0]:.9f} {location[1]:.9f} {location[2]:.9f} "
        f"{rotation_y:.9f}"
    )


def _scene_paths(root, scene):
    return (
        os.path.join(root, "velodyne", f"{scene:04d}"),
        os.path.join(root, "label_02", f"{scene:04d}.txt"),
        os.path.join(root, "calib", f"{scene:04d}.txt"),
    )


def available_scenes(root):
    label_dir = os.path.join(root, "label_02")
    if not os.path.isdir(label_dir):
        raise DataError(f"{root}: no label_02 directory (not a KITTI tracking layout)")
    scenes = []
    for name in sorted(os.listdir(label_dir)):
        if name.endswith(".txt"):
            try:
                scenes.append(int(name[:-4]))
            except ValueError:
                continue
    return scenes


def extract_tracklets(
    root,
    split,
    classes=("Car",),
    region_radius=15.0,
    min_frames=2,
):
    """One tracklet per (scene, track id) of the requested classes.

    Each scan is loaded once and transformed to the tracking frame; every
    tracklet frame keeps the points within `region_radius` meters (planar)
    of the ground-truth center, or the full cloud when the radius is None.
    Frames with no points keep an empty cloud rather than being dropped.
    """
    if split not in SPLIT_SCENES:
        raise DataError(f"unknown split {split!r}; expected train/val/test")
    scenes = [s for s in available_scenes(root) if s in SPLIT_SCENES[split]]
    tracklets = []
    for scene in scenes:
        velo_dir, label_path, calib_path = _scene_paths(root, scene)
        if not os.path.isfile(label_path):
            continue
        calib = parse_calib(calib_path)
        labels = [
            lab
            for lab in parse_labels(label_path)
            if lab.type in classes and lab.track_id >= 0
        ]
        by_frame = {}
        for lab in labels:
            by_frame.setdefault(lab.frame, []).append(lab)
        by_track = {}
        for frame_index in sorted(by_frame):
            scan_path = os.path.join(velo_dir, f"{frame_index:06d}.bin")
            if not os.path.isfile(scan_path):
                raise DataError(f"missing scan {scan_path} referenced by labels")
            cloud = lidar_to_tracking(read_scan(scan_path)[:, :3], calib)
            for lab in by_frame[frame_index]:
                box = label_to_box(lab)
                if region_radius is not None:
                    planar = cloud[:, :2] - box.center[:2]
                    local = cloud[(planar**2).sum(axis=1) < region_radius**2]
                else:
                    local = cloud
                by_track.setdefault(lab.track_id, []).append(
                    Frame(cloud=local, box=box, occluded=lab.occluded > 0)
                )
        for track_id in sorted(by_track):
            frames = by_track[track_id]
            if len(frames) >= min_frames:
                tracklets.append(
                    Tracklet(scene_id=scene, track_id=track_id, frames=frames)
                )
    return tracklets


def write_kitti_scene(root, scene, tracklets):
    """Serialize tracklets back to back as one KITTI scene.

    Tracklet i occupies its own contiguous frame range with track id i, so
    instances never share a frame and extraction recovers each tracklet.
    Points are stored in a velodyne frame equal to the tracking frame; the
    written calibration carries the matching tracking->camera rigid map so
    reading the files back reproduces the tracklets.
    """
    calib_velo_to_cam = np.hstack([_CAM_TO_TRACK.T, np.zeros((3, 1))])
    velo_dir, label_path, calib_path = _scene_paths(root, scene)
    os.makedirs(velo_dir, exist_ok=True)
    os.makedirs(os.path.dirname(label_path), exist_ok=True)
    os.makedirs(os.path.dirname(calib_path), exist_ok=True)
    with open(calib_path, "w") as fh:
        rect = " ".join("1.0" if i == j else "0.0" for i in range(3) for j in range(3))
        velo = " ".join(f"{v:.9f}" for v in calib_velo_to_cam.reshape(-1))
        fh.write(f"R_rect: {rect}\n")
        fh.write(f"Tr_velo_cam: {velo}\n")
    frame_offset = 0
    with open(label_path, "w") as fh:
        for track_id, tracklet in enumerate(tracklets):
            for local_index, frame in enumerate(tracklet.frames):
                scene_frame = frame_offset + local_index
                fh.write(
                    box_to_label_fields(
                        frame.box,
                        scene_frame,
                        track_id,
                        occluded=1 if frame.occluded else 0,
                    )
                    + "\n"
                )
                write_scan(
                    os.path.join(velo_dir, f"{scene_frame:06d}.bin"), frame.cloud
                )
            frame_offset += len(tracklet.frames)


def write_kitti_layout(root, tracklets, scene_offset=0):
    """Serialize tracklets into the KITTI tracking layout, one scene each."""
    scene_ids = []
    for i, tracklet in enumerate(tracklets):
        scene = scene_offset + i
        scene_ids.append(scene)
        write_kitti_scene(root, scene, [tracklet])
    return scene_ids


def write_kitti_splits(root, splits):
    """Write {"train": [...], "val": [...], "test": [...]} tracklet lists,
    distributing each split's tracklets round-robin over its scene ids."""
    for split, tracklets in splits.items():
        scene_ids = SPLIT_SCENES[split]
        buckets = {scene: [] for scene in scene_ids}
        for i, tracklet in enumerate(tracklets):
            buckets[scene_ids[i % len(scene_ids)]].append(tracklet)
        for scene, bucket in buckets.items():
            if bucket:
                write_kitti_scene(root, scene, bucket)
