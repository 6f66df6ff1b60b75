"""Procedural car-like tracklets for desk-scale experiments.

A shape is a box hull with wheel arcs carved into its sides, sampled on the
surface with outward normals. Per frame the shape moves along a smooth
planar trajectory; points facing away from the sensor at the origin are
culled, Gaussian noise perturbs coordinates, and a random fraction of
points is dropped. Ground-truth boxes follow the exact rigid pose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import Box3D, box_to_world, rotation_z
from .tracklets import Frame, Tracklet

MEAN_CAR_SIZE = (1.8, 1.5, 4.2)  # (width, height, length), typical KITTI car
CAR_SIZE_STD = 0.1


@dataclass
class SyntheticConfig:
    n_frames: int = 20
    points_per_shape: int = 1024
    noise_sigma: float = 0.02
    dropout: float = 0.3
    speed: float = 0.8  # meters advanced per frame
    turn_rate: float = 2.0  # degrees of heading change per frame
    start_distance: float = 8.0  # meters from the sensor at frame 0
    start_distance_jitter: float = 0.0  # per-tracklet uniform +- spread
    approach: bool = False  # head past the sensor (far and sparse -> near and dense)
    ground_points: int = 0  # road-plane clutter around the target
    ground_radius: float = 6.0  # meters of road around the target center
    n_distractors: int = 0  # parked/moving cars near the target
    distractor_offset: float = 3.0  # lateral distance of distractors, meters
    density_ref_distance: float = 0.0  # r0 for (r0/r)^2 return falloff; 0 disables
    min_keep: float = 0.02  # floor of the distance-falloff keep probability
    occlusion_prob: float = 0.0  # per-frame chance of an occlusion event
    occlusion_fraction: float = 0.5  # largest fraction of the object's bearing range occluded
    cull_backfaces: bool = True

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.points_per_shape < 8:
            raise ConfigError("points_per_shape must be >= 8")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.n_distractors < 0 or self.ground_points < 0:
            raise ConfigError("counts must be >= 0")


def sample_car_shell(size, n, rng):
    """Surface points and outward normals of a car-like shell in canonical pose.

    Canonical pose: length along +x, width along y, height along z, centered
    at the origin. Returns (points (n, 3), normals (n, 3)).
    """
    w, h, l = float(size[0]), float(size[1]), float(size[2])
    wheel_r = 0.22 * h
    wheel_centers_x = (-0.32 * l, 0.32 * l)
    wheel_z = -h / 2.0 + wheel_r

    # face areas decide how many samples each face receives
    faces = [
        ("top", l * w), ("bottom", l * w),
        ("front", w * h), ("back", w * h),
        ("left", l * h), ("right", l * h),
    ]
    total = sum(a for _, a in faces)
    points, normals = [], []
    for name, area in faces:
        count = max(4, int(round(n * area / total * 0.88)))
        u = rng.uniform(-0.5, 0.5, size=count)
        v = rng.uniform(-0.5, 0.5, size=count)
        if name == "top":
            p = np.column_stack([u * l, v * w, np.full(count, h / 2.0)])
            nrm = np.tile([0.0, 0.0, 1.0], (count, 1))
        elif name == "bottom":
            p = np.column_stack([u * l, v * w, np.full(count, -h / 2.0)])
            nrm = np.tile([0.0, 0.0, -1.0], (count, 1))
        elif name == "front":
            p = np.column_stack([np.full(count, l / 2.0), u * w, v * h])
            nrm = np.tile([1.0, 0.0, 0.0], (count, 1))
        elif name == "back":
            p = np.column_stack([np.full(count, -l / 2.0), u * w, v * h])
            nrm = np.tile([-1.0, 0.0, 0.0], (count, 1))
        else:
            y = w / 2.0 if name == "left" else -w / 2.0
            p = np.column_stack([u * l, np.full(count, y), v * h])
            nrm = np.tile([0.0, 1.0 if name == "left" else -1.0, 0.0], (count, 1))
            # carve wheel wells out of the side panels
            keep = np.ones(count, dtype=bool)
            for cx in wheel_centers_x:
                keep &= (p[:, 0] - cx) ** 2 + (p[:, 2] - wheel_z) ** 2 > wheel_r**2
            p, nrm = p[keep], nrm[keep]
        points.append(p)
        normals.append(nrm)

    # wheel arcs: half-cylinders filling the carved wells
    n_wheel = max(8, int(n * 0.03))
    for cx in wheel_centers_x:
        for y_side in (w / 2.0 - 0.02 * w, -w / 2.0 + 0.02 * w):
            theta = rng.uniform(-math.pi, 0.0, size=n_wheel)  # lower half arc
            px = cx + wheel_r * np.cos(theta)
            pz = wheel_z + wheel_r * np.sin(theta)
            p = np.column_stack([px, np.full(n_wheel, y_side), pz])
            nrm = np.column_stack([np.cos(theta), np.zeros(n_wheel), np.sin(theta)])
            points.append(p)
            normals.append(nrm)

    points = np.concatenate(points, axis=0)
    normals = np.concatenate(normals, axis=0)
    # clamp wheel points that dip below the hull floor back inside
    points[:, 2] = np.clip(points[:, 2], -h / 2.0, h / 2.0)
    return points, normals


def sample_shape_dataset(n_shapes, points_per_shape, rng):
    """Canonical car shells for completion pre-training (ShapeNet stand-in)."""
    shapes = []
    for _ in range(n_shapes):
        size = np.maximum(rng.normal(MEAN_CAR_SIZE, CAR_SIZE_STD), 0.5)
        pts, _ = sample_car_shell(size, points_per_shape, rng)
        shapes.append(pts)
    return shapes


def _trajectory(config, rng):
    """Smooth planar start pose + per-frame (center, heading) sequence.

    The car starts `start_distance` from the sensor; crosswise by default,
    or (approach mode) headed inward so it passes the sensor at a few
    meters, far-and-sparse to near-and-dense like real drive-by captures.
    Either way it never runs over the origin.
    """
    angle_to_car = rng.uniform(-math.pi, math.pi)
    if config.approach:
        heading = (
            angle_to_car
            + math.pi
            + rng.choice([-1.0, 1.0]) * rng.uniform(0.25, 0.45)
        )
    else:
        heading = (
            angle_to_car
            + rng.choice([-1.0, 1.0]) * math.pi / 2.0
            + rng.uniform(-math.pi / 6.0, math.pi / 6.0)
        )
    start = config.start_distance
    if config.start_distance_jitter > 0.0:
        start += rng.uniform(-1.0, 1.0) * config.start_distance_jitter
        start = max(start, 3.0)
    center = np.array(
        [
            start * math.cos(angle_to_car),
            start * math.sin(angle_to_car),
            0.0,
        ]
    )
    turn = math.radians(config.turn_rate) * rng.choice([-1.0, 1.0])
    poses = []
    for _ in range(config.n_frames):
        poses.append((center.copy(), heading))
        center = center + config.speed * np.array(
            [math.cos(heading), math.sin(heading), 0.0]
        )
        heading = heading + turn
    return poses


def _sensor_view(world, world_normals, config, rng):
    """Apply back-face culling, distance falloff, dropout, and noise."""
    keep = np.ones(len(world), dtype=bool)
    if config.cull_backfaces:
        # sensor sits at the origin; keep surfaces facing it
        keep &= (world_normals * -world).sum(axis=1) > 0.0
    if config.density_ref_distance > 0.0:
        # LIDAR returns thin out with range, roughly inverse-square
        r = np.linalg.norm(world, axis=1)
        prob = np.clip((config.density_ref_distance / np.maximum(r, 0.1)) ** 2,
                       config.min_keep, 1.0)
        keep &= rng.uniform(size=len(world)) < prob
    if config.dropout > 0.0:
        keep &= rng.uniform(size=len(world)) >= config.dropout
    cloud = world[keep]
    if config.noise_sigma > 0.0:
        cloud = cloud + rng.normal(scale=config.noise_sigma, size=cloud.shape)
    return cloud


def generate_synthetic_tracklet(config, rng, scene_id=0, track_id=0):
    """One seeded tracklet: shell + trajectory + sensor effects + exact boxes.

    Distractor cars ride alongside the target at a lateral offset, and
    ground clutter covers the road around it, so off-target candidate boxes
    contain believable structure.
    """
    size = np.maximum(rng.normal(MEAN_CAR_SIZE, CAR_SIZE_STD), 0.5)
    shell, normals = sample_car_shell(size, config.points_per_shape, rng)
    distractors = []
    for i in range(config.n_distractors):
        d_size = np.maximum(rng.normal(MEAN_CAR_SIZE, CAR_SIZE_STD), 0.5)
        d_shell, d_normals = sample_car_shell(d_size, config.points_per_shape, rng)
        side = -1.0 if i % 2 else 1.0
        lateral = side * (config.distractor_offset + 0.6 * rng.uniform())
        along = rng.uniform(-1.5, 1.5)
        yaw_jitter = rng.uniform(-0.3, 0.3)
        distractors.append((d_shell, d_normals, d_size, lateral, along, yaw_jitter))
    poses = _trajectory(config, rng)
    frames = []
    for center, heading in poses:
        box = Box3D(center.copy(), size.copy(), heading)
        world = box_to_world(shell, box)
        world_normals = normals @ rotation_z(heading).T
        cloud = _sensor_view(world, world_normals, config, rng)
        occluded = config.occlusion_prob > 0.0 and rng.uniform() < config.occlusion_prob
        if occluded and len(cloud):
            # something passes between sensor and car: clip one side of the
            # object's bearing range, leaving the rest visible
            center_bearing = math.atan2(center[1], center[0])
            bearing = np.angle(np.exp(1j * (np.arctan2(cloud[:, 1], cloud[:, 0]) - center_bearing)))
            lo, hi = bearing.min(), bearing.max()
            frac = config.occlusion_fraction * rng.uniform(0.5, 1.0)
            cut = lo + frac * (hi - lo)
            if rng.uniform() < 0.5:
                cloud = cloud[bearing > cut]
            else:
                cloud = cloud[bearing < hi - frac * (hi - lo)]
        parts = [cloud]
        for d_shell, d_normals, d_size, lateral, along, yaw_jitter in distractors:
            offset = rotation_z(heading) @ np.array([along, lateral, 0.0])
            d_box = Box3D(center + offset, d_size.copy(), heading + yaw_jitter)
            d_world = box_to_world(d_shell, d_box)
            d_world_normals = d_normals @ rotation_z(d_box.yaw).T
            parts.append(_sensor_view(d_world, d_world_normals, config, rng))
        if config.ground_points > 0:
            radius = np.sqrt(rng.uniform(0.0, 1.0, size=config.ground_points))
            radius *= config.ground_radius
            angle = rng.uniform(0.0, 2.0 * math.pi, size=config.ground_points)
            ground = np.column_stack(
                [
                    center[0] + radius * np.cos(angle),
                    center[1] + radius * np.sin(angle),
                    np.full(config.ground_points, center[2] - size[1] / 2.0),
                ]
            )
            if config.noise_sigma > 0.0:
                ground = ground + rng.normal(scale=config.noise_sigma, size=ground.shape)
            parts.append(ground)
        frames.append(
            Frame(cloud=np.concatenate(parts, axis=0), box=box, occluded=occluded)
        )
    return Tracklet(scene_id=scene_id, track_id=track_id, frames=frames)


@dataclass
class SyntheticDatasetConfig:
    n_train: int = 10
    n_val: int = 3
    n_test: int = 5
    seed: int = 0
    tracklet: SyntheticConfig = field(default_factory=SyntheticConfig)


def generate_synthetic_dataset(config):
    """Seeded train/val/test tracklet lists with disjoint synthetic scene ids."""
    splits = {}
    counts = {"train": config.n_train, "val": config.n_val, "test": config.n_test}
    for split_index, (name, count) in enumerate(counts.items()):
        tracklets = []
        for i in range(count):
            rng = np.random.default_rng((config.seed, split_index, i))
            tracklets.append(
                generate_synthetic_tracklet(
                    config.tracklet, rng, scene_id=100 * (split_index + 1), track_id=i
                )
            )
        splits[name] = tracklets
    return splits
