"""Tracklets: the per-instance sequences everything downstream consumes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, canonicalize, center_error, points_in_box

DEFAULT_CROP_SCALE = 1.25  # boxes are tight; cropping inflates them (never metrics)
STATIC_DISPLACEMENT_THRESHOLD = 0.7  # meters/frame, static vs dynamic split


@dataclass
class Frame:
    cloud: np.ndarray  # full or neighborhood point cloud, tracking frame
    box: Box3D  # ground truth
    occluded: bool = False


@dataclass
class Tracklet:
    scene_id: int
    track_id: int
    frames: list[Frame] = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def displacements(self):
        """Planar ground-truth center motion between consecutive frames, meters."""
        return [
            center_error(a.box, b.box, bev=True)
            for a, b in zip(self.frames, self.frames[1:])
        ]

    def mean_displacement(self):
        moves = self.displacements()
        return float(np.mean(moves)) if moves else 0.0

    def is_dynamic(self, threshold=STATIC_DISPLACEMENT_THRESHOLD):
        return self.mean_displacement() >= threshold


def crop_canonical(cloud, box, scale=DEFAULT_CROP_SCALE, margin=None):
    """Points inside the (inflated) box, expressed in the box frame."""
    if margin is not None:
        inside = points_in_box(cloud, box.expanded(margin), scale=1.0)
    else:
        inside = points_in_box(cloud, box, scale=scale)
    return canonicalize(inside, box)


def build_model_shape(tracklet, scale=DEFAULT_CROP_SCALE, margin=None):
    """Aligned ground-truth model: every frame's crop, canonicalized, concatenated."""
    if len(tracklet) == 0:
        raise ValueError("cannot build a model shape from an empty tracklet")
    parts = [
        crop_canonical(f.cloud, f.box, scale=scale, margin=margin)
        for f in tracklet.frames
    ]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, 3))
