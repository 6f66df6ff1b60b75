"""Online frame-by-frame tracking with One Pass semantics.

Initialize the model from the first frame's given box, then per frame:
generate candidates, crop/canonicalize/resample each, score against the
model latent, select the best, and fold the chosen shape into the model.
The tracker never re-initializes; a failure aborts only its own tracklet.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .errors import DimensionError, EmptyInputError, SctrackError
from .geometry import Box3D, pose_distance, resample
from .network import cosine_similarity
from .sampling import closest_oracle_score
from .tracklets import crop_canonical


@dataclass
class FrameRecord:
    frame_index: int
    box: Box3D
    score: float | None
    n_candidates: int


@dataclass
class TrackResult:
    scene_id: int
    track_id: int
    records: list[FrameRecord] = field(default_factory=list)
    failed: bool = False
    failure_frame: int | None = None
    failure_message: str | None = None

    @property
    def boxes(self):
        return [r.box for r in self.records]


def score_candidates(model_z, candidate_clouds, encoder):
    """Cosine similarity of each resampled candidate cloud against the model latent."""
    stack = np.asarray(candidate_clouds, dtype=np.float64)
    latents = encoder.embed(stack)
    return np.array([cosine_similarity(z, model_z) for z in latents])


def select_best(boxes, scores, previous_box=None):
    """Argmax score; ties prefer the candidate nearest the previous box, then
    the lowest index."""
    if len(boxes) == 0:
        raise EmptyInputError("select_best: no candidates")
    if len(boxes) != len(scores):
        raise DimensionError(
            f"select_best: {len(boxes)} boxes vs {len(scores)} scores"
        )
    best = max(scores)
    tied = [i for i, s in enumerate(scores) if s == best]
    if len(tied) > 1 and previous_box is not None:
        tied.sort(key=lambda i: (pose_distance(boxes[i], previous_box), i))
    index = tied[0]
    return index, boxes[index]


def track_tracklet(
    tracklet,
    sampler_factory,
    fusion_config,
    encoder,
    *,
    scorer="model",
    crop_scale=1.25,
    crop_margin=None,
    seed=0,
    init_box=None,
    return_state=False,
):
    """One Pass Evaluation over a tracklet.

    `sampler_factory(init_box)` builds a fresh sampler owning its own state.
    `scorer` is "model" (cosine similarity) or "closest" (distance to ground
    truth, the oracle ceiling). Errors abort the tracklet and are reported
    in the result rather than raised. With `return_state`, also returns the
    final fusion model and last selected box (for similarity heatmaps).
    """
    frames = tracklet.frames
    if len(frames) == 0:
        raise EmptyInputError("track_tracklet: empty tracklet")
    init_box = init_box if init_box is not None else frames[0].box
    result = TrackResult(scene_id=tracklet.scene_id, track_id=tracklet.track_id)
    result.records.append(FrameRecord(0, init_box, None, 0))
    model = None
    previous_box = init_box

    def frame_rng(index):
        return np.random.default_rng(
            (seed, tracklet.scene_id, tracklet.track_id, index)
        )

    try:
        first_shape = crop_canonical(
            frames[0].cloud, init_box, scale=crop_scale, margin=crop_margin
        )
        model = fusion.init_model(
            first_shape, fusion_config, encoder=encoder, rng=frame_rng(0)
        )
        sampler = sampler_factory(init_box)
        for t in range(1, len(frames)):
            rng = frame_rng(t)
            ground_truth = frames[t].box if sampler.wants_ground_truth else None
            candidates = sampler.propose(previous_box, ground_truth, rng)
            boxes = [box for _, box in candidates]
            if scorer == "closest":
                scores = np.array(
                    [closest_oracle_score(box, frames[t].box) for box in boxes]
                )
            else:
                clouds = [
                    resample(
                        crop_canonical(
                            frames[t].cloud, box, scale=crop_scale, margin=crop_margin
                        ),
                        encoder.n_points,
                        rng,
                    )
                    for box in boxes
                ]
                model_z = fusion.model_latent(model, encoder, rng)
                scores = score_candidates(model_z, clouds, encoder)
            index, chosen_box = select_best(boxes, scores, previous_box)
            chosen_shape = crop_canonical(
                frames[t].cloud, chosen_box, scale=crop_scale, margin=crop_margin
            )
            fusion.update_model(model, chosen_shape, encoder=encoder, rng=rng)
            sampler.observe(chosen_box, scores)
            previous_box = chosen_box
            result.records.append(
                FrameRecord(t, chosen_box, float(scores[index]), len(boxes))
            )
    except (SctrackError, np.linalg.LinAlgError) as exc:
        result.failed = True
        result.failure_frame = len(result.records)
        result.failure_message = f"{type(exc).__name__}: {exc}"
    if return_state:
        return result, model, previous_box
    return result


class GridSamplerFactory:
    """Evaluation-protocol sampler: exhaustive grid centered on the current
    ground truth (explicitly an exhaustive-search approximation), or on the
    previous selection when `center_on="previous"`."""

    def __init__(self, spec, center_on="ground_truth"):
        if center_on not in ("ground_truth", "previous"):
            raise ValueError(f"unknown grid centering {center_on!r}")
        self.spec = spec
        self.center_on = center_on

    def __call__(self, init_box):
        from .sampling import exhaustive_grid

        spec = self.spec
        center_on = self.center_on

        class _GridSampler:
            wants_ground_truth = center_on == "ground_truth"

            def propose(self, previous_box, ground_truth, rng):
                reference = ground_truth if ground_truth is not None else previous_box
                return exhaustive_grid(spec, reference)

            def observe(self, selected_box, scores=None):
                pass

        return _GridSampler()


def record_to_dict(result, record):
    box = record.box
    return {
        "scene_id": result.scene_id,
        "track_id": result.track_id,
        "frame_index": record.frame_index,
        "center": [float(v) for v in box.center],
        "size": [float(v) for v in box.size],
        "yaw": float(box.yaw),
        "score": record.score,
        "n_candidates": record.n_candidates,
    }


def write_jsonl(path, results):
    """Serialize results as JSON-lines: one record per frame plus failure rows."""
    with open(path, "w") as fh:
        for result in results:
            for record in result.records:
                fh.write(json.dumps(record_to_dict(result, record), sort_keys=True))
                fh.write("\n")
            if result.failed:
                fh.write(
                    json.dumps(
                        {
                            "scene_id": result.scene_id,
                            "track_id": result.track_id,
                            "failed": True,
                            "failure_frame": result.failure_frame,
                            "failure_message": result.failure_message,
                        },
                        sort_keys=True,
                    )
                )
                fh.write("\n")


def read_jsonl(path):
    """Rebuild TrackResults from a JSON-lines file written by write_jsonl."""
    by_key = {}
    order = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            key = (row["scene_id"], row["track_id"])
            if key not in by_key:
                by_key[key] = TrackResult(scene_id=key[0], track_id=key[1])
                order.append(key)
            result = by_key[key]
            if row.get("failed"):
                result.failed = True
                result.failure_frame = row.get("failure_frame")
                result.failure_message = row.get("failure_message")
                continue
            result.records.append(
                FrameRecord(
                    frame_index=row["frame_index"],
                    box=Box3D(row["center"], row["size"], row["yaw"]),
                    score=row["score"],
                    n_candidates=row["n_candidates"],
                )
            )
    return [by_key[k] for k in order]
