"""One Pass Evaluation: Success and Precision AUC over pooled frames.

Success integrates the fraction of frames whose box overlap (IoU) exceeds a
threshold swept over [0, 1]; Precision integrates the fraction of frames
whose center error stays within a threshold swept over [0, 2] meters. Both
use a 0.01-step grid with trapezoidal integration and report percentages.

Frames from every tracklet are pooled equally (micro-average), the
initialization frame included. Frames a failed tracker never produced
count as overlap 0 / infinite error.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, EmptyInputError
from .geometry import center_error, iou_3d, iou_bev
from .tracklets import STATIC_DISPLACEMENT_THRESHOLD

SUCCESS_THRESHOLDS = np.round(np.arange(0 , 101) * 0.01, 2)
PRECISION_THRESHOLDS = np.round(np.arange(0, 201) * 0.01, 2)


def success_curve(overlaps):
    overlaps = np.asarray(overlaps, dtype=np.float64)
    return np.array([(overlaps > t).mean() for t in SUCCESS_THRESHOLDS])


def precision_curve(errors):
    errors = np.asarray(errors, dtype=np.float64)
    return np.array([(errors <= t).mean() for t in PRECISION_THRESHOLDS])


def success_auc(overlaps):
    """AUC of the overlap-threshold curve over [0, 1], as a percentage."""
    if len(overlaps) == 0:
        raise EmptyInputError("success_auc of no frames is undefined")
    return float(np.trapezoid(success_curve(overlaps), SUCCESS_THRESHOLDS) * 100.0)


def precision_auc(errors):
    """AUC of the error-threshold curve over [0, 2] m (normalized), as a percentage."""
    if len(errors) == 0:
        raise EmptyInputError("precision_auc of no frames is undefined")
    return float(
        np.trapezoid(precision_curve(errors), PRECISION_THRESHOLDS) / 2.0 * 100.0
    )


@dataclass
class OpeReport:
    success: float
    precision: float
    success_curve: np.ndarray
    precision_curve: np.ndarray
    n_frames: int
    n_runs: int = 1
    groups: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "success": self.success,
            "precision": self.precision,
            "n_frames": self.n_frames,
            "n_runs": self.n_runs,
            "groups": {
                name: {
                    "success": rep.success,
                    "precision": rep.precision,
                    "n_frames": rep.n_frames,
                }
                for name, rep in self.groups.items()
            },
        }
        return out

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_curves_csv(self, success_path, precision_path):
        with open(success_path, "w") as fh:
            fh.write("threshold,fraction\n")
            for t, v in zip(SUCCESS_THRESHOLDS, self.success_curve):
                fh.write(f"{t:.2f},{v:.6f}\n")
        with open(precision_path, "w") as fh:
            fh.write("threshold_m,fraction\n")
            for t, v in zip(PRECISION_THRESHOLDS, self.precision_curve):
                fh.write(f"{t:.2f},{v:.6f}\n")


def _frame_measures(result, tracklet, mode):
    """Per-frame (overlap, error, occluded) for one tracklet, padding failures."""
    iou = iou_bev if mode == "bev" else iou_3d
    bev = mode == "bev"
    records = {r.frame_index: r for r in result.records}
    if not result.failed and len(result.records) != len(tracklet.frames):
        raise AlignmentError(
            f"tracklet ({tracklet.scene_id}, {tracklet.track_id}): "
            f"{len(result.records)} result frames vs {len(tracklet.frames)} tracklet frames"
        )
    measures = []
    for t, frame in enumerate(tracklet.frames):
        record = records.get(t)
        if record is None:
            measures.append((0.0, np.inf, frame.occluded))
        else:
            measures.append(
                (
                    iou(record.box, frame.box),
                    center_error(record.box, frame.box, bev=bev),
                    frame.occluded,
                )
            )
    return measures


def _report_from_pool(overlaps, errors):
    return OpeReport(
        success=success_auc(overlaps),
        precision=precision_auc(errors),
        success_curve=success_curve(overlaps),
        precision_curve=precision_curve(errors),
        n_frames=len(overlaps),
    )


def evaluate_run(results, tracklets, mode="3d", groups=()):
    """OPE report for one run (or the average of several seeded runs).

    `results` is a list of TrackResults aligned to `tracklets` by
    (scene_id, track_id), or a list of such lists for multi-seed averaging.
    Optional groups: "occlusion" (visible/occluded frames) and
    "displacement" (static/dynamic tracklets at the 0.7 m/frame threshold).
    """
    if mode not in ("3d", "bev"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if results and isinstance(results[0], (list, tuple)):
        reports = [evaluate_run(run, tracklets, mode, groups) for run in results]
        merged = OpeReport(
            success=float(np.mean([r.success for r in reports])),
            precision=float(np.mean([r.precision for r in reports])),
            success_curve=np.mean([r.success_curve for r in reports], axis=0),
            precision_curve=np.mean([r.precision_curve for r in reports], axis=0),
            n_frames=reports[0].n_frames,
            n_runs=len(reports),
        )
        for name in reports[0].groups:
            merged.groups[name] = OpeReport(
                success=float(np.mean([r.groups[name].success for r in reports])),
                precision=float(np.mean([r.groups[name].precision for r in reports])),
                success_curve=np.mean(
                    [r.groups[name].success_curve for r in reports], axis=0
                ),
                precision_curve=np.mean(
                    [r.groups[name].precision_curve for r in reports], axis=0
                ),
                n_frames=reports[0].groups[name].n_frames,
                n_runs=len(reports),
            )
        return merged

    by_key = {(t.scene_id, t.track_id): t for t in tracklets}
    if len(by_key) != len(tracklets):
        raise AlignmentError("duplicate (scene_id, track_id) keys among tracklets")
    pools = {"all": ([], [])}
    for name in groups:
        if name == "occlusion":
            pools["visible"] = ([], [])
            pools["occluded"] = ([], [])
        elif name == "displacement":
            pools["static"] = ([], [])
            pools["dynamic"] = ([], [])
        else:
            raise ValueError(f"unknown group {name!r}")
    seen = set()
    for result in results:
        key = (result.scene_id, result.track_id)
        if key not in by_key:
            raise AlignmentError(f"result for unknown tracklet {key}")
        if key in seen:
            raise AlignmentError(f"duplicate results for tracklet {key}")
        seen.add(key)
        tracklet = by_key[key]
        dynamic = tracklet.mean_displacement() >= STATIC_DISPLACEMENT_THRESHOLD
        for overlap, error, occluded in _frame_measures(result, tracklet, mode):
            buckets = ["all"]
            if "visible" in pools:
                buckets.append("occluded" if occluded else "visible")
            if "static" in pools:
                buckets.append("dynamic" if dynamic else "static")
            for bucket in buckets:
                pools[bucket][0].append(overlap)
                pools[bucket][1].append(error)
    if len(seen) != len(by_key):
        missing = sorted(set(by_key) - seen)
        raise AlignmentError(f"missing results for tracklets {missing}")
    report = _report_from_pool(*pools.pop("all"))
    for name, (overlaps, errors) in pools.items():
        if overlaps:
            report.groups[name] = _report_from_pool(overlaps, errors)
    return report
