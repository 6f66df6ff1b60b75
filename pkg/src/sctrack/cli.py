"""Command-line surface: train, track, eval, complete, heatmap, ablate,
plus a synthetic-dataset writer.

Every command honors --seed and produces deterministic outputs in
single-process mode. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure, 1 anything unexpected.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import math
import os
import sys

import numpy as np

from . import datasets, fusion, kitti, tracker
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericalError,
    SctrackError,
)
from .evaluation import evaluate_run
from .geometry import resample
from .network import completion_metric
from .sampling import GmmSampler, GridSpec, KalmanSampler, ParticleSampler
from .synthetic import sample_shape_dataset
from .training import TrainConfig, fit, pretrain_completion

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _add_grid_flags(parser):
    parser.add_argument("--grid-range-t", type=float, default=3.0, metavar="M")
    parser.add_argument("--grid-step-t", type=float, default=1.0, metavar="M")
    parser.add_argument("--grid-range-alpha", type=float, default=10.0, metavar="DEG")
    parser.add_argument("--grid-step-alpha", type=float, default=10.0, metavar="DEG")


def _grid_spec(args):
    return GridSpec(
        range_t=args.grid_range_t,
        step_t=args.grid_step_t,
        range_alpha=args.grid_range_alpha,
        step_alpha=args.grid_step_alpha,
    )


def _add_crop_flags(parser):
    parser.add_argument(
        "--crop-scale", type=float, default=1.25,
        help="inflate boxes by this factor when gathering points (default 1.25)",
    )
    parser.add_argument(
        "--crop-margin", type=float, default=None, metavar="M",
        help="use a fixed margin in meters instead of scaling",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sctrack",
        description="Siamese 3D point-cloud tracking with shape-completion "
        "regularization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="write a synthetic dataset in KITTI layout")
    p.add_argument("--config", required=True, help="YAML config with a data section")
    p.add_argument("--out", required=True, help="output dataset root")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("train", help="pretrain (optional) and fit on the train split")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lambda-comp", default=None,
                   help="override training.lambda_comp (float or 'inf')")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--sampler", default="grid",
                   choices=("grid", "kalman", "particle", "gmm"))
    p.add_argument("--scorer", default="model", choices=("model", "closest"))
    p.add_argument("--fusion", default="early", choices=("early", "late"))
    p.add_argument("--scheme", default="all_previous", choices=fusion.SCHEMES)
    p.add_argument("--agg", default="mean", choices=fusion.AGGREGATORS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1,
                   help="parallelize across tracklets (per-tracklet results identical)")
    p.add_argument("--out", required=True, help="JSON-lines output path")
    p.add_argument("--candidates", type=int, default=147,
                   help="candidate count for kalman/particle/gmm samplers")
    _add_grid_flags(p)
    _add_crop_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="One Pass Evaluation of tracking results")
    p.add_argument("--results", action="append", required=True,
                   help="JSON-lines results file; repeat for multi-seed averaging")
    p.add_argument("--config", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--mode", default="3d", choices=("3d", "bev"))
    p.add_argument("--groups", default="",
                   help="comma-separated: occlusion,displacement")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complete", help="decode(encode(x)) for a point-cloud file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=".bin (KITTI quadruples) or .txt")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("heatmap", help="similarity scores over the search grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--tracklet-index", type=int, default=0)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV of (t_x, t_y, alpha, score) rows")
    _add_grid_flags(p)
    _add_crop_flags(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("ablate", help="sweep a setting and tabulate OPE metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True, choices=("lambda", "k", "fusion", "sampler"))
    p.add_argument("--checkpoint", default=None,
                   help="required for fusion/sampler sweeps (no retraining)")
    p.add_argument("--out", required=True, help="CSV table path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def cmd_make_synthetic(args):
    _, data_cfg = datasets.load_config(args.config)
    if data_cfg.get("kind") != "synthetic":
        raise ConfigError("make-synthetic needs a config with data.kind: synthetic")
    os.makedirs(args.out, exist_ok=True)
    splits = {
        split: datasets.load_split(data_cfg, split) for split in ("train", "val", "test")
    }
    kitti.write_kitti_splits(args.out, splits)
    total = sum(len(v) for v in splits.values())
    print(f"wrote {total} tracklets under {args.out}")
    return EXIT_OK


def cmd_train(args):
    train_cfg, data_cfg = datasets.load_config(args.config)
    if args.lambda_comp is not None:
        value = math.inf if args.lambda_comp.lower() in ("inf", ".inf") else float(args.lambda_comp)
        train_cfg.lambda_comp = value
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    if args.seed is not None:
        train_cfg.seed = args.seed
    os.makedirs(args.out_dir, exist_ok=True)
    train_split = datasets.load_split(data_cfg, "train")
    val_split = datasets.load_split(data_cfg, "val")

    encoder = decoder = None
    if train_cfg.pretrain_epochs > 0:
        shapes = sample_shape_dataset(
            train_cfg.pretrain_shapes,
            max(train_cfg.n_points, 256),
            np.random.default_rng(train_cfg.seed),
        )
        encoder, decoder, losses = pretrain_completion(shapes, train_cfg)
        print(f"pretrain: chamfer {losses[0]:.4f} -> {losses[-1]:.4f}")

    result = fit(
        train_split,
        val_split,
        train_cfg,
        encoder=encoder,
        decoder=decoder,
        log_path=os.path.join(args.out_dir, "training_log.csv"),
        checkpoint_path=os.path.join(args.out_dir, "checkpoint.npz"),
    )
    print(
        f"trained {train_cfg.epochs} epochs, best validation loss "
        f"{result.best_val_loss:.6f}; checkpoint in {args.out_dir}"
    )
    return EXIT_OK


class _StatefulSamplerFactory:
    """Picklable factory for the stateful samplers (kalman/particle/gmm)."""

    def __init__(self, name, candidates):
        self.name = name
        self.candidates = candidates

    def __call__(self, box):
        if self.name == "kalman":
            return KalmanSampler(box, n_candidates=self.candidates)
        if self.name == "particle":
            return ParticleSampler(box, n_particles=self.candidates)
        return GmmSampler(box, n_candidates=self.candidates)


def _sampler_factory(args, spec):
    name = args.sampler
    if name == "grid":
        return tracker.GridSamplerFactory(spec, center_on="ground_truth")
    if name in ("kalman", "particle", "gmm"):
        return _StatefulSamplerFactory(name, args.candidates)
    raise ConfigError(f"unknown sampler {name!r}")


def _track_one(payload):
    (tracklet, factory, fusion_cfg, encoder, scorer, crop_scale, crop_margin, seed) = payload
    return tracker.track_tracklet(
        tracklet, factory, fusion_cfg, encoder,
        scorer=scorer, crop_scale=crop_scale, crop_margin=crop_margin, seed=seed,
    )


def cmd_track(args):
    encoder, _, _ = load_checkpoint(args.checkpoint)
    _, data_cfg = datasets.load_config(args.config)
    tracklets = datasets.load_split(data_cfg, args.split)
    if not tracklets:
        raise DataError(f"no tracklets in split {args.split!r}")
    fusion_cfg = fusion.FusionConfig(args.fusion, args.scheme, args.agg)
    factory = _sampler_factory(args, _grid_spec(args))
    payloads = [
        (t, factory, fusion_cfg, encoder, args.scorer,
         args.crop_scale, args.crop_margin, args.seed)
        for t in tracklets
    ]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_track_one, payloads))
    else:
        results = [_track_one(p) for p in payloads]
    tracker.write_jsonl(args.out, results)
    failures = sum(r.failed for r in results)
    frames = sum(len(r.records) for r in results)
    print(f"tracked {len(results)} tracklets ({frames} frames, {failures} failures) -> {args.out}")
    return EXIT_OK


def cmd_eval(args):
    _, data_cfg = datasets.load_config(args.config)
    tracklets = datasets.load_split(data_cfg, args.split)
    groups = tuple(g for g in args.groups.split(",") if g)
    runs = [tracker.read_jsonl(path) for path in args.results]
    results = runs[0] if len(runs) == 1 else runs
    report = evaluate_run(results, tracklets, mode=args.mode, groups=groups)
    os.makedirs(args.out_dir, exist_ok=True)
    report.write_json(os.path.join(args.out_dir, "report.json"))
    report.write_curves_csv(
        os.path.join(args.out_dir, "success_curve.csv"),
        os.path.join(args.out_dir, "precision_curve.csv"),
    )
    print(f"Success {report.success:.2f} / Precision {report.precision:.2f} "
          f"({report.n_frames} frames, {report.n_runs} runs)")
    for name, sub in report.groups.items():
        print(f"  {name}: {sub.success:.2f} / {sub.precision:.2f} ({sub.n_frames} frames)")
    return EXIT_OK


def _read_cloud_file(path):
    if path.endswith(".txt"):
        data = np.loadtxt(path, dtype=np.float64)
        data = data.reshape(-1, data.shape[-1]) if data.ndim > 1 else data.reshape(1, -1)
        if data.shape[1] < 3:
            raise DataError(f"{path}: expected at least 3 columns")
        return data[:, :3]
    return kitti.read_scan(path)[:, :3]


def _write_cloud_file(path, cloud):
    if path.endswith(".txt"):
        np.savetxt(path, cloud, fmt="%.9f")
    else:
        kitti.write_scan(path, cloud)


def cmd_complete(args):
    encoder, decoder, _ = load_checkpoint(args.checkpoint)
    cloud = _read_cloud_file(args.input)
    if cloud.shape[0] == 0:
        raise DataError(f"{args.input}: empty point cloud")
    rng = np.random.default_rng(args.seed)
    z = encoder.embed_one(resample(cloud, encoder.n_points, rng))
    decoded = decoder.decode(z)
    _write_cloud_file(args.out, decoded)
    metric = completion_metric(decoded, cloud)
    print(f"decoded {decoded.shape[0]} points -> {args.out}")
    print(f"completion metric (target->reconstruction mean distance): {metric:.4f} m")
    return EXIT_OK


def cmd_heatmap(args):
    encoder, _, _ = load_checkpoint(args.checkpoint)
    _, data_cfg = datasets.load_config(args.config)
    tracklets = datasets.load_split(data_cfg, args.split)
    if not 0 <= args.tracklet_index < len(tracklets):
        raise DataError(
            f"tracklet index {args.tracklet_index} out of range ({len(tracklets)} tracklets)"
        )
    tracklet = tracklets[args.tracklet_index]
    if not 0 <= args.frame < len(tracklet):
        raise DataError(f"frame {args.frame} out of range ({len(tracklet)} frames)")
    spec = _grid_spec(args)
    from .tracklets import Tracklet as _T

    prefix = _T(tracklet.scene_id, tracklet.track_id, tracklet.frames[: args.frame + 1])
    result, model, _ = tracker.track_tracklet(
        prefix,
        tracker.GridSamplerFactory(spec),
        fusion.FusionConfig("early", "all_previous"),
        encoder,
        crop_scale=args.crop_scale,
        crop_margin=args.crop_margin,
        seed=args.seed,
        return_state=True,
    )
    if result.failed:
        raise NumericalError(f"tracking failed before frame {args.frame}: {result.failure_message}")
    from .sampling import exhaustive_grid
    from .tracklets import crop_canonical

    frame = tracklet.frames[args.frame]
    rng = np.random.default_rng((args.seed, tracklet.scene_id, tracklet.track_id, args.frame, 1))
    model_z = fusion.model_latent(model, encoder, rng)
    rows = []
    for off, box in exhaustive_grid(spec, frame.box):
        crop = crop_canonical(frame.cloud, box, scale=args.crop_scale, margin=args.crop_margin)
        cloud = resample(crop, encoder.n_points, rng)
        score = tracker.score_candidates(model_z, [cloud], encoder)[0]
        rows.append((off.t_x, off.t_y, off.alpha, score))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_x", "t_y", "alpha", "score"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} grid scores -> {args.out}")
    return EXIT_OK


def _evaluate_checkpoint(encoder, tracklets, fusion_cfg, sampler_factory, scorer, seed):
    results = [
        tracker.track_tracklet(t, sampler_factory, fusion_cfg, encoder, scorer=scorer, seed=seed)
        for t in tracklets
    ]
    return evaluate_run(results, tracklets)


def cmd_ablate(args):
    train_cfg, data_cfg = datasets.load_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    test_split = datasets.load_split(data_cfg, "test")
    spec = GridSpec()
    grid_factory = tracker.GridSamplerFactory(spec)
    rows = []

    if args.sweep in ("lambda", "k"):
        train_split = datasets.load_split(data_cfg, "train")
        val_split = datasets.load_split(data_cfg, "val")
        if args.sweep == "lambda":
            settings = [("lambda=0", {"lambda_comp": 0.0}),
                        ("lambda=1e-6", {"lambda_comp": 1e-6}),
                        ("lambda=inf", {"lambda_comp": math.inf})]
        else:
            settings = [(f"K={k}", {"latent_size": k}) for k in (32, 128)]
        for name, overrides in settings:
            cfg = TrainConfig(**{**_config_as_dict(train_cfg), **overrides})
            result = fit(train_split, val_split, cfg)
            report = _evaluate_checkpoint(
                result.encoder, test_split,
                fusion.FusionConfig("early", "all_previous"),
                grid_factory, "model", cfg.seed,
            )
            rows.append((name, report.success, report.precision))
    else:
        if not args.checkpoint:
            raise ConfigError(f"--checkpoint is required for the {args.sweep} sweep")
        encoder, _, _ = load_checkpoint(args.checkpoint)
        if args.sweep == "fusion":
            for scheme in fusion.SCHEMES:
                for mode in ("early", "late"):
                    cfg = fusion.FusionConfig(mode, scheme, "mean")
                    report = _evaluate_checkpoint(
                        encoder, test_split, cfg, grid_factory, "model", train_cfg.seed
                    )
                    rows.append((f"{mode}/{scheme}", report.success, report.precision))
            for agg in ("median", "max"):
                cfg = fusion.FusionConfig("late", "all_previous", agg)
                report = _evaluate_checkpoint(
                    encoder, test_split, cfg, grid_factory, "model", train_cfg.seed
                )
                rows.append((f"late/{agg}_pooling", report.success, report.precision))
        else:  # sampler
            fusion_cfg = fusion.FusionConfig("early", "all_previous")
            samplers = {
                "grid": grid_factory,
                "kalman": lambda box: KalmanSampler(box),
                "particle": lambda box: ParticleSampler(box),
                "gmm": lambda box: GmmSampler(box),
            }
            for name, factory in samplers.items():
                for scorer in ("model", "closest"):
                    report = _evaluate_checkpoint(
                        encoder, test_split, fusion_cfg, factory, scorer, train_cfg.seed
                    )
                    rows.append((f"{name}/{scorer}", report.success, report.precision))

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "success", "precision"])
        for name, success, precision in rows:
            writer.writerow([name, f"{success:.2f}", f"{precision:.2f}"])
    print(f"wrote {len(rows)} settings -> {args.out}")
    return EXIT_OK


def _config_as_dict(cfg):
    from dataclasses import asdict

    return asdict(cfg)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SctrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
