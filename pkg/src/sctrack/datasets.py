"""Config-driven dataset resolution: synthetic generation or KITTI extraction.

One YAML file describes both the data and the training run; commands read
the sections they need. See docs/config_reference.md for every key.
"""
from __future__ import annotations

import os

import yaml

from .errors import ConfigError
from .kitti import extract_tracklets
from .synthetic import SyntheticConfig, SyntheticDatasetConfig, generate_synthetic_dataset
from .training import TrainConfig

DATASET_ROOT_ENV = "SCTRACK_DATASET_ROOT"


def load_config(path):
    """Parse the YAML config into (TrainConfig, data section dict)."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    unknown = set(raw) - {"training", "data"}
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {sorted(unknown)}")
    train_cfg = TrainConfig.from_mapping(raw.get("training") or {})
    data_cfg = raw.get("data") or {}
    if "kind" not in data_cfg:
        raise ConfigError("config is missing required key 'data.kind'")
    return train_cfg, data_cfg


def load_split(data_cfg, split):
    """Tracklets for one split ("train" | "val" | "test") per the data section."""
    kind = data_cfg.get("kind")
    if kind == "synthetic":
        synth = data_cfg.get("synthetic") or {}
        known = {"n_train", "n_val", "n_test", "seed", "tracklet"}
        unknown = set(synth) - known
        if unknown:
            raise ConfigError(f"unknown data.synthetic keys: {sorted(unknown)}")
        try:
            tracklet_cfg = SyntheticConfig(**(synth.get("tracklet") or {}))
        except TypeError as exc:
            raise ConfigError(f"invalid data.synthetic.tracklet keys: {exc}") from exc
        dataset_cfg = SyntheticDatasetConfig(
            n_train=synth.get("n_train", 10),
            n_val=synth.get("n_val", 3),
            n_test=synth.get("n_test", 5),
            seed=synth.get("seed", 0),
            tracklet=tracklet_cfg,
        )
        splits = generate_synthetic_dataset(dataset_cfg)
        if split not in splits:
            raise ConfigError(f"unknown split {split!r}")
        return splits[split]
    if kind == "kitti":
        root = os.environ.get(DATASET_ROOT_ENV) or data_cfg.get("root")
        if not root:
            raise ConfigError(
                "config is missing required key 'data.root' "
                f"(or set ${DATASET_ROOT_ENV}) for kind: kitti"
            )
        if not os.path.isdir(root):
            raise ConfigError(f"data.root {root!r} is not a directory")
        return extract_tracklets(
            root,
            split,
            region_radius=data_cfg.get("region_radius", 15.0),
        )
    raise ConfigError(f"unknown data.kind {kind!r}; expected synthetic or kitti")
