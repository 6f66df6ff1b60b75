"""Model-shape maintenance for the tracked object.

Early fusion keeps canonicalized point clouds and concatenates them before
encoding; late fusion keeps latent vectors and aggregates them elementwise.
Both support four temporal schemes: first shape only, previous shape only,
first and previous, or all previous shapes.

Memory: late-fusion mean and max keep an O(K) running aggregate; median
stores every latent (the elementwise median needs the full history).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import resample

SCHEMES = ("first_only", "previous_only", "first_and_previous", "all_previous")
AGGREGATORS = ("mean", "median", "max")


@dataclass
class FusionConfig:
    mode: str = "early"  # early | late
    scheme: str = "all_previous"
    aggregator: str = "mean"  # late mode only

    def __post_init__(self):
        if self.mode not in ("early", "late"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown fusion scheme {self.scheme!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")


@dataclass
class ModelState:
    config: FusionConfig
    clouds: list = field(default_factory=list)  # early store
    latents: list = field(default_factory=list)  # late store (median, schemes)
    running_sum: np.ndarray | None = None  # late mean
    running_max: np.ndarray | None = None  # late max
    count: int = 0


def _encode_for_late(cloud, encoder, rng):
    return encoder.embed_one(resample(cloud, encoder.n_points, rng))


def init_model(first_shape, config, encoder=None, rng=None):
    """Start the model from the canonicalized shape inside the first box."""
    state = ModelState(config=config)
    first_shape = np.asarray(first_shape, dtype=np.float64).reshape(-1, 3)
    if config.mode == "early":
        state.clouds = [first_shape]
    else:
        z = _encode_for_late(first_shape, encoder, rng)
        _late_insert(state, z, first=True)
    state.count = 1
    return state


def update_model(state, chosen_shape, encoder=None, rng=None):
    """Fold the selected candidate's shape into the model, per the scheme."""
    config = state.config
    if config.scheme == "first_only":
        state.count += 1
        return state
    chosen_shape = np.asarray(chosen_shape, dtype=np.float64).reshape(-1, 3)
    if config.mode == "early":
        if config.scheme == "previous_only":
            state.clouds = [chosen_shape]
        elif config.scheme == "first_and_previous":
            state.clouds = [state.clouds[0], chosen_shape]
        else:  # all_previous
            state.clouds.append(chosen_shape)
    else:
        z = _encode_for_late(chosen_shape, encoder, rng)
        _late_insert(state, z, first=False)
    state.count += 1
    return state


def _late_insert(state, z, first):
    config = state.config
    if config.scheme == "previous_only":
        state.latents = [z]
    elif config.scheme == "first_and_previous":
        state.latents = [z] if first else [state.latents[0], z]
    elif config.scheme == "first_only":
        state.latents = [z]
    elif config.aggregator == "median":
        state.latents.append(z)
    else:
        state.running_sum = z.copy() if state.running_sum is None else state.running_sum + z
        state.running_max = z.copy() if state.running_max is None else np.maximum(
            state.running_max, z
        )
        state.latents.append(None)  # count only; values not needed


def model_latent(state, encoder, rng):
    """Current model latent: concatenate-and-encode (early) or aggregate (late)."""
    config = state.config
    if config.mode == "early":
        merged = (
            state.clouds[0]
            if len(state.clouds) == 1
            else np.concatenate(state.clouds, axis=0)
        )
        return encoder.embed_one(resample(merged, encoder.n_points, rng))
    if config.scheme == "all_previous" and config.aggregator != "median":
        n = len(state.latents)
        if config.aggregator == "max":
            return state.running_max.copy()
        return state.running_sum / n
    stack = np.stack(state.latents)
    if config.aggregator == "max":
        return stack.max(axis=0)
    if config.aggregator == "median":
        return np.median(stack, axis=0)
    return stack.mean(axis=0)


def model_cloud(state):
    """Concatenated early-fusion store (for completion/reconstruction output)."""
    if state.config.mode != "early":
        raise ValueError("model_cloud is only defined for early fusion")
    return (
        state.clouds[0]
        if len(state.clouds) == 1
        else np.concatenate(state.clouds, axis=0)
    )
