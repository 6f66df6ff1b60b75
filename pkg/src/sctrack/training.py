"""Joint optimization of the tracking and completion losses.

A batch is one tracklet frame's C Gaussian-offset candidates sharing that
tracklet's model shape. The forward pass encodes candidates and model
together, regresses cosine similarities onto rho(pose distance) targets,
auto-encodes the model shape through the decoder, and applies one Adam step
on the weighted sum of both losses. Validation-loss plateaus drive the
learning-rate scheduler; the best-validation weights are kept.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .errors import ConfigError, NumericalError
from .geometry import apply_offset, resample
from .network import Decoder, Encoder, chamfer, cosine_similarity, total_loss, tracking_loss
from .sampling import GaussianSpec, sample_training_offsets
from .tracklets import build_model_shape, crop_canonical

# numeric rng-stream tags (np.random seed sequences take integers only)
_RNG_EPOCH, _RNG_BATCH, _RNG_VAL, _RNG_PRETRAIN = 1, 2, 3, 4


@dataclass
class TrainConfig:
    latent_size: int = 128
    n_points: int = 2048
    m_points: int = 2048
    hidden_size: int = 1024
    channels: tuple = (64, 128)
    candidates: int = 64
    lambda_comp: float = 1e-6  # 0 disables completion; inf trains completion only
    sigma_t: float = 1.0
    sigma_alpha: float = 5.0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 3
    lr_ratio: float = 0.1
    epochs: int = 20
    pretrain_epochs: int = 0
    pretrain_shapes: int = 50
    crop_scale: float = 1.25
    crop_margin: float | None = None  # set to use a fixed margin instead of scaling
    seed: int = 0

    def __post_init__(self):
        if self.lambda_comp < 0:
            raise ConfigError("lambda_comp must be >= 0 (or inf for completion-only)")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.candidates < 1:
            raise ConfigError("candidates must be >= 1")
        self.channels = tuple(self.channels)

    @property
    def completion_only(self):
        return math.isinf(self.lambda_comp)

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        if "lambda_comp" in mapping and str(mapping["lambda_comp"]).lower() in ("inf", ".inf"):
            mapping = {**mapping, "lambda_comp": math.inf}
        return cls(**mapping)


@dataclass
class FrameBatch:
    candidates: np.ndarray  # (C, N, 3) canonicalized, resampled
    targets: np.ndarray  # (C,) rho values
    model_cloud: np.ndarray  # (N, 3) resampled model shape


def build_frame_batch(tracklet, frame_index, spec, n_points, rng, *,
                      model_shape=None, crop_scale=1.25, crop_margin=None):
    """Candidate clouds, rho targets, and the model cloud for one frame.

    Candidates are boxes offset from the ground truth by Gaussian draws,
    each cropped with the inflated box and canonicalized to its own frame.
    Targets come from the sampled offsets directly, never re-derived from
    boxes (avoids angle-wrap ambiguity).
    """
    frame = tracklet.frames[frame_index]
    offsets = sample_training_offsets(spec, rng)
    clouds = []
    targets = []
    for off in offsets:
        box = apply_offset(frame.box, off)
        crop = crop_canonical(frame.cloud, box, scale=crop_scale, margin=crop_margin)
        clouds.append(resample(crop, n_points, rng))
        targets.append(math.exp(-0.5 * off.magnitude() ** 2))
    if model_shape is None:
        model_shape = build_model_shape(tracklet, scale=crop_scale, margin=crop_margin)
    model_cloud = resample(model_shape, n_points, rng)
    return FrameBatch(
        candidates=np.stack(clouds),
        targets=np.array(targets),
        model_cloud=model_cloud,
    )


def train_step(batch, encoder, decoder, lambda_comp, optimizer, *, completion_only=False):
    """One optimization step on a frame batch; returns (l_tr, l_comp, l_total).

    The model shape is encoded in the same train-mode batch as the
    candidates; it alone is auto-encoded for the completion term. A
    non-finite loss aborts the step with NumericalError before any update.
    """
    optimizer.zero_grad()
    if completion_only:
        x = ad.Tensor(batch.model_cloud.T[None])
        z = encoder.forward(x, train=True)
        decoded = ad.reshape(decoder.forward(z), (decoder.m_points, 3))
        loss = ad.chamfer_loss(decoded, batch.model_cloud)
        l_tr = math.nan
        l_comp = loss.item()
        l_total = l_comp
    else:
        c = len(batch.candidates)
        stacked = np.concatenate([batch.candidates, batch.model_cloud[None]], axis=0)
        x = ad.Tensor(stacked.transpose(0, 2, 1))
        z = encoder.forward(x, train=True)
        sims = ad.cosine_rows(ad.take_rows(z, 0, c), ad.take_row(z, c))
        tr = ad.mse(sims, batch.targets)
        if lambda_comp > 0.0:
            decoded = ad.reshape(
                decoder.forward(ad.take_rows(z, c, c + 1)), (decoder.m_points, 3)
            )
            comp = ad.chamfer_loss(decoded, batch.model_cloud)
            loss = tr + comp * lambda_comp
            l_comp = comp.item()
        else:
            loss = tr
            l_comp = math.nan
        l_tr = tr.item()
        l_total = loss.item()
    if not math.isfinite(l_total):
        raise NumericalError(f"non-finite training loss {l_total}")
    loss.backward()
    optimizer.step()
    return l_tr, l_comp, l_total


def _stream_losses(tracklets, encoder, decoder, config, seed_tag):
    """Deterministic total-loss evaluation over every (tracklet, frame) pair.

    The sampling rng is fixed per (tracklet, frame), so plateau detection
    sees a noise-free validation series.
    """
    spec = GaussianSpec(config.sigma_t, config.sigma_alpha, config.candidates)
    lam = 0.0 if config.completion_only else config.lambda_comp
    totals = []
    for tracklet in tracklets:
        model_shape = build_model_shape(
            tracklet, scale=config.crop_scale, margin=config.crop_margin
        )
        for frame_index in range(len(tracklet)):
            rng = np.random.default_rng(
                (config.seed, seed_tag, tracklet.scene_id, tracklet.track_id, frame_index)
            )
            batch = build_frame_batch(
                tracklet, frame_index, spec, config.n_points, rng,
                model_shape=model_shape, crop_scale=config.crop_scale,
                crop_margin=config.crop_margin,
            )
            stacked = np.concatenate([batch.candidates, batch.model_cloud[None]])
            latents = encoder.embed(stacked)
            sims = [
                cosine_similarity(latents[i], latents[-1])
                for i in range(len(batch.candidates))
            ]
            l_tr = tracking_loss(sims, batch.targets)
            if config.completion_only or lam > 0.0:
                decoded = decoder.decode(latents[-1])
                l_comp = chamfer(decoded, batch.model_cloud)
            else:
                l_comp = 0.0
            totals.append(l_comp if config.completion_only else total_loss(l_tr, l_comp, lam))
    return float(np.mean(totals))


def _mean_or_nan(values):
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


@dataclass
class FitResult:
    encoder: Encoder
    decoder: Decoder
    history: list = field(default_factory=list)
    best_val_loss: float = math.inf
    step_count: int = 0


def _snapshot(encoder, decoder):
    return {
        name: (arr.values if hasattr(arr, "values") else arr).copy()
        for name, arr in {**encoder.state_arrays(), **decoder.state_arrays()}.items()
    }


def _restore(encoder, decoder, snapshot):
    for name, arr in {**encoder.state_arrays(), **decoder.state_arrays()}.items():
        dest = arr.values if hasattr(arr, "values") else arr
        dest[...] = snapshot[name]


def fit(train_tracklets, val_tracklets, config, *, encoder=None, decoder=None,
        log_path=None, checkpoint_path=None):
    """Train over shuffled (tracklet, frame) pairs with plateau-driven LR decay.

    Returns a FitResult whose networks hold the best-validation weights.
    """
    if not train_tracklets:
        raise ConfigError("fit: empty training split")
    if not val_tracklets:
        raise ConfigError("fit: empty validation split")
    if encoder is None:
        encoder = Encoder(config.latent_size, config.n_points, config.channels,
                          rng=config.seed)
    if decoder is None:
        decoder = Decoder(config.latent_size, config.m_points, config.hidden_size,
                          rng=config.seed + 1)
    optimizer = ad.Adam(
        encoder.parameters() + decoder.parameters(),
        lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
        eps=config.adam_eps,
    )
    scheduler = ad.PlateauScheduler(config.learning_rate, config.patience, config.lr_ratio)
    spec = GaussianSpec(config.sigma_t, config.sigma_alpha, config.candidates)
    pairs = [
        (t, i) for t in train_tracklets for i in range(len(t))
    ]
    model_shapes = {
        id(t): build_model_shape(t, scale=config.crop_scale, margin=config.crop_margin)
        for t in train_tracklets
    }
    result = FitResult(encoder=encoder, decoder=decoder)
    best = _snapshot(encoder, decoder)
    best_step = 0

    for epoch in range(config.epochs):
        order = np.random.default_rng((config.seed, _RNG_EPOCH, epoch)).permutation(len(pairs))
        tr_losses, comp_losses, totals = [], [], []
        for pair_index in order:
            tracklet, frame_index = pairs[pair_index]
            rng = np.random.default_rng(
                (config.seed, _RNG_BATCH, epoch, tracklet.scene_id, tracklet.track_id, frame_index)
            )
            batch = build_frame_batch(
                tracklet, frame_index, spec, config.n_points, rng,
                model_shape=model_shapes[id(tracklet)],
                crop_scale=config.crop_scale, crop_margin=config.crop_margin,
            )
            l_tr, l_comp, l_total = train_step(
                batch, encoder, decoder,
                0.0 if config.completion_only else config.lambda_comp,
                optimizer, completion_only=config.completion_only,
            )
            tr_losses.append(l_tr)
            comp_losses.append(l_comp)
            totals.append(l_total)
        val_loss = _stream_losses(val_tracklets, encoder, decoder, config, _RNG_VAL)
        lr = scheduler.step(val_loss)
        optimizer.lr = lr
        result.history.append(
            {
                "epoch": epoch,
                "train_tracking": _mean_or_nan(tr_losses),
                "train_completion": _mean_or_nan(comp_losses),
                "train_total": float(np.mean(totals)),
                "val_total": val_loss,
                "lr": lr,
            }
        )
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            best = _snapshot(encoder, decoder)
            best_step = optimizer.step_count

    _restore(encoder, decoder, best)
    result.step_count = best_step if config.epochs > 0 else 0
    if log_path is not None:
        write_training_log(log_path, result.history)
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, encoder, decoder,
            seed=config.seed, step_count=result.step_count,
        )
    return result


def write_training_log(path, history):
    columns = ["epoch", "train_tracking", "train_completion", "train_total", "val_total", "lr"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in columns})


def pretrain_completion(shapes, config, *, encoder=None, decoder=None):
    """Minimize the Chamfer reconstruction loss alone over canonical shapes.

    Returns (encoder, decoder, per-epoch mean losses); the result is a valid
    starting point for fit().
    """
    if not shapes:
        raise ConfigError("pretrain_completion: empty shape dataset")
    if encoder is None:
        encoder = Encoder(config.latent_size, config.n_points, config.channels,
                          rng=config.seed)
    if decoder is None:
        decoder = Decoder(config.latent_size, config.m_points, config.hidden_size,
                          rng=config.seed + 1)
    optimizer = ad.Adam(
        encoder.parameters() + decoder.parameters(),
        lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
        eps=config.adam_eps,
    )
    losses = []
    for epoch in range(config.pretrain_epochs):
        rng = np.random.default_rng((config.seed, _RNG_PRETRAIN, epoch))
        order = rng.permutation(len(shapes))
        epoch_losses = []
        for shape_index in order:
            cloud = resample(shapes[shape_index], config.n_points, rng)
            batch = FrameBatch(
                candidates=np.zeros((0, config.n_points, 3)),
                targets=np.zeros(0),
                model_cloud=cloud,
            )
            _, l_comp, _ = train_step(
                batch, encoder, decoder, 0.0, optimizer, completion_only=True
            )
            epoch_losses.append(l_comp)
        losses.append(float(np.mean(epoch_losses)))
    return encoder, decoder, losses
