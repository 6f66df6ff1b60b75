"""Self-describing weight checkpoints.

Layout (documented in docs/file_formats.md): a NumPy ``.npz`` archive whose
entries are the named little-endian float64 parameter and running-statistic
arrays of the encoder and decoder, plus a ``__meta__`` JSON string carrying
the format version, architecture sizes, RNG seed, and optimizer step count.
"""
from __future__ import annotations

import json

import numpy as np

from .errors import CheckpointError
from .network import Decoder, Encoder

FORMAT_VERSION = 1


def save_checkpoint(path, encoder, decoder, *, seed=0, step_count=0, extra=None):
    """Write encoder+decoder weights and metadata to `path` (npz)."""
    meta = {
        "format_version": FORMAT_VERSION,
        "latent_size": encoder.latent_size,
        "n_points": encoder.n_points,
        "channels": list(encoder.channels),
        "m_points": decoder.m_points,
        "hidden_size": decoder.hidden_size,
        "seed": int(seed),
        "step_count": int(step_count),
    }
    if extra:
        meta["extra"] = extra
    arrays = {}
    for name, value in {**encoder.state_arrays(), **decoder.state_arrays()}.items():
        data = value.values if hasattr(value, "values") else value
        arrays[name] = np.ascontiguousarray(data, dtype="<f8")
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Rebuild (encoder, decoder, meta) from a checkpoint written by save_checkpoint."""
    try:
        archive = np.load(path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in archive:
        raise CheckpointError(f"checkpoint {path} has no metadata entry")
    meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}, expected {FORMAT_VERSION}"
        )
    encoder = Encoder(
        latent_size=meta["latent_size"],
        n_points=meta["n_points"],
        channels=tuple(meta["channels"]),
    )
    decoder = Decoder(
        latent_size=meta["latent_size"],
        m_points=meta["m_points"],
        hidden_size=meta["hidden_size"],
    )
    targets = {**encoder.state_arrays(), **decoder.state_arrays()}
    for name, value in targets.items():
        if name not in archive:
            raise CheckpointError(f"checkpoint {path} is missing array {name!r}")
        data = np.asarray(archive[name], dtype=np.float64)
        dest = value.values if hasattr(value, "values") else value
        if dest.shape != data.shape:
            raise CheckpointError(
                f"checkpoint array {name!r} has shape {data.shape}, expected {dest.shape}"
            )
        dest[...] = data
    return encoder, decoder, meta
