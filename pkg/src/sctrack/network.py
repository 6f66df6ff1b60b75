"""Siamese encoder, completion decoder, similarity metric, and losses.

The encoder maps an N-point cloud through three pointwise convolutions
(each followed by ReLU then batch norm) and a max pool over points to a
K-dimensional latent vector. The decoder expands a latent vector through a
hidden fully connected layer into M reconstructed 3D points.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import DimensionError, EmptyInputError, UndefinedSimilarityError
from .geometry import as_cloud


class Encoder:
    """Point-cloud encoder: conv stack [c1, c2, K] with ReLU+BN, then max pool.

    Defaults (K=128, N=2048, channels (64, 128)) carry 25,728 trainable
    parameters.
    """

    def __init__(self, latent_size=128, n_points=2048, channels=(64, 128), rng=None):
        rng = np.random.default_rng(rng)
        self.latent_size = int(latent_size)
        self.n_points = int(n_points)
        self.channels = tuple(int(c) for c in channels)
        widths = [3, *self.channels, self.latent_size]
        self.convs = [ad.Conv1x1Layer(widths[i], widths[i + 1], rng) for i in range(3)]
        self.norms = [ad.BatchNormLayer(w) for w in widths[1:]]

    def forward(self, x, train, capture=None):
        """Encode a (B, 3, N) tensor into (B, K) latents.

        `capture`, when given, collects ("preact"/"pooled_input", array)
        pairs so callers can measure distance from ReLU/max-pool
        non-smooth sets (used by gradient checks).
        """
        if x.values.ndim != 3 or x.values.shape[1] != 3:
            raise DimensionError(f"encoder input must be (B, 3, N), got {x.shape}")
        if x.values.shape[2] != self.n_points:
            raise DimensionError(
                f"encoder expects {self.n_points} points per cloud, got {x.values.shape[2]}"
            )
        h = x
        for conv, norm in zip(self.convs, self.norms):
            pre = conv(h)
            if capture is not None:
                capture.append(("preact", pre.values))
            h = norm(ad.relu(pre), train)
        if capture is not None:
            capture.append(("pooled_input", h.values))
        pooled, _ = ad.max_pool_points(h)
        return pooled

    def embed(self, clouds):
        """Inference path: stack of clouds (B, N, 3) -> latent array (B, K).

        Uses running batch-norm statistics, so results are independent of
        how clouds are batched.
        """
        clouds = np.asarray(clouds, dtype=np.float64)
        if clouds.ndim == 2:
            clouds = clouds[None]
        with ad.no_grad():
            out = self.forward(ad.Tensor(clouds.transpose(0, 2, 1)), train=False)
        return out.values

    def embed_one(self, cloud):
        return self.embed(np.asarray(cloud)[None])[0]

    def parameters(self):
        params = []
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms), start=1):
            params += [(f"encoder.conv{i}.{n}", t) for n, t in conv.parameters()]
            params += [(f"encoder.bn{i}.{n}", t) for n, t in norm.parameters()]
        return params

    def num_parameters(self):
        return sum(t.values.size for _, t in self.parameters())

    def state_arrays(self):
        """All persistent arrays (parameters plus running statistics) by name."""
        arrays = dict(self.parameters())
        for i, norm in enumerate(self.norms, start=1):
            arrays[f"encoder.bn{i}.running_mean"] = norm.running_mean
            arrays[f"encoder.bn{i}.running_var"] = norm.running_var
        return arrays


class Decoder:
    """Latent-to-cloud decoder: K -> hidden -> M*3, reshaped row-major to (M, 3)."""

    def __init__(self, latent_size=128, m_points=2048, hidden_size=1024, rng=None):
        rng = np.random.default_rng(rng)
        self.latent_size = int(latent_size)
        self.m_points = int(m_points)
        self.hidden_size = int(hidden_size)
        self.fc1 = ad.LinearLayer(self.latent_size, self.hidden_size, rng)
        self.fc2 = ad.LinearLayer(self.hidden_size, 3 * self.m_points, rng)

    def forward(self, z, capture=None):
        """Decode latents (B, K) into points (B, M, 3)."""
        if z.values.ndim != 2 or z.values.shape[1] != self.latent_size:
            raise DimensionError(
                f"decoder expects latents of size {self.latent_size}, got {z.shape}"
            )
        pre = self.fc1(z)
        if capture is not None:
            capture.append(("preact", pre.values))
        flat = self.fc2(ad.relu(pre))
        return ad.reshape(flat, (z.values.shape[0], self.m_points, 3))

    def decode(self, z):
        """Inference path: one latent (K,) -> cloud (M, 3)."""
        z = np.asarray(z, dtype=np.float64)
        with ad.no_grad():
            out = self.forward(ad.Tensor(z[None]))
        return out.values[0]

    def parameters(self):
        return [
            (f"decoder.fc1.{n}", t) for n, t in self.fc1.parameters()
        ] + [(f"decoder.fc2.{n}", t) for n, t in self.fc2.parameters()]

    def num_parameters(self):
        return sum(t.values.size for _, t in self.parameters())

    def state_arrays(self):
        return dict(self.parameters())


def cosine_similarity(z, z_hat):
    """Cosine of the angle between two latent vectors, in [-1, 1]."""
    z = np.asarray(z, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    nz = np.linalg.norm(z)
    nh = np.linalg.norm(z_hat)
    if nz == 0.0 or nh == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(z, z_hat) / (nz * nh), -1.0, 1.0))


def rho(d):
    """Soft target for the tracking loss: a unit Gaussian of the pose distance."""
    if d < 0.0:
        raise ValueError("distance must be >= 0")
    return math.exp(-0.5 * d * d)


def tracking_loss(similarities, targets):
    """Mean squared error between similarity scores and their rho targets."""
    similarities = np.asarray(similarities, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if similarities.shape != targets.shape:
        raise DimensionError(
            f"tracking_loss: {similarities.shape} scores vs {targets.shape} targets"
        )
    if similarities.size == 0:
        raise EmptyInputError("tracking_loss needs at least one candidate")
    return float(((similarities - targets) ** 2).mean())


def chamfer(a, b):
    """Symmetric Chamfer distance: summed squared nearest-neighbor distances."""
    a = as_cloud(a)
    b = as_cloud(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyInputError("chamfer distance of an empty cloud is undefined")
    d2_ab, _ = kernels.nearest_neighbors(a, b)
    d2_ba, _ = kernels.nearest_neighbors(b, a)
    return float(d2_ab.sum() + d2_ba.sum())


def total_loss(l_tr, l_comp, lambda_comp):
    """Joint objective: tracking loss plus lambda_comp times the completion loss."""
    if lambda_comp < 0.0:
        raise ValueError("lambda_comp must be >= 0")
    return l_tr + lambda_comp * l_comp


def completion_metric(reconstruction, target):
    """Mean un-squared distance from each target point to its nearest
    reconstructed point, in meters."""
    reconstruction = as_cloud(reconstruction)
    target = as_cloud(target)
    if reconstruction.shape[0] == 0 or target.shape[0] == 0:
        raise EmptyInputError("completion metric of an empty cloud is undefined")
    d2, _ = kernels.nearest_neighbors(target, reconstruction)
    return float(np.sqrt(d2).mean())
