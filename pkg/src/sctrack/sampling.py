"""Candidate-offset generation around a reference box.

Covers the evaluation-time exhaustive grid, training-time Gaussian draws,
and the realistic search spaces (constant-velocity Kalman filter, particle
filter with systematic resampling, Gaussian-mixture motion model), plus the
distance-to-ground-truth oracle scorer that upper-bounds any sampler.

Samplers emit (PoseOffset, Box3D) pairs with the reference box's size
unchanged (rigid-object assumption). Only the exhaustive grid may be
centered on ground truth, and only as an explicit evaluation approximation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .geometry import Box3D, PoseOffset, apply_offset, pose_distance, wrap_angle

logger = logging.getLogger(__name__)


@dataclass
class GridSpec:
    """Uniform search grid: +-range_t meters in x/y, +-range_alpha degrees in yaw."""

    range_t: float = 3.0
    step_t: float = 1.0
    range_alpha: float = 10.0
    step_alpha: float = 10.0

    def __post_init__(self):
        if self.step_t <= 0.0 or self.step_alpha <= 0.0:
            raise ValueError("grid steps must be > 0")
        if self.range_t < 0.0 or self.range_alpha < 0.0:
            raise ValueError("grid ranges must be >= 0")

    def _axis(self, extent, step):
        k = int(math.floor(extent / step + 1e-9))
        return [i * step for i in range(-k, k + 1)]

    def offsets(self):
        """Full Cartesian product, t_x major, then t_y, then alpha."""
        ts = self._axis(self.range_t, self.step_t)
        alphas = self._axis(self.range_alpha, self.step_alpha)
        return [
            PoseOffset(tx, ty, a) for tx in ts for ty in ts for a in alphas
        ]

    def size(self):
        k_t = 2 * int(math.floor(self.range_t / self.step_t + 1e-9)) + 1
        k_a = 2 * int(math.floor(self.range_alpha / self.step_alpha + 1e-9)) + 1
        return k_t * k_t * k_a


def exhaustive_grid(spec, reference):
    """All grid offsets applied around the reference box, in deterministic order."""
    return [(off, apply_offset(reference, off)) for off in spec.offsets()]


@dataclass
class GaussianSpec:
    """Diagonal Gaussian over (t_x, t_y, alpha): N(0, diag(s_t^2, s_t^2, s_a^2))."""

    sigma_t: float = 1.0
    sigma_alpha: float = 5.0
    count: int = 64

    def __post_init__(self):
        if self.sigma_t <= 0.0 or self.sigma_alpha <= 0.0:
            raise ValueError("sigmas must be > 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def sample_training_offsets(spec, rng):
    """Independent Gaussian offset draws for training-time candidates."""
    draws = rng.normal(size=(spec.count, 3)) * [spec.sigma_t, spec.sigma_t, spec.sigma_alpha]
    return [PoseOffset(*row) for row in draws]


def closest_oracle_score(candidate, ground_truth):
    """Negated pose distance to ground truth: the best possible scorer."""
    return -pose_distance(candidate, ground_truth)


def _sample_gaussian(mean, cov, n, rng):
    """Draw from N(mean, cov) tolerating a positive-semidefinite covariance."""
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = -1e-9 * max(1.0, float(eigvals.max(initial=1.0)))
    if eigvals.min() < floor:
        raise NumericalError(
            f"covariance lost positive-definiteness (min eigenvalue {eigvals.min():.3e})"
        )
    scale = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    return mean + rng.normal(size=(n, len(mean))) @ scale.T


class KalmanSampler:
    """Constant-velocity filter over (x, y) with a random walk on yaw.

    State is (x, y, yaw, vx, vy). Each frame: predict, emit the predicted
    mean plus draws from the predicted pose marginal, then update with the
    box the tracker selected.
    """

    wants_ground_truth = False

    def __init__(
        self,
        init_box,
        n_candidates=147,
        process_noise=(0.1, 0.1, math.radians(2.0), 0.05, 0.05),
        measurement_noise=(0.2, 0.2, math.radians(3.0)),
        init_spread=(0.5, 0.5, math.radians(5.0), 1.0, 1.0),
    ):
        self.size = init_box.size.copy()
        self.n_candidates = int(n_candidates)
        self.state = np.array(
            [init_box.center[0], init_box.center[1], init_box.yaw, 0.0, 0.0]
        )
        self.z_height = float(init_box.center[2])
        self.cov = np.diag(np.square(init_spread)).astype(float)
        self.q = np.diag(np.square(process_noise)).astype(float)
        self.r = np.diag(np.square(measurement_noise)).astype(float)
        self.f = np.eye(5)
        self.f[0, 3] = 1.0
        self.f[1, 4] = 1.0
        self.h = np.zeros((3, 5))
        self.h[0, 0] = self.h[1, 1] = self.h[2, 2] = 1.0
        self._predicted = None

    def _box_from_pose(self, pose):
        return Box3D(
            np.array([pose[0], pose[1], self.z_height]),
            self.size.copy(),
            wrap_angle(pose[2]),
        )

    def propose(self, previous_box, ground_truth, rng):
        self._predicted = (self.f @ self.state, self.f @ self.cov @ self.f.T + self.q)
        mean, cov = self._predicted
        poses = _sample_gaussian(mean[:3], cov[:3, :3], self.n_candidates - 1, rng)
        boxes = [self._box_from_pose(mean[:3])]
        boxes += [self._box_from_pose(p) for p in poses]
        offsets = [
            PoseOffset(
                b.center[0] - previous_box.center[0],
                b.center[1] - previous_box.center[1],
                math.degrees(wrap_angle(b.yaw - previous_box.yaw)),
            )
            for b in boxes
        ]
        return list(zip(offsets, boxes))

    def observe(self, selected_box, scores=None):
        mean, cov = self._predicted
        z = np.array([selected_box.center[0], selected_box.center[1], selected_box.yaw])
        innovation = z - self.h @ mean
        innovation[2] = wrap_angle(innovation[2])
        s = self.h @ cov @ self.h.T + self.r
        gain = cov @ self.h.T @ np.linalg.inv(s)
        self.state = mean + gain @ innovation
        self.state[2] = wrap_angle(self.state[2])
        joseph = np.eye(5) - gain @ self.h
        self.cov = joseph @ cov @ joseph.T + gain @ self.r @ gain.T

    def predicted_mean_box(self):
        mean = self.f @ self.state
        return self._box_from_pose(mean[:3])


class ParticleSampler:
    """Bootstrap particle filter over (x, y, yaw) with similarity-score weights.

    Each frame: systematic resampling by weight, Gaussian jitter, emit every
    particle as a candidate; afterwards weights are refreshed from the
    similarity scores (shifted to be non-negative and normalized).
    """

    wants_ground_truth = False

    def __init__(
        self,
        init_box,
        n_particles=147,
        diffusion=(0.1, 0.1, math.radians(2.0)),
        init_spread=(0.2, 0.2, math.radians(2.0)),
    ):
        self.size = init_box.size.copy()
        self.z_height = float(init_box.center[2])
        self.n = int(n_particles)
        self.diffusion = np.asarray(diffusion, dtype=float)
        self.init_spread = np.asarray(init_spread, dtype=float)
        self.center0 = np.array([init_box.center[0], init_box.center[1], init_box.yaw])
        self.particles = None
        self.weights = np.full(self.n, 1.0 / self.n)

    def _init_particles(self, rng):
        noise = rng.normal(size=(self.n, 3)) * self.init_spread
        self.particles = self.center0 + noise

    @staticmethod
    def systematic_resample(weights, rng):
        """Systematic (low-variance) resampling; returns selected indices."""
        n = len(weights)
        positions = (rng.uniform() + np.arange(n)) / n
        cumulative = np.cumsum(weights)
        cumulative[-1] = 1.0
        return np.searchsorted(cumulative, positions)

    def propose(self, previous_box, ground_truth, rng):
        if self.particles is None:
            self._init_particles(rng)
        else:
            idx = self.systematic_resample(self.weights, rng)
            jitter = rng.normal(size=(self.n, 3)) * self.diffusion
            self.particles = self.particles[idx] + jitter
            self.weights = np.full(self.n, 1.0 / self.n)
        out = []
        for pose in self.particles:
            box = Box3D(
                np.array([pose[0], pose[1], self.z_height]),
                self.size.copy(),
                wrap_angle(pose[2]),
            )
            off = PoseOffset(
                box.center[0] - previous_box.center[0],
                box.center[1] - previous_box.center[1],
                math.degrees(wrap_angle(box.yaw - previous_box.yaw)),
            )
            out.append((off, box))
        return out

    def observe(self, selected_box, scores=None):
        if scores is None:
            return
        scores = np.asarray(scores, dtype=float)
        shifted = scores - scores.min()
        total = shifted.sum()
        if total <= 0.0:
            logger.warning("particle filter: all scores equal, resetting to uniform weights")
            self.weights = np.full(self.n, 1.0 / self.n)
            return
        self.weights = shifted / total


class GmmSampler:
    """Gaussian-mixture motion model over recent frame-to-frame offsets.

    Fits a diagonal-covariance mixture (EM) to a sliding window of the
    offsets between consecutive selected boxes, then samples candidate
    offsets around the previous box. Until enough history exists, falls
    back to a zero-mean Gaussian.
    """

    wants_ground_truth = False

    def __init__(self, init_box, k=25, n_candidates=147, window=10,
                 fallback_sigma=(0.5, 0.5, 3.0)):
        self.size = init_box.size.copy()
        self.k = int(k)
        self.n_candidates = int(n_candidates)
        self.window = int(window)
        self.fallback_sigma = np.asarray(fallback_sigma, dtype=float)
        self.history = []
        self._previous = None

    def propose(self, previous_box, ground_truth, rng):
        data = np.array(self.history[-self.window:]) if self.history else np.zeros((0, 3))
        if data.shape[0] >= 2:
            k = min(self.k, data.shape[0])
            weights, means, variances, _ = fit_diagonal_gmm(data, k, rng)
            comp = rng.choice(k, size=self.n_candidates, p=weights)
            draws = means[comp] + rng.normal(size=(self.n_candidates, 3)) * np.sqrt(
                variances[comp]
            )
        else:
            draws = rng.normal(size=(self.n_candidates, 3)) * self.fallback_sigma
        draws[0] = 0.0  # keep the no-motion hypothesis in the set
        out = []
        for row in draws:
            off = PoseOffset(*row)
            out.append((off, apply_offset(previous_box, off)))
        self._previous = previous_box
        return out

    def observe(self, selected_box, scores=None):
        if self._previous is None:
            return
        prev = self._previous
        dx = selected_box.center[0] - prev.center[0]
        dy = selected_box.center[1] - prev.center[1]
        c, s = math.cos(prev.yaw), math.sin(prev.yaw)
        local = (c * dx + s * dy, -s * dx + c * dy)
        dalpha = math.degrees(wrap_angle(selected_box.yaw - prev.yaw))
        self.history.append((local[0], local[1], dalpha))


def fit_diagonal_gmm(data, k, rng, n_iter=50, var_floor=1e-6):
    """EM for a k-component diagonal-covariance Gaussian mixture.

    Degenerate components (vanishing responsibility) are re-seeded on a
    random data point. Returns (weights, means, variances, log-likelihoods
    per iteration); the log-likelihood series is non-decreasing.
    """
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    means = data[rng.choice(n, size=k, replace=n < k)].astype(float)
    means = means + rng.normal(size=means.shape) * 1e-3
    variances = np.tile(data.var(axis=0) + var_floor, (k, 1))
    weights = np.full(k, 1.0 / k)
    log_likelihoods = []
    for _ in range(n_iter):
        log_prob = -0.5 * (
            ((data[:, None, :] - means[None]) ** 2 / variances[None]).sum(axis=2)
            + np.log(variances).sum(axis=1)[None]
            + d * math.log(2.0 * math.pi)
        ) + np.log(weights)[None]
        norm = _logsumexp_rows(log_prob)
        log_likelihoods.append(float(norm.sum()))
        resp = np.exp(log_prob - norm[:, None])
        mass = resp.sum(axis=0)
        degenerate = np.flatnonzero(mass < 1e-9)
        safe = np.maximum(mass, 1e-12)
        means = (resp.T @ data) / safe[:, None]
        variances = (
            (resp[:, :, None] * (data[:, None, :] - means[None]) ** 2).sum(axis=0)
            / safe[:, None]
        ) + var_floor
        for j in degenerate:
            means[j] = data[rng.integers(n)] + rng.normal(size=d) * 1e-3
            variances[j] = data.var(axis=0) + var_floor
        weights = np.maximum(mass, 1e-9)
        weights = weights / weights.sum()
    return weights, means, variances, log_likelihoods


def _logsumexp_rows(x):
    peak = x.max(axis=1)
    return peak + np.log(np.exp(x - peak[:, None]).sum(axis=1))
