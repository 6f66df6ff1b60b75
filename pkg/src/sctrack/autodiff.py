"""Minimal reverse-mode differentiation over dense float64 arrays.

Provides exactly the operations the tracking and completion networks need:
pointwise 1D convolution, ReLU, per-channel batch norm, max pooling over
points, fully connected layers, row-wise cosine similarity, mean-squared
error, and the Chamfer loss. Every operation has a hand-written backward
verified against central finite differences (see `grad_check`).

All values are 64-bit floats; forward passes are deterministic.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from . import kernels
from .errors import (
    DegenerateStatisticsError,
    DimensionError,
    EmptyInputError,
    NonFiniteGradientError,
    UndefinedSimilarityError,
)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense array with an optional gradient slot.

    Operations stitch Tensors into a tape; `backward()` walks it in reverse
    topological order, accumulating into `.grad`.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Backpropagate from this tensor; seeds with ones when grad is None."""
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.values) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return _add(self, other)
        return _scale_shift(self, 1.0, float(other))

    __radd__ = __add__

    def __mul__(self, scalar):
        return _scale_shift(self, float(scalar), 0.0)

    __rmul__ = __mul__

    def item(self):
        return float(self.values)


def _make(values, parents, backward):
    """Create an op output; records the tape only when gradients can flow."""
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(tensor, grad):
    if not (tensor.requires_grad or tensor._backward is not None):
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.values)
    tensor.grad += grad


def _add(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.values + b.values, (a, b), backward)


def _scale_shift(a, scale, shift):
    def backward(g):
        _accumulate(a, scale * g)

    return _make(scale * a.values + shift, (a,), backward)


def conv1x1(x, weight, bias):
    """Pointwise 1D convolution: out[b,o,n] = bias[o] + sum_c w[o,c] x[b,c,n]."""
    if x.values.ndim != 3:
        raise DimensionError(f"conv1x1: input must be (B, C, N), got {x.shape}")
    if weight.values.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv1x1: weight {weight.shape} incompatible with input {x.shape}"
        )
    out = np.matmul(weight.values, x.values) + bias.values[:, None]

    def backward(g):
        _accumulate(x, np.matmul(weight.values.T, g))
        _accumulate(weight, np.matmul(g, x.values.transpose(0, 2, 1)).sum(axis=0))
        _accumulate(bias, g.sum(axis=(0, 2)))

    return _make(out, (x, weight, bias), backward)


def linear(x, weight, bias):
    """Fully connected layer: out = x @ W.T + b for x of shape (B, D_in)."""
    if x.values.ndim != 2:
        raise DimensionError(f"linear: input must be (B, D_in), got {x.shape}")
    if weight.values.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"linear: weight {weight.shape} incompatible with input {x.shape}"
        )
    out = x.values @ weight.values.T + bias.values

    def backward(g):
        _accumulate(x, g @ weight.values)
        _accumulate(weight, g.T @ x.values)
        _accumulate(bias, g.sum(axis=0))

    return _make(out, (x, weight, bias), backward)


def relu(x):
    """Elementwise max(0, x); gradient passes only where x > 0."""
    mask = x.values > 0.0

    def backward(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.values, 0.0), (x,), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, *, train, momentum=0.9, eps=1e-5):
    """Per-channel batch normalization over the batch and point axes of (B, C, N).

    Train mode normalizes with biased batch statistics and updates the
    running arrays in place; infer mode normalizes with the running
    statistics. Output is gamma * normalized + beta.
    """
    if x.values.ndim != 3:
        raise DimensionError(f"batch_norm: input must be (B, C, N), got {x.shape}")
    b, c, n = x.values.shape
    if train:
        m = b * n
        if m < 2:
            raise DegenerateStatisticsError(
                f"batch_norm train mode needs at least 2 samples per channel, got {m}"
            )
        mean = x.values.mean(axis=(0, 2))
        var = x.values.var(axis=(0, 2))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.values - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma.values[None, :, None] * x_hat + beta.values[None, :, None]

    if train:
        m = b * n

        def backward(g):
            _accumulate(beta, g.sum(axis=(0, 2)))
            _accumulate(gamma, (g * x_hat).sum(axis=(0, 2)))
            g_hat = g * gamma.values[None, :, None]
            sum_g = g_hat.sum(axis=(0, 2))
            sum_gx = (g_hat * x_hat).sum(axis=(0, 2))
            gx = inv_std[None, :, None] / m * (
                m * g_hat - sum_g[None, :, None] - x_hat * sum_gx[None, :, None]
            )
            _accumulate(x, gx)

    else:

        def backward(g):
            _accumulate(beta, g.sum(axis=(0, 2)))
            _accumulate(gamma, (g * x_hat).sum(axis=(0, 2)))
            _accumulate(x, g * (gamma.values * inv_std)[None, :, None])

    return _make(out, (x, gamma, beta), backward)


def max_pool_points(x):
    """Per-channel maximum over the point axis of (B, C, N).

    Returns (pooled, argmax) where argmax records the first maximal index;
    backward routes each output gradient solely to that position.
    """
    if x.values.ndim != 3:
        raise DimensionError(f"max_pool_points: input must be (B, C, N), got {x.shape}")
    if x.values.shape[2] == 0:
        raise EmptyInputError("max_pool_points: empty point axis")
    argmax = x.values.argmax(axis=2)
    pooled = np.take_along_axis(x.values, argmax[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros_like(x.values)
        np.put_along_axis(gx, argmax[:, :, None], g[:, :, None], axis=2)
        _accumulate(x, gx)

    return _make(pooled, (x,), backward), argmax


def take_row(x, index):
    """Select one row of a (B, D) tensor as a (D,) tensor."""
    def backward(g):
        gx = np.zeros_like(x.values)
        gx[index] = g
        _accumulate(x, gx)

    return _make(x.values[index], (x,), backward)


def take_rows(x, start, stop):
    """Select a contiguous row slice of a (B, D) tensor."""
    def backward(g):
        gx = np.zeros_like(x.values)
        gx[start:stop] = g
        _accumulate(x, gx)

    return _make(x.values[start:stop], (x,), backward)


def reshape(x, shape):
    def backward(g):
        _accumulate(x, g.reshape(x.values.shape))

    return _make(x.values.reshape(shape), (x,), backward)


def cosine_rows(z, z_hat):
    """Cosine similarity of every row of z (B, K) against z_hat (K,)."""
    norms = np.linalg.norm(z.values, axis=1)
    norm_hat = np.linalg.norm(z_hat.values)
    if norm_hat == 0.0 or np.any(norms == 0.0):
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    dots = z.values @ z_hat.values
    cos = dots / (norms * norm_hat)

    def backward(g):
        gz = g[:, None] * (
            z_hat.values[None, :] / (norms * norm_hat)[:, None]
            - cos[:, None] * z.values / (norms**2)[:, None]
        )
        _accumulate(z, gz)
        gh = (
            (g / (norms * norm_hat)) @ z.values
            - (g * cos).sum() * z_hat.values / norm_hat**2
        )
        _accumulate(z_hat, gh)

    return _make(cos, (z, z_hat), backward)


def mse(pred, target):
    """Mean squared error against a constant target array."""
    target = np.asarray(target, dtype=np.float64)
    if pred.values.shape != target.shape:
        raise DimensionError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.values - target
    n = max(diff.size, 1)

    def backward(g):
        _accumulate(pred, g * 2.0 * diff / n)

    return _make(np.float64((diff**2).mean()), (pred,), backward)


def chamfer_loss(pred, target):
    """Symmetric Chamfer distance of pred points (P, 3) to a constant cloud (T, 3).

    Sum over each cloud of the squared distance to the nearest point of the
    other, exactly as used for the completion loss. The nearest-neighbor
    assignment is treated as locally constant in the backward pass.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.values.ndim != 2 or pred.values.shape[1] != 3:
        raise DimensionError(f"chamfer_loss: pred must be (P, 3), got {pred.shape}")
    if pred.values.shape[0] == 0 or target.shape[0] == 0:
        raise EmptyInputError("chamfer_loss: empty point cloud")
    d2_t, idx_t = kernels.nearest_neighbors(target, pred.values)
    d2_p, idx_p = kernels.nearest_neighbors(pred.values, target)
    total = d2_t.sum() + d2_p.sum()

    def backward(g):
        gp = 2.0 * (pred.values - target[idx_p])
        np.add.at(gp, idx_t, 2.0 * (pred.values[idx_t] - target))
        _accumulate(pred, g * gp)

    return _make(np.float64(total), (pred,), backward)


def _uniform_init(rng, shape, fan_in):
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1x1Layer:
    """Trainable pointwise convolution (kernel width 1)."""

    def __init__(self, c_in, c_out, rng):
        self.weight = Tensor(_uniform_init(rng, (c_out, c_in), c_in), requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (c_out,), c_in), requires_grad=True)

    def __call__(self, x):
        return conv1x1(x, self.weight, self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class LinearLayer:
    """Trainable fully connected layer."""

    def __init__(self, d_in, d_out, rng):
        self.weight = Tensor(_uniform_init(rng, (d_out, d_in), d_in), requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (d_out,), d_in), requires_grad=True)

    def __call__(self, x):
        return linear(x, self.weight, self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNormLayer:
    """Per-channel batch norm with running statistics (momentum 0.9, eps 1e-5)."""

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, train):
        return batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            train=train,
            momentum=self.momentum,
            eps=self.eps,
        )

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class Adam:
    """Adam with bias correction over a list of (name, Tensor) parameters.

    A step with any non-finite gradient is rejected before touching state.
    Parameters whose grad is None are treated as having zero gradient.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(t.values) for _, t in self.params]
        self._v = [np.zeros_like(t.values) for _, t in self.params]

    def zero_grad(self):
        for _, t in self.params:
            t.zero_grad()

    def step(self):
        for name, t in self.params:
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t_step = self.step_count
        bc1 = 1.0 - self.beta1**t_step
        bc2 = 1.0 - self.beta2**t_step
        for i, (_, p) in enumerate(self.params):
            g = p.grad if p.grad is not None else 0.0
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * np.square(g)
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PlateauScheduler:
    """Reduce the learning rate when the validation loss stops improving.

    After `patience` consecutive epochs without a new best loss, the rate
    is multiplied by `ratio` and the counter resets.
    """

    def __init__(self, lr, patience=3, ratio=0.1):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < ratio < 1.0:
            raise ValueError("ratio must be in (0, 1)")
        self.lr = lr
        self.patience = patience
        self.ratio = ratio
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss):
        """Record one epoch's validation loss; returns the (possibly reduced) lr."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.ratio
                self.bad_epochs = 0
        return self.lr


def scheduled_lr(history, patience, ratio, lr):
    """Final learning rate after feeding a validation-loss series through the scheduler."""
    sched = PlateauScheduler(lr, patience=patience, ratio=ratio)
    for loss in history:
        lr = sched.step(loss)
    return lr


def grad_check(fn, tensors, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `fn` must rebuild the scalar loss from the current values of `tensors`
    (pure apart from running-statistic updates, which do not affect the
    train-mode output). Relative error is |analytic - numeric| / max(1, |analytic|).
    """
    for t in tensors:
        t.zero_grad()
    out = fn()
    out.backward()
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    with no_grad():
        for t, ref in zip(tensors, analytic):
            flat = t.values.reshape(-1)
            ref_flat = ref.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = float(fn().values)
                flat[i] = orig - step
                lo = float(fn().values)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * step)
                err = abs(ref_flat[i] - numeric) / max(1.0, abs(ref_flat[i]))
                worst = max(worst, err)
    return worst
