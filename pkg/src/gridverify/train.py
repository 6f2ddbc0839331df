"""Minimal deterministic trainer: plain SGD with manual backprop through
affine+ReLU layers at double precision.

The loss is a squared score error with an asymmetric multiplicative
penalty: entries where the network's recommended action differs from the
table's are weighted by ``asym_weight``, pushing the fit toward agreeing
on the advisory rather than just the raw scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import AffineLayer, Network
from .tables import LookupTable, NUM_ACTIONS


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    shape: tuple[int, ...] = (5, 50, 50, 50, 50, 50, 5)
    epochs: int = 3
    batch_size: int = 256
    learning_rate: float = 0.1
    asym_weight: float = 4.0
    seed: int = 0
    precision: str = "single"

    def __post_init__(self):
        if len(self.shape) < 2 or any(w < 1 for w in self.shape):
            raise ValueError("shape needs at least two positive widths")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive")
        if self.asym_weight < 1:
            raise ValueError("asym_weight must be >= 1")


def init_params(shape, rng) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, float64."""
    weights, biases = [], []
    for fan_in, fan_out in zip(shape, shape[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward_trace(weights, biases, xb):
    """Hidden activations (post-ReLU) plus the final linear output."""
    acts = [xb]
    h = xb
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
        acts.append(h)
    out = h @ weights[-1].T + biases[-1]
    return acts, out


def loss_and_grad(weights, biases, xb, yb, asym_weight):
    """Asymmetric squared-error loss and its parameter gradients.

    Per entry: ``w * ||pred - target||^2 / m`` with ``w = asym_weight``
    when the argmaxes disagree, averaged over the batch.  The weight acts
    as a constant gate (it is not differentiated through).
    """
    if xb.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    batch = xb.shape[0]
    m = yb.shape[1]
    acts, pred = _forward_trace(weights, biases, xb)
    diff = pred - yb
    w = np.where(np.argmax(pred, axis=1) == np.argmax(yb, axis=1), 1.0, asym_weight)
    loss = float(np.mean(w * np.sum(diff * diff, axis=1) / m))
    delta = (2.0 / (m * batch)) * w[:, None] * diff
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    for li in range(len(weights) - 1, -1, -1):
        grads_w[li] = delta.T @ acts[li]
        grads_b[li] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ weights[li]) * (acts[li] > 0)
    return loss, grads_w, grads_b


def _to_network(weights, biases, precision, metadata, norm_mean, norm_range) -> Network:
    dtype = np.float32 if precision == "single" else np.float64
    layers = [AffineLayer(w.astype(dtype), b.astype(dtype)) for w, b in zip(weights, biases)]
    return Network(
        layers,
        precision=precision,
        metadata=metadata,
        norm_mean=norm_mean,
        norm_range=norm_range,
    )


def train(
    table: LookupTable,
    cfg: TrainConfig,
    name: str = "",
    on_epoch=None,
) -> Network:
    """Fit a network to the table; deterministic given (table, cfg)."""
    scheme = table.scheme
    if cfg.shape[0] != scheme.n or cfg.shape[-1] != NUM_ACTIONS:
        raise ValueError(
            f"shape endpoints must be ({scheme.n}, {NUM_ACTIONS}), got {cfg.shape}"
        )
    rng = np.random.default_rng(cfg.seed)
    weights, biases = init_params(cfg.shape, rng)
    norm_mean = np.array([(a.lo + a.hi) / 2.0 for a in scheme.axes])
    norm_range = np.array([a.hi - a.lo if a.hi > a.lo else 1.0 for a in scheme.axes])
    pts = scheme.points_for_flat(np.arange(scheme.grid_size, dtype=np.int64))
    xs = (pts - norm_mean) / norm_range
    ys = table.scores.astype(np.float64)
    n = xs.shape[0]
    metadata = {"tau": table.tau, "alpha_prev": table.alpha_prev}
    if name:
        metadata["name"] = name
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, gw, gb = loss_and_grad(weights, biases, xs[idx], ys[idx], cfg.asym_weight)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            epoch_loss += loss * idx.size
            for li in range(len(weights)):
                weights[li] -= cfg.learning_rate * gw[li]
                biases[li] -= cfg.learning_rate * gb[li]
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss / n)
    return _to_network(weights, biases, cfg.precision, metadata, norm_mean, norm_range)


def full_table_loss(net_or_params, table: LookupTable, asym_weight: float) -> float:
    """Whole-table loss for progress checks; accepts a Network."""
    scheme = table.scheme
    if isinstance(net_or_params, Network):
        weights = [l.weights.astype(np.float64) for l in net_or_params.layers]
        biases = [l.biases.astype(np.float64) for l in net_or_params.layers]
        mean, rng_ = net_or_params.norm_mean, net_or_params.norm_range
    else:
        raise TypeError("expected a Network")
    pts = scheme.points_for_flat(np.arange(scheme.grid_size, dtype=np.int64))
    xs = (pts - mean) / rng_
    loss, _, _ = loss_and_grad(weights, biases, xs, table.scores.astype(np.float64), asym_weight)
    return loss
