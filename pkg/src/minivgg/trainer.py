"""Mini-batch momentum SGD with a step learning-rate schedule.

Every random choice is derived from the run seed and the iteration number
(and, per sample, the dataset index), so a run is reproducible bit for bit
and independent of how a batch is split across workers.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from . import augment
from . import tensor_core as tc
from .augment import AugmentConfig, Dataset
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .model import Network


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_initial: float = 0.01
    lr_gamma: float = 0.1
    lr_step: int = 10_000
    max_iter: int = 40_000
    seed: int = 0
    workers: int = 1
    dropout_ratio: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1 or self.workers < 1:
            raise ConfigError("batch_size and workers must be positive")
        if self.batch_size % self.workers:
            raise ConfigError(f"batch_size {self.batch_size} is not divisible by workers {self.workers}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr_initial <= 0 or self.lr_gamma <= 0 or self.lr_step <= 0 or self.weight_decay < 0:
            raise ConfigError("learning-rate settings must be positive and weight_decay non-negative")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be non-negative")
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise ConfigError(f"dropout_ratio must lie in [0, 1), got {self.dropout_ratio}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale defaults: batch 64, lr drop every 1000 iterations, 3000 iterations."""
        base = dict(batch_size=64, lr_step=1_000, max_iter=3_000)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class MetricsRow:
    iter: int
    lr: float
    loss: float
    top1: float
    ms: float


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    if iteration < 0:
        raise ConfigError("iteration must be non-negative")
    return cfg.lr_initial * cfg.lr_gamma ** (iteration // cfg.lr_step)


def sgd_update(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, cfg: TrainConfig):
    """In-place Caffe-style momentum step with L2 decay on every parameter.

    ``v <- momentum * v - lr * (grad + weight_decay * param)``; ``param <- param + v``.
    """
    if not (param.shape == grad.shape == velocity.shape):
        raise ShapeError(f"sgd_update shapes differ: {param.shape}, {grad.shape}, {velocity.shape}")
    velocity *= param.dtype.type(cfg.momentum)
    velocity -= param.dtype.type(lr) * (grad + param.dtype.type(cfg.weight_decay) * param)
    param += velocity
    return param, velocity


def shard_and_aggregate(network: Network, x: np.ndarray, labels, workers: int, train: bool = True, rngs=None):
    """Simulated synchronous data parallelism.

    The batch is cut into ``workers`` contiguous shards, each shard runs
    forward/backward on the same parameters, and the shard mean-gradients
    are averaged in shard order. Shards run one after another in this
    process. Returns ``(loss, probs, grads)`` for the whole batch.
    """
    n = len(labels)
    if workers < 1 or n % workers:
        raise ConfigError(f"batch of {n} cannot be split into {workers} equal shards")
    size = n // workers
    total_loss, all_probs, agg = 0.0, [], None
    for s in range(workers):
        sl = slice(s * size, (s + 1) * size)
        shard_rngs = None if rngs is None else rngs[sl]
        loss, probs, grads = network.loss_and_grads(x[sl], labels[sl], train=train, rng=shard_rngs)
        total_loss += loss
        all_probs.append(probs)
        if agg is None:
            agg = grads
        else:
            for k in agg:
                agg[k] += grads[k]
    if workers > 1:
        inv = np.float32(1.0 / workers)
        for k in agg:
            agg[k] *= inv
    return total_loss / workers, np.concatenate(all_probs), agg


def batch_indices(seed: int, iteration: int, n: int, batch_size: int) -> np.ndarray:
    """Uniform sampling with replacement, keyed by ``(seed, iteration)``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, iteration])))
    return rng.integers(0, n, size=batch_size)


def make_batch(dataset: Dataset, index: np.ndarray, seed: int, iteration: int, aug: AugmentConfig):
    """Augmented batch plus the per-sample generators (reused for dropout masks)."""
    rngs = [augment.sample_rng(seed, int(i), iteration) for i in index]
    x = np.stack([augment.sample_train_crop(dataset.images[i], aug, r, dataset.channel_mean)
                  for i, r in zip(index, rngs)])
    return x, dataset.labels[index], rngs


def train(network: Network, dataset: Dataset, cfg: TrainConfig, aug: AugmentConfig = AugmentConfig(),
          on_step=None, on_checkpoint=None, checkpoint_every: int = 0):
    """Train ``network`` in place for ``cfg.max_iter`` iterations.

    ``on_step(row, network)`` runs after every iteration; returning ``True``
    ends training early. ``on_checkpoint(iteration, network)`` runs every
    ``checkpoint_every`` iterations (if positive) and once at the end.
    Returns ``(network, rows)``.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if network.num_classes != dataset.num_classes:
        raise ConfigError(f"network has {network.num_classes} classes, dataset {dataset.num_classes}")
    network.dropout_ratio = cfg.dropout_ratio
    network.channel_mean = np.asarray(dataset.channel_mean, dtype=np.float32).copy()
    rows: list[MetricsRow] = []
    for t in range(cfg.max_iter):
        start = time.perf_counter()
        lr = lr_at(t, cfg)
        index = batch_indices(cfg.seed, t, len(dataset), cfg.batch_size)
        x, y, rngs = make_batch(dataset, index, cfg.seed, t, aug)
        loss, probs, grads = shard_and_aggregate(network, x, y, cfg.workers, train=True, rngs=rngs)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at iteration {t}")
        for k, p in network.params.items():
            sgd_update(p, grads[k], network.momentum[k], lr, cfg)
            network.grads[k] = grads[k]
        network.iteration = t + 1
        top1 = float((probs.argmax(axis=1) == y).mean())
        row = MetricsRow(t, lr, loss, top1, (time.perf_counter() - start) * 1e3)
        rows.append(row)
        if on_checkpoint and checkpoint_every > 0 and (t + 1) % checkpoint_every == 0 and t + 1 < cfg.max_iter:
            on_checkpoint(t + 1, network)
        if on_step and on_step(row, network):
            break
    if on_checkpoint:
        on_checkpoint(network.iteration, network)
    return network, rows


def iterations_to_loss(rows, threshold: float, window: int = 20) -> int | None:
    """First iteration count at which the trailing ``window`` mean batch loss is <= threshold."""
    losses = np.array([r.loss for r in rows])
    for end in range(window, len(losses) + 1):
        if losses[end - window:end].mean() <= threshold:
            return end
    return None


def metrics_csv(rows, timing: bool = True) -> str:
    """Render rows as CSV (header ``iter,lr,loss,top1,ms``, LF endings).

    With ``timing=False`` the ``ms`` column is written as 0 so the file is a
    pure function of the run's inputs.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "lr", "loss", "top1", "ms"])
    for r in rows:
        w.writerow([r.iter, repr(r.lr), repr(r.loss), repr(r.top1), f"{r.ms:.3f}" if timing else "0"])
    return buf.getvalue()
