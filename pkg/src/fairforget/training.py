"""Mini-batch SGD training of the three architectures, plus sharded training.

Everything is deterministic given the seed: initialization, the per-epoch
batch order, and the shard partition each derive from their own seed stream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .datasets import SplitSpec, TabularDataset
from .diffmath import loss_gradient
from .errors import ConfigurationError, TrainingError
from .models import (Architecture, ModelParams, PretrainedModel, TrainingConfig,
                     init, mean_loss, predict_batch)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShardedModel:
    """Per-shard models with their assignment and retraining seeds."""

    models: tuple[ModelParams, ...]
    assignment: dict[int, int]  # training index -> shard id
    shard_seeds: tuple[int, ...]
    training_config: TrainingConfig

    @property
    def num_shards(self) -> int:
        return len(self.models)

    def shard_indices(self, shard: int) -> np.ndarray:
        return np.array(sorted(i for i, s in self.assignment.items() if s == shard))


def _shuffle_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def _run_sgd(
    ds: TabularDataset,
    indices: np.ndarray,
    arch: Architecture,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> PretrainedModel:
    indices = np.sort(np.asarray(indices, dtype=np.intp))
    if indices.size == 0:
        raise ConfigurationError("cannot train on an empty index set")
    params0 = init(arch, seed)
    theta = params0.theta.copy()
    rng = _shuffle_rng(seed)
    x_all, y_all = ds.features, ds.labels
    recent: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(indices)
        for start in range(0, order.size, batch_size):
            batch = order[start : start + batch_size]
            theta -= lr * loss_gradient(
                ModelParams(arch, theta), x_all[batch], y_all[batch]
            )
        if not np.isfinite(theta).all():
            raise TrainingError(f"training diverged at epoch {epoch}", epoch=epoch)
        epoch_loss = mean_loss(ModelParams(arch, theta), x_all[indices], y_all[indices])
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        recent.append(epoch_loss)
        if len(recent) > 10:
            recent.pop(0)
            if epoch_loss > recent[0]:
                log.debug("loss rose over a 10-epoch window at epoch %d "
                          "(%.6f -> %.6f)", epoch, recent[0], epoch_loss)
    cfg = TrainingConfig(epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
    return PretrainedModel(ModelParams(arch, theta), params0, cfg)


def train_sgd(
    ds: TabularDataset,
    split: SplitSpec,
    arch: Architecture,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> PretrainedModel:
    """SGD over the training split; returns final and initial parameters."""
    if lr <= 0:
        raise ConfigurationError("learning rate must be positive")
    if epochs < 1:
        raise ConfigurationError("epochs must be >= 1")
    return _run_sgd(ds, split.train_indices, arch, epochs, batch_size, lr, seed, on_epoch)


def retrain_on(
    ds: TabularDataset,
    indices: np.ndarray,
    arch: Architecture,
    cfg: TrainingConfig,
    seed: Optional[int] = None,
) -> PretrainedModel:
    """Fresh training restricted to the given indices with a recorded config."""
    return _run_sgd(ds, indices, arch, cfg.epochs, cfg.batch_size, cfg.lr,
                    cfg.seed if seed is None else seed)


def evaluate(model: ModelParams, ds: TabularDataset, indices: np.ndarray) -> float:
    """Fraction of correct predictions over the index set."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size == 0:
        raise ConfigurationError("cannot evaluate on an empty index set")
    preds = predict_batch(model, ds.features[indices])
    return float((preds == ds.labels[indices]).mean())


def predict_sharded(sharded: ShardedModel, x: np.ndarray) -> np.ndarray:
    """Majority vote over shard models; ties go to the smaller class index."""
    votes = np.stack([predict_batch(m, x) for m in sharded.models])
    num_classes = sharded.models[0].arch.num_classes
    counts = np.apply_along_axis(np.bincount, 0, votes, minlength=num_classes)
    return np.argmax(counts, axis=0)


def evaluate_sharded(sharded: ShardedModel, ds: TabularDataset, indices: np.ndarray) -> float:
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size == 0:
        raise ConfigurationError("cannot evaluate on an empty index set")
    preds = predict_sharded(sharded, ds.features[indices])
    return float((preds == ds.labels[indices]).mean())


def shard_seeds_for(seed: int, k: int) -> tuple[int, ...]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    return tuple(int(s) for s in rng.integers(0, 2**31 - 1, size=k))


def train_shard_models(
    ds: TabularDataset,
    split: SplitSpec,
    arch: Architecture,
    k: int,
    seed: int,
    epochs: int,
    batch_size: int,
    lr: float,
    assignment: Optional[dict[int, int]] = None,
) -> ShardedModel:
    """Disjoint near-equal shards of the training split, one model per shard.

    An explicit assignment (training index -> shard id) overrides the seeded
    partition; sisa retraining and its full-retrain oracle both rely on this.
    """
    train_idx = np.asarray(split.train_indices, dtype=np.intp)
    if k < 2:
        raise ConfigurationError("shard count must be >= 2")
    if k > train_idx.size:
        raise ConfigurationError(f"cannot cut {train_idx.size} samples into {k} shards")
    if assignment is None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        perm = rng.permutation(train_idx)
        assignment = {}
        for shard_id, chunk in enumerate(np.array_split(perm, k)):
            for idx in chunk:
                assignment[int(idx)] = shard_id
    seeds = shard_seeds_for(seed, k)
    shard_models = []
    for shard_id in range(k):
        idx = np.array(sorted(i for i, s in assignment.items() if s == shard_id))
        if idx.size == 0:
            raise ConfigurationError(f"shard {shard_id} is empty")
        pre = _run_sgd(ds, idx, arch, epochs, batch_size, lr, seeds[shard_id])
        shard_models.append(pre.params)
    cfg = TrainingConfig(epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
    return ShardedModel(tuple(shard_models), dict(assignment), seeds, cfg)
