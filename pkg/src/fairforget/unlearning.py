"""The four unlearning operators plus a retrain-from-scratch oracle.

Whole removal uses relaxed membership weights w in [0,1]; the influence of
a removed sample is added back as +w * grad(sample) (first order, scaled by
the unlearning rate tau) or its inverse-Hessian analogue (second order).
Partial removal unlearns per-sample feature modifications delta, replacing
x with x - delta in the gradient-difference update.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .datasets import SplitSpec, TabularDataset
from .diffmath import cg_solve, hessian_operator, weighted_loss_gradient
from .errors import ConfigurationError, ContractError
from .models import Architecture, ModelParams, PretrainedModel, TrainingConfig
from .training import ShardedModel, retrain_on, train_shard_models

METHODS = ("first_order", "second_order", "unrolling_sgd", "sisa")


@dataclass(frozen=True)
class WholeRequest:
    """Remove entire samples; weights are the (possibly relaxed) memberships."""

    target_indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.target_indices, dtype=np.intp)
        w = np.asarray(self.weights, dtype=np.float64)
        if idx.ndim != 1 or w.shape != idx.shape:
            raise ConfigurationError("target_indices and weights must be 1-D and aligned")
        if np.unique(idx).size != idx.size:
            raise ConfigurationError("target indices must be distinct")
        if w.size and (w.min() < 0.0 or w.max() > 1.0):
            raise ConfigurationError("weights must lie in [0,1]")
        idx.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "target_indices", idx)
        object.__setattr__(self, "weights", w)

    @property
    def is_discrete(self) -> bool:
        return bool(np.isin(self.weights, (0.0, 1.0)).all())

    def discretized(self, threshold: float = 0.5) -> "WholeRequest":
        """Threshold the relaxed weights; keeps the top weight if all fall below."""
        w = (self.weights >= threshold).astype(np.float64)
        if w.size and w.sum() == 0:
            w[int(np.argmax(self.weights))] = 1.0
        return WholeRequest(self.target_indices, w)

    def removed_indices(self) -> np.ndarray:
        if not self.is_discrete:
            raise ContractError("relaxed request: discretize before listing removals")
        return self.target_indices[self.weights == 1.0]


@dataclass(frozen=True)
class PartialRequest:
    """Replace each target x with x - delta; rows bounded in max norm."""

    target_indices: np.ndarray
    deltas: np.ndarray
    bound: float

    def __post_init__(self):
        idx = np.asarray(self.target_indices, dtype=np.intp)
        d = np.asarray(self.deltas, dtype=np.float64)
        if idx.ndim != 1 or d.ndim != 2 or d.shape[0] != idx.size:
            raise ConfigurationError("deltas must be (num_targets, D)")
        if np.unique(idx).size != idx.size:
            raise ConfigurationError("target indices must be distinct")
        if self.bound < 0:
            raise ConfigurationError("bound must be >= 0")
        if d.size and np.abs(d).max() > self.bound + 1e-12:
            raise ConfigurationError("a delta row exceeds the max-norm bound")
        idx.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "target_indices", idx)
        object.__setattr__(self, "deltas", d)


UnlearnRequest = Union[WholeRequest, PartialRequest]


@dataclass(frozen=True)
class UnlearnConfig:
    method: str
    tau: float = 2e-5
    cg_tol: float = 1e-6
    cg_max_iters: int = 200
    cg_damping: float = 1e-3
    shards: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected {METHODS}")
        if self.tau <= 0:
            raise ConfigurationError("unlearning rate tau must be positive")


def validate_request(req: UnlearnRequest, ds: TabularDataset, split: SplitSpec) -> None:
    in_train = np.isin(req.target_indices, split.train_indices)
    if not in_train.all():
        raise ConfigurationError("target indices must lie in the training split")
    if isinstance(req, PartialRequest) and req.deltas.shape[1] != ds.d:
        raise ConfigurationError("delta width does not match the feature dimension")


def _gradient_difference(model: ModelParams, ds: TabularDataset, req: UnlearnRequest):
    """sum grad(modified) - sum grad(original) over the targets.

    For whole removal the modified version contributes nothing, leaving
    -sum_p w_p grad(z_p).
    """
    x = ds.features[req.target_indices]
    y = ds.labels[req.target_indices]
    if isinstance(req, WholeRequest):
        if req.weights.size == 0 or not req.weights.any():
            return np.zeros(model.arch.param_count)
        return -weighted_loss_gradient(model, x, y, req.weights)
    if not req.deltas.any():
        return np.zeros(model.arch.param_count)
    ones = np.ones(len(req.target_indices))
    g_mod = weighted_loss_gradient(model, x - req.deltas, y, ones)
    g_orig = weighted_loss_gradient(model, x, y, ones)
    return g_mod - g_orig


def first_order_unlearn(
    pre: PretrainedModel, ds: TabularDataset, split: SplitSpec,
    req: UnlearnRequest, cfg: UnlearnConfig,
) -> ModelParams:
    """Gradient-difference update scaled by the unlearning rate tau."""
    validate_request(req, ds, split)
    diff = _gradient_difference(pre.params, ds, req)
    return pre.params.with_theta(pre.params.theta - cfg.tau * diff)


def second_order_unlearn(
    pre: PretrainedModel, ds: TabularDataset, split: SplitSpec,
    req: UnlearnRequest, cfg: UnlearnConfig,
) -> ModelParams:
    """Gradient-difference update preconditioned by the damped training Hessian."""
    validate_request(req, ds, split)
    diff = _gradient_difference(pre.params, ds, req)
    if not diff.any():
        return pre.params
    op = hessian_operator(pre.params, ds.features[split.train_indices],
                          ds.labels[split.train_indices])
    step = cg_solve(op, diff, tol=cfg.cg_tol, max_iters=cfg.cg_max_iters,
                    damping=cfg.cg_damping)
    return pre.params.with_theta(pre.params.theta - step)


def unrolling_sgd_unlearn(
    pre: PretrainedModel, ds: TabularDataset, split: SplitSpec,
    req: UnlearnRequest, cfg: UnlearnConfig,
) -> ModelParams:
    """Add back the removed samples' gradients taken at the initial weights.

    Each sample is visited once per epoch, so the correction is scaled by
    lr * epochs from the recorded training config.
    """
    if not isinstance(req, WholeRequest):
        raise ContractError("unrolling SGD supports whole removal only")
    validate_request(req, ds, split)
    tc = pre.training_config
    if req.weights.size == 0 or not req.weights.any():
        return pre.params
    grad0 = weighted_loss_gradient(
        pre.initial_params,
        ds.features[req.target_indices],
        ds.labels[req.target_indices],
        req.weights,
    )
    return pre.params.with_theta(pre.params.theta + tc.lr * tc.epochs * grad0)


def sisa_unlearn(
    sharded: ShardedModel, ds: TabularDataset, split: SplitSpec,
    req: UnlearnRequest, cfg: UnlearnConfig,
) -> ShardedModel:
    """Retrain only the shards that contain a removed sample.

    Untouched shard models are carried over bit-identically; affected shards
    retrain from their recorded seed on shard-minus-removed.
    """
    if not isinstance(req, WholeRequest):
        raise ContractError("SISA supports whole removal only")
    if not req.is_discrete:
        raise ContractError("SISA needs discrete weights; discretize the request first")
    validate_request(req, ds, split)
    removed = set(int(i) for i in req.removed_indices())
    touched = {sharded.assignment[i] for i in removed}
    new_models = list(sharded.models)
    tc = sharded.training_config
    for shard_id in sorted(touched):
        keep = np.array(sorted(
            i for i, s in sharded.assignment.items()
            if s == shard_id and i not in removed
        ))
        if keep.size == 0:
            raise ConfigurationError(f"removal empties shard {shard_id}; lower the budget")
        refit = retrain_on(ds, keep, sharded.models[shard_id].arch, tc,
                           seed=sharded.shard_seeds[shard_id])
        new_models[shard_id] = refit.params
    assignment = {i: s for i, s in sharded.assignment.items() if i not in removed}
    return ShardedModel(tuple(new_models), assignment, sharded.shard_seeds, tc)


def retrain_oracle(
    ds: TabularDataset, split: SplitSpec, arch: Architecture,
    req: WholeRequest, tcfg: TrainingConfig,
) -> ModelParams:
    """Train from scratch on the training split minus the removed samples."""
    if not isinstance(req, WholeRequest) or not req.is_discrete:
        raise ContractError("the retrain oracle needs a discrete whole request")
    validate_request(req, ds, split)
    removed = req.removed_indices()
    keep = np.setdiff1d(split.train_indices, removed)
    return retrain_on(ds, keep, arch, tcfg).params


def unlearn(
    pre: PretrainedModel | ShardedModel, ds: TabularDataset, split: SplitSpec,
    req: UnlearnRequest, cfg: UnlearnConfig,
):
    """Dispatch to the configured unlearning method."""
    if cfg.method == "first_order":
        return first_order_unlearn(pre, ds, split, req, cfg)
    if cfg.method == "second_order":
        return second_order_unlearn(pre, ds, split, req, cfg)
    if cfg.method == "unrolling_sgd":
        return unrolling_sgd_unlearn(pre, ds, split, req, cfg)
    if cfg.method == "sisa":
        if not isinstance(pre, ShardedModel):
            raise ConfigurationError("SISA unlearning needs a ShardedModel")
        return sisa_unlearn(pre, ds, split, req, cfg)
    raise ConfigurationError(f"unknown method {cfg.method!r}")


# ---------------------------------------------------------------------------
# request (de)serialization: the artifact an attacker would actually submit

def request_to_dict(req: UnlearnRequest, method: str | None = None,
                    tau: float | None = None) -> dict:
    out: dict = {"target_indices": [int(i) for i in req.target_indices]}
    if isinstance(req, WholeRequest):
        out["variant"] = "whole"
        out["weights"] = [float(w) for w in req.weights]
    else:
        out["variant"] = "partial"
        out["deltas"] = [float(v) for v in req.deltas.ravel()]  # row-major
        out["bound"] = float(req.bound)
    if method is not None:
        out["method"] = method
    if tau is not None:
        out["tau"] = float(tau)
    return out


def request_from_dict(data: dict) -> UnlearnRequest:
    idx = np.asarray(data["target_indices"], dtype=np.intp)
    if data["variant"] == "whole":
        return WholeRequest(idx, np.asarray(data["weights"], dtype=np.float64))
    if data["variant"] == "partial":
        deltas = np.asarray(data["deltas"], dtype=np.float64).reshape(idx.size, -1)
        return PartialRequest(idx, deltas, float(data["bound"]))
    raise ConfigurationError(f"unknown request variant {data['variant']!r}")


def save_request(req: UnlearnRequest, path: str | Path,
                 method: str | None = None, tau: float | None = None) -> None:
    Path(path).write_text(json.dumps(request_to_dict(req, method, tau), sort_keys=True))


def load_request(path: str | Path) -> UnlearnRequest:
    return request_from_dict(json.loads(Path(path).read_text()))
