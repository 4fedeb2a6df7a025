"""Fairness losses, their parameter gradients, and evaluation metrics.

Both losses range over cross-group pairs with equal labels, normalized by
n1*n2 (the restricted group sizes). The individual loss averages squared
logit distances; the group loss squares the averaged distance. Pair sums
are computed in closed form (individual) or in chunked pairwise blocks
(group), never by Python-level double loops.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .datasets import GroupPartition, TabularDataset
from .diffmath import logit_vjp
from .errors import (ConfigurationError, DegenerateGroupError,
                     DegenerateMetricError, UndefinedRatioError)
from .models import ModelParams, forward, predict_batch

_CHUNK = 512


@dataclass(frozen=True)
class FairnessReport:
    aeod_before: float
    aeod_after: float
    increment_ratio: float
    test_acc_before: float
    test_acc_after: float
    attribute: str

    def __post_init__(self):
        for name in ("aeod_before", "aeod_after"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name}={v} outside [0,1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "FairnessReport":
        return FairnessReport(**json.loads(text))


def _restricted_groups(ds: TabularDataset, indices: np.ndarray, part: GroupPartition):
    """Evaluation-index rows of each group, with their labels."""
    indices = np.asarray(indices, dtype=np.intp)
    member = np.zeros(ds.n, dtype=bool)
    member[part.s2_indices] = True
    in_s2 = member[indices]
    idx1 = indices[~in_s2]
    idx2 = indices[in_s2]
    return idx1, idx2


def _pair_blocks(ds, indices, part, model):
    idx1, idx2 = _restricted_groups(ds, indices, part)
    n1, n2 = idx1.size, idx2.size
    if n1 == 0 or n2 == 0:
        raise DegenerateGroupError(
            f"attribute {part.attribute!r}: a group is empty on the evaluation set"
        )
    z1 = forward(model, ds.features[idx1])
    z2 = forward(model, ds.features[idx2])
    y1 = ds.labels[idx1]
    y2 = ds.labels[idx2]
    shared = sorted(set(np.unique(y1)) & set(np.unique(y2)))
    if not shared:
        raise DegenerateGroupError(
            f"attribute {part.attribute!r}: no cross-group pair shares a label"
        )
    return idx1, idx2, z1, z2, y1, y2, shared, n1, n2


def individual_fairness_loss(
    ds: TabularDataset, indices, part: GroupPartition, model: ModelParams
) -> float:
    """Mean squared logit distance over same-label cross-group pairs."""
    _, _, z1, z2, y1, y2, shared, n1, n2 = _pair_blocks(ds, indices, part, model)
    total = 0.0
    for c in shared:
        a = z1[y1 == c]
        b = z2[y2 == c]
        # sum_ij ||a_i - b_j||^2 expands into row sums and a cross term
        total += (
            b.shape[0] * float((a**2).sum())
            + a.shape[0] * float((b**2).sum())
            - 2.0 * float(a.sum(axis=0) @ b.sum(axis=0))
        )
    return total / (n1 * n2)


def _group_distance_sums(a: np.ndarray, b: np.ndarray, want_grad: bool):
    """Sum of pairwise distances; optionally the pairwise unit-vector sums."""
    total = 0.0
    ga = np.zeros_like(a) if want_grad else None
    gb = np.zeros_like(b) if want_grad else None
    for start in range(0, a.shape[0], _CHUNK):
        block = a[start : start + _CHUNK]
        diff = block[:, None, :] - b[None, :, :]
        norms = np.sqrt((diff**2).sum(axis=-1))
        total += float(norms.sum())
        if want_grad:
            safe = np.where(norms > 0, norms, 1.0)
            unit = diff / safe[..., None]
            unit[norms == 0] = 0.0
            ga[start : start + _CHUNK] = unit.sum(axis=1)
            gb -= unit.sum(axis=0)
    return total, ga, gb


def group_fairness_loss(
    ds: TabularDataset, indices, part: GroupPartition, model: ModelParams
) -> float:
    """Square of the mean logit distance over same-label cross-group pairs."""
    _, _, z1, z2, y1, y2, shared, n1, n2 = _pair_blocks(ds, indices, part, model)
    total = 0.0
    for c in shared:
        s, _, _ = _group_distance_sums(z1[y1 == c], z2[y2 == c], want_grad=False)
        total += s
    return (total / (n1 * n2)) ** 2


def fairness_loss(
    kind: str, ds: TabularDataset, indices, part: GroupPartition, model: ModelParams
) -> float:
    if kind == "individual":
        return individual_fairness_loss(ds, indices, part, model)
    if kind == "group":
        return group_fairness_loss(ds, indices, part, model)
    raise ConfigurationError(f"unknown fairness kind {kind!r}; expected individual|group")


def fairness_loss_gradient(
    kind: str, ds: TabularDataset, indices, part: GroupPartition, model: ModelParams
) -> np.ndarray:
    """Exact parameter gradient of the selected fairness loss."""
    idx1, idx2, z1, z2, y1, y2, shared, n1, n2 = _pair_blocks(ds, indices, part, model)
    g1 = np.zeros_like(z1)
    g2 = np.zeros_like(z2)
    scale = 1.0 / (n1 * n2)
    if kind == "individual":
        for c in shared:
            m1 = y1 == c
            m2 = y2 == c
            a, b = z1[m1], z2[m2]
            g1[m1] = 2.0 * scale * (b.shape[0] * a - b.sum(axis=0))
            g2[m2] = 2.0 * scale * (a.shape[0] * b - a.sum(axis=0))
    elif kind == "group":
        total = 0.0
        parts = []
        for c in shared:
            s, ga, gb = _group_distance_sums(z1[y1 == c], z2[y2 == c], want_grad=True)
            total += s
            parts.append((c, ga, gb))
        mean = total * scale
        for c, ga, gb in parts:
            g1[y1 == c] = 2.0 * mean * scale * ga
            g2[y2 == c] = 2.0 * mean * scale * gb
    else:
        raise ConfigurationError(f"unknown fairness kind {kind!r}; expected individual|group")
    x = np.concatenate([ds.features[idx1], ds.features[idx2]])
    g = np.concatenate([g1, g2])
    return logit_vjp(model, x, g)


def aeod_of_predictions(preds: np.ndarray, labels: np.ndarray, groups: np.ndarray) -> float:
    """Absolute Equalized Odds Difference from hard predictions.

    Half the sum over labels y in {0,1} of the absolute gap in
    positive-prediction rates between the two groups.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    total = 0.0
    for y in (0, 1):
        rates = []
        for g in (0, 1):
            mask = (labels == y) & (groups == g)
            if not mask.any():
                raise DegenerateMetricError(f"empty cell: group {g}, label {y}")
            rates.append(float((preds[mask] == 1).mean()))
        total += abs(rates[0] - rates[1])
    return 0.5 * total


def aeod(model: ModelParams, ds: TabularDataset, indices, part: GroupPartition) -> float:
    """AEOD of a model's predictions over the evaluation index set."""
    if ds.num_classes != 2:
        raise ConfigurationError("AEOD is defined for binary labels")
    indices = np.asarray(indices, dtype=np.intp)
    preds = predict_batch(model, ds.features[indices])
    groups = np.zeros(ds.n, dtype=np.int8)
    groups[part.s2_indices] = 1
    return aeod_of_predictions(preds, ds.labels[indices], groups[indices])


def aeod_of_predictor(predict_fn, ds: TabularDataset, indices, part: GroupPartition) -> float:
    """AEOD for any batch predictor (e.g. a sharded majority-vote model)."""
    indices = np.asarray(indices, dtype=np.intp)
    preds = np.asarray(predict_fn(ds.features[indices]))
    groups = np.zeros(ds.n, dtype=np.int8)
    groups[part.s2_indices] = 1
    return aeod_of_predictions(preds, ds.labels[indices], groups[indices])


def increment_ratio(before: float, after: float) -> float:
    """(after - before) / before; undefined at before = 0."""
    if before <= 0:
        raise UndefinedRatioError(
            f"increment ratio undefined for before={before}; "
            f"report the absolute difference ({after - before:+.6f}) instead"
        )
    return (after - before) / before
