"""Bi-level selective-forgetting attacks with random restarts.

The outer objective (fairness loss minus lambda * training loss on the
remaining data) is ascended with Adam over the request variables, projecting
the whole-removal weights onto [0,1] or the partial modifications onto the
max-norm ball after every step. The best restart's request is discretized
(whole) or feasibility-clamped (partial) and then actually executed to
produce the reported fairness numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .datasets import GroupPartition, SplitSpec, TabularDataset
from .diffmath import (cg_solve, hessian_operator, mixed_second_derivative_batch,
                       per_sample_loss_jvp)
from .errors import AttackError, ConfigurationError, ContractError
from .fairness import (FairnessReport, aeod, aeod_of_predictor, fairness_loss,
                       fairness_loss_gradient, increment_ratio)
from .models import ModelParams, PretrainedModel
from .training import ShardedModel, evaluate, evaluate_sharded, predict_sharded
from .unlearning import (PartialRequest, UnlearnConfig, UnlearnRequest,
                         WholeRequest, unlearn)
from . import diffmath

DIFFERENTIABLE_METHODS = ("first_order", "second_order")


@dataclass(frozen=True)
class AttackConfig:
    restarts: int = 4
    steps: int = 30
    tau: float = 2e-5
    lam: float = 1.0
    fairness_kind: str = "group"
    budget: float = 0.2
    epsilon: float = 0.5
    step_size: Optional[float] = None  # default 0.05 (whole) / 0.01*epsilon (partial)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def whole_step_size(self) -> float:
        return 0.05 if self.step_size is None else self.step_size

    def partial_step_size(self) -> float:
        return 0.01 * self.epsilon if self.step_size is None else self.step_size


@dataclass(frozen=True)
class AttackResult:
    best_request: UnlearnRequest
    best_outer_loss: float
    trace: tuple[tuple[int, tuple[float, ...]], ...]  # (restart id, per-step losses)
    report: FairnessReport


class _Adam:
    def __init__(self, shape, step_size, beta1, beta2, eps):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, grad):
        """Increment to subtract, for descending along grad."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)


def outer_objective(
    ds: TabularDataset, remaining, part: GroupPartition,
    model: ModelParams, lam: float, kind: str,
) -> float:
    """Fairness loss minus lam * mean cross-entropy, over the remaining data."""
    from .models import mean_loss

    remaining = np.asarray(remaining, dtype=np.intp)
    fair = fairness_loss(kind, ds, remaining, part, model)
    return fair - lam * mean_loss(model, ds.features[remaining], ds.labels[remaining])


def _outer_gradient_theta(ds, remaining, part, model, lam, kind) -> np.ndarray:
    grad = fairness_loss_gradient(kind, ds, remaining, part, model)
    if lam != 0.0:
        grad = grad - lam * diffmath.loss_gradient(
            model, ds.features[remaining], ds.labels[remaining]
        )
    return grad


def choose_targets(split: SplitSpec, budget: float, seed: int) -> np.ndarray:
    """A budget-fraction of the training split, rounded down, drawn uniformly."""
    if not 0.0 < budget <= 1.0:
        raise ConfigurationError(f"budget must be in (0,1], got {budget}")
    count = int(np.floor(budget * split.train_indices.size))
    if count < 1:
        raise ConfigurationError("budget selects zero targets")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    return np.sort(rng.choice(split.train_indices, size=count, replace=False))


def make_report(
    ds: TabularDataset, split: SplitSpec, part: GroupPartition,
    before, after,
) -> FairnessReport:
    """Test-split fairness and accuracy before/after unlearning.

    `before` and `after` may each be a ModelParams or a ShardedModel.
    """
    def metrics(m):
        if isinstance(m, ShardedModel):
            acc = evaluate_sharded(m, ds, split.test_indices)
            a = aeod_of_predictor(lambda x: predict_sharded(m, x), ds,
                                  split.test_indices, part)
        else:
            acc = evaluate(m, ds, split.test_indices)
            a = aeod(m, ds, split.test_indices, part)
        return acc, a

    acc_before, aeod_before = metrics(before)
    acc_after, aeod_after = metrics(after)
    return FairnessReport(
        aeod_before=aeod_before,
        aeod_after=aeod_after,
        increment_ratio=increment_ratio(aeod_before, aeod_after),
        test_acc_before=acc_before,
        test_acc_after=acc_after,
        attribute=part.attribute,
    )


class _WholeDriver:
    """Inner state for optimizing relaxed removal weights against one model."""

    def __init__(self, pre, ds, split, part, targets, acfg, method, ucfg):
        self.pre = pre
        self.ds = ds
        self.split = split
        self.part = part
        self.targets = np.asarray(targets, dtype=np.intp)
        self.acfg = acfg
        self.method = method
        self.ucfg = ucfg
        self.x_t = ds.features[self.targets]
        self.y_t = ds.labels[self.targets]
        self.remaining = np.setdiff1d(split.train_indices, self.targets)
        self.h_op = None
        if method == "second_order":
            self.h_op = hessian_operator(
                pre.params, ds.features[split.train_indices], ds.labels[split.train_indices]
            )

    def _solve(self, rhs):
        return cg_solve(self.h_op, rhs, tol=self.ucfg.cg_tol,
                        max_iters=self.ucfg.cg_max_iters, damping=self.ucfg.cg_damping)

    def unlearned(self, w: np.ndarray) -> ModelParams:
        if not w.any():
            return self.pre.params
        g_w = diffmath.weighted_loss_gradient(self.pre.params, self.x_t, self.y_t, w)
        if self.method == "first_order":
            return self.pre.params.with_theta(self.pre.params.theta + self.acfg.tau * g_w)
        return self.pre.params.with_theta(self.pre.params.theta + self._solve(g_w))

    def loss(self, model: ModelParams) -> float:
        return outer_objective(self.ds, self.remaining, self.part, model,
                               self.acfg.lam, self.acfg.fairness_kind)

    def gradient(self, model: ModelParams) -> np.ndarray:
        v = _outer_gradient_theta(self.ds, self.remaining, self.part, model,
                                  self.acfg.lam, self.acfg.fairness_kind)
        if self.method == "second_order":
            v = self._solve(v)
            return per_sample_loss_jvp(self.pre.params, self.x_t, self.y_t, v)
        return self.acfg.tau * per_sample_loss_jvp(self.pre.params, self.x_t, self.y_t, v)


class _PartialDriver:
    """Inner state for optimizing bounded feature modifications."""

    def __init__(self, pre, ds, split, part, targets, acfg, method, ucfg):
        self.pre = pre
        self.ds = ds
        self.split = split
        self.part = part
        self.targets = np.asarray(targets, dtype=np.intp)
        self.acfg = acfg
        self.method = method
        self.ucfg = ucfg
        self.x_t = ds.features[self.targets]
        self.y_t = ds.labels[self.targets]
        self.ones = np.ones(self.targets.size)
        self.g_orig = diffmath.weighted_loss_gradient(pre.params, self.x_t, self.y_t, self.ones)
        self.remaining = np.setdiff1d(split.train_indices, self.targets)
        self.h_op = None
        if method == "second_order":
            self.h_op = hessian_operator(
                pre.params, ds.features[split.train_indices], ds.labels[split.train_indices]
            )

    def _solve(self, rhs):
        return cg_solve(self.h_op, rhs, tol=self.ucfg.cg_tol,
                        max_iters=self.ucfg.cg_max_iters, damping=self.ucfg.cg_damping)

    def unlearned(self, delta: np.ndarray) -> ModelParams:
        if not delta.any():
            return self.pre.params
        g_mod = diffmath.weighted_loss_gradient(
            self.pre.params, self.x_t - delta, self.y_t, self.ones
        )
        diff = g_mod - self.g_orig
        if self.method == "first_order":
            return self.pre.params.with_theta(self.pre.params.theta - self.acfg.tau * diff)
        return self.pre.params.with_theta(self.pre.params.theta - self._solve(diff))

    def loss(self, model: ModelParams) -> float:
        return outer_objective(self.ds, self.remaining, self.part, model,
                               self.acfg.lam, self.acfg.fairness_kind)

    def gradient(self, model: ModelParams, delta: np.ndarray) -> np.ndarray:
        v = _outer_gradient_theta(self.ds, self.remaining, self.part, model,
                                  self.acfg.lam, self.acfg.fairness_kind)
        if self.method == "second_order":
            v = self._solve(v)
            return mixed_second_derivative_batch(
                self.pre.params, self.x_t - delta, self.y_t, v
            )
        return self.acfg.tau * mixed_second_derivative_batch(
            self.pre.params, self.x_t - delta, self.y_t, v
        )


def _check_attack_inputs(split, targets, method):
    targets = np.asarray(targets, dtype=np.intp)
    if targets.size == 0:
        raise ConfigurationError("the attack needs at least one target")
    if method not in DIFFERENTIABLE_METHODS:
        raise ContractError(
            f"{method} is not differentiable; generate against a first_order "
            "surrogate and transfer (see transfer_attack)"
        )
    if not np.isin(targets, split.train_indices).all():
        raise ConfigurationError("targets must lie in the training split")
    return targets


def whole_attack(
    pre: PretrainedModel, ds: TabularDataset, split: SplitSpec, part: GroupPartition,
    targets: np.ndarray, acfg: AttackConfig, method: str = "first_order",
    ucfg: Optional[UnlearnConfig] = None,
    on_step: Optional[Callable[[int, int, np.ndarray], None]] = None,
) -> AttackResult:
    """Optimize relaxed removal weights, keep the best restart, report discretely.

    Per restart: weights start uniform in [0,1]; each of the M steps forms
    the unlearned model, evaluates the outer loss, ascends with Adam, and
    projects back onto [0,1]. The winning weights are thresholded at 0.5
    (top-1 fallback) and the discrete request is executed for the report.
    """
    targets = _check_attack_inputs(split, targets, method)
    ucfg = ucfg or UnlearnConfig(method, tau=acfg.tau)
    driver = _WholeDriver(pre, ds, split, part, targets, acfg, method, ucfg)
    best_w, best_loss, trace = None, -np.inf, []
    for r in range(acfg.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([acfg.seed, 23, r]))
        w = rng.uniform(0.0, 1.0, targets.size)
        adam = _Adam(targets.size, acfg.whole_step_size(), acfg.beta1, acfg.beta2,
                     acfg.adam_eps)
        losses = []
        for m in range(acfg.steps):
            model_u = driver.unlearned(w)
            loss = driver.loss(model_u)
            if not np.isfinite(loss):
                raise AttackError(f"non-finite outer loss (restart {r}, step {m})",
                                  restart=r, step=m)
            losses.append(loss)
            grad_w = driver.gradient(model_u)
            w = np.clip(w - adam.step(-grad_w), 0.0, 1.0)
            if on_step is not None:
                on_step(r, m, w)
        final_loss = driver.loss(driver.unlearned(w))
        losses.append(final_loss)
        trace.append((r, tuple(losses)))
        if final_loss > best_loss:
            best_loss, best_w = final_loss, w
    request = WholeRequest(targets, best_w).discretized()
    model_after = unlearn(pre, ds, split, request, ucfg)
    report = make_report(ds, split, part, pre.params, model_after)
    return AttackResult(request, float(best_loss), tuple(trace), report)


def partial_attack(
    pre: PretrainedModel, ds: TabularDataset, split: SplitSpec, part: GroupPartition,
    targets: np.ndarray, acfg: AttackConfig, method: str = "first_order",
    ucfg: Optional[UnlearnConfig] = None,
    on_step: Optional[Callable[[int, int, np.ndarray], None]] = None,
) -> AttackResult:
    """Optimize bounded modifications delta; the winning restart's request is
    clamped so every modified sample stays inside [0,1] before execution."""
    targets = _check_attack_inputs(split, targets, method)
    ucfg = ucfg or UnlearnConfig(method, tau=acfg.tau)
    eps = acfg.epsilon
    if eps < 0:
        raise ConfigurationError("epsilon must be >= 0")
    driver = _PartialDriver(pre, ds, split, part, targets, acfg, method, ucfg)
    if eps == 0.0:
        request = PartialRequest(targets, np.zeros_like(driver.x_t), 0.0)
        report = make_report(ds, split, part, pre.params, pre.params)
        loss0 = driver.loss(pre.params)
        return AttackResult(request, float(loss0), ((0, (loss0,)),), report)
    best_d, best_loss, trace = None, -np.inf, []
    for r in range(acfg.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([acfg.seed, 29, r]))
        delta = rng.uniform(-eps, eps, driver.x_t.shape)
        adam = _Adam(driver.x_t.shape, acfg.partial_step_size(), acfg.beta1,
                     acfg.beta2, acfg.adam_eps)
        losses = []
        for m in range(acfg.steps):
            model_u = driver.unlearned(delta)
            loss = driver.loss(model_u)
            if not np.isfinite(loss):
                raise AttackError(f"non-finite outer loss (restart {r}, step {m})",
                                  restart=r, step=m)
            losses.append(loss)
            grad_d = driver.gradient(model_u, delta)
            delta = np.clip(delta - adam.step(-grad_d), -eps, eps)
            if on_step is not None:
                on_step(r, m, delta)
        final_loss = driver.loss(driver.unlearned(delta))
        losses.append(final_loss)
        trace.append((r, tuple(losses)))
        if final_loss > best_loss:
            best_loss, best_d = final_loss, delta
    # modified samples must remain valid normalized records
    feasible = driver.x_t - np.clip(driver.x_t - best_d, 0.0, 1.0)
    request = PartialRequest(targets, feasible, eps)
    model_after = unlearn(pre, ds, split, request, ucfg)
    report = make_report(ds, split, part, pre.params, model_after)
    return AttackResult(request, float(best_loss), tuple(trace), report)


def attack_gradient(
    method: str, pre: PretrainedModel, ds: TabularDataset, split: SplitSpec,
    part: GroupPartition, targets: np.ndarray, variables: np.ndarray,
    acfg: AttackConfig, ucfg: Optional[UnlearnConfig] = None,
) -> np.ndarray:
    """Chain-rule gradient of the outer objective through the unlearned model.

    `variables` is either the weight vector (whole) or the delta matrix
    (partial), distinguished by its dimensionality. For the second-order
    method the inverse Hessian is treated as constant in the variables.
    """
    targets = _check_attack_inputs(split, targets, method)
    ucfg = ucfg or UnlearnConfig(method, tau=acfg.tau)
    variables = np.asarray(variables, dtype=np.float64)
    if variables.ndim == 1:
        driver = _WholeDriver(pre, ds, split, part, targets, acfg, method, ucfg)
        return driver.gradient(driver.unlearned(variables))
    driver = _PartialDriver(pre, ds, split, part, targets, acfg, method, ucfg)
    return driver.gradient(driver.unlearned(variables), variables)


BASELINE_KINDS = ("rand", "rand_min", "rand_maj", "rand_un")


def baseline_request(
    kind: str, ds: TabularDataset, split: SplitSpec, part: GroupPartition,
    budget: Optional[float] = None, epsilon: Optional[float] = None,
    seed: int = 0, targets: Optional[np.ndarray] = None,
) -> UnlearnRequest:
    """Random removal/modification baselines.

    rand draws removals uniformly from the training split; rand_min and
    rand_maj restrict to the smaller/larger sensitive group; rand_un puts
    uniform deltas on the same targets the attack used.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
    if kind == "rand_un":
        if targets is None or epsilon is None:
            raise ConfigurationError("rand_un needs the attack's targets and epsilon")
        deltas = rng.uniform(-epsilon, epsilon, (len(targets), ds.d))
        return PartialRequest(np.asarray(targets, dtype=np.intp), deltas, epsilon)
    if kind not in BASELINE_KINDS:
        raise ConfigurationError(f"unknown baseline {kind!r}; expected {BASELINE_KINDS}")
    if budget is None:
        raise ConfigurationError(f"{kind} needs a removal budget")
    count = int(np.floor(budget * split.train_indices.size))
    if kind == "rand":
        pool = split.train_indices
    else:
        g1 = np.intersect1d(part.s1_indices, split.train_indices)
        g2 = np.intersect1d(part.s2_indices, split.train_indices)
        minority, majority = (g1, g2) if g1.size <= g2.size else (g2, g1)
        pool = minority if kind == "rand_min" else majority
    if count > pool.size:
        raise ConfigurationError(
            f"budget of {count} removals exceeds the {kind} pool size {pool.size}"
        )
    chosen = np.sort(rng.choice(pool, size=count, replace=False))
    return WholeRequest(chosen, np.ones(count))


def transfer_attack(
    request: UnlearnRequest, ds: TabularDataset, split: SplitSpec, part: GroupPartition,
    target: PretrainedModel | ShardedModel, method: str,
    ucfg: Optional[UnlearnConfig] = None,
) -> FairnessReport:
    """Apply a request generated elsewhere to a (possibly different) target."""
    if isinstance(request, PartialRequest) and request.deltas.shape[1] != ds.d:
        raise ConfigurationError("request feature dimension does not match the dataset")
    ucfg = ucfg or UnlearnConfig(method)
    before = target if isinstance(target, ShardedModel) else target.params
    after = unlearn(target, ds, split, request, ucfg)
    return make_report(ds, split, part, before, after)
