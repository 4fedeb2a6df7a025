"""Exact differentiation and dense linear algebra for the three architectures.

Gradients, Hessian-vector products, and mixed parameter-input second
derivatives are computed from the layered closed forms (forward-over-reverse
for second order), not by finite differences. ReLU is treated as locally
linear, which gives the exact Hessian almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CapacityError, ConfigurationError, NumericError, SolverError
from .models import Architecture, ModelParams, forward, softmax, unpack

EXPLICIT_HESSIAN_MAX_PARAMS = 5000


@dataclass(frozen=True)
class LinearOperator:
    """A square linear map given by its action on vectors."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ConfigurationError(f"operator expects shape ({self.dim},), got {v.shape}")
        out = self.apply(v)
        if out.shape != (self.dim,):
            raise ConfigurationError("operator changed the vector dimension")
        return out


def _check_batch(model: ModelParams, x: np.ndarray, y: np.ndarray):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    if x.shape[0] == 0:
        raise ConfigurationError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ConfigurationError(f"got {x.shape[0]} samples but {y.shape[0]} labels")
    if x.shape[1] != model.arch.input_dim:
        raise ConfigurationError(
            f"feature dimension {x.shape[1]} does not match model input {model.arch.input_dim}"
        )
    if y.min() < 0 or y.max() >= model.arch.num_classes:
        raise ConfigurationError("labels outside [0, num_classes)")
    return x, y


def _onehot(y: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _require_finite_logits(z: np.ndarray):
    bad = ~np.isfinite(z).all(axis=1)
    if bad.any():
        raise NumericError(f"non-finite logits at sample index {int(np.argmax(bad))}")


def logit_vjp(model: ModelParams, x: np.ndarray, g_logits: np.ndarray) -> np.ndarray:
    """Backpropagate per-sample logit gradients to a flat parameter gradient.

    g_logits is (n, C): the gradient of some scalar with respect to each
    sample's logits. Returns sum over samples of the parameter gradient.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, pre_acts, acts = forward(model, x, keep=True)
    layers = unpack(model)
    g = np.asarray(g_logits, dtype=np.float64)
    grads_w = [None] * len(layers)
    grads_b = [None] * len(layers)
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        grads_w[l] = g.T @ acts[l]
        grads_b[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ w) * (pre_acts[l - 1] > 0)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)])


def weighted_loss_gradient(model: ModelParams, x, y, weights) -> np.ndarray:
    """Flat gradient of sum_i weights_i * cross_entropy(sample i)."""
    x, y = _check_batch(model, x, y)
    z = forward(model, x)
    _require_finite_logits(z)
    g = softmax(z) - _onehot(y, model.arch.num_classes)
    g = g * np.asarray(weights, dtype=np.float64)[:, None]
    grad = logit_vjp(model, x, g)
    if not np.isfinite(grad).all():
        raise NumericError("non-finite loss gradient")
    return grad


def loss_gradient(model: ModelParams, x, y) -> np.ndarray:
    """Gradient of the mean cross-entropy over the batch at the given parameters."""
    x, y = _check_batch(model, x, y)
    return weighted_loss_gradient(model, x, y, np.full(x.shape[0], 1.0 / x.shape[0]))


def _r_forward(model: ModelParams, x: np.ndarray, v: np.ndarray):
    """Directional (forward-mode) pass: perturb parameters along v.

    Returns (pre_acts, acts, r_pre, r_acts) where r_pre[l] is the first-order
    change of layer l's linear output and r_acts[l] of its input.
    """
    layers = unpack(model)
    v_layers = unpack(ModelParams(model.arch, v))
    _, pre_acts, acts = forward(model, x, keep=True)
    r_a = np.zeros_like(x)
    r_acts = [r_a]
    r_pre = []
    for l, ((w, _), (rw, rb)) in enumerate(zip(layers, v_layers)):
        r_z = r_a @ w.T + acts[l] @ rw.T + rb
        r_pre.append(r_z)
        if l < len(layers) - 1:
            r_a = r_z * (pre_acts[l] > 0)
            r_acts.append(r_a)
    return pre_acts, acts, r_pre, r_acts


def per_sample_loss_jvp(model: ModelParams, x, y, v: np.ndarray) -> np.ndarray:
    """Per-sample directional derivatives v . grad_theta loss(sample i); shape (n,)."""
    x, y = _check_batch(model, x, y)
    pre_acts, _, r_pre, _ = _r_forward(model, x, v)
    p = softmax(pre_acts[-1])
    g = p - _onehot(y, model.arch.num_classes)
    return np.einsum("nc,nc->n", g, r_pre[-1])


def hessian_vector_product(model: ModelParams, x, y, v: np.ndarray) -> np.ndarray:
    """Exact H @ v for the mean-loss Hessian at the given parameters.

    Forward-over-reverse: one directional forward pass along v, then the
    perturbed backward pass. No finite differences involved.
    """
    x, y = _check_batch(model, x, y)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.arch.param_count,):
        raise ConfigurationError("v length does not match the parameter count")
    n = x.shape[0]
    layers = unpack(model)
    v_layers = unpack(ModelParams(model.arch, v))
    pre_acts, acts, r_pre, r_acts = _r_forward(model, x, v)

    p = softmax(pre_acts[-1])
    g = (p - _onehot(y, model.arch.num_classes)) / n
    # softmax Jacobian applied to the logit perturbation
    r_g = (p * r_pre[-1] - p * np.einsum("nc,nc->n", p, r_pre[-1])[:, None]) / n

    h_w = [None] * len(layers)
    h_b = [None] * len(layers)
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        rw, _ = v_layers[l]
        h_w[l] = r_g.T @ acts[l] + g.T @ r_acts[l]
        h_b[l] = r_g.sum(axis=0)
        if l > 0:
            mask = pre_acts[l - 1] > 0
            r_g = (r_g @ w + g @ rw) * mask
            g = (g @ w) * mask
    out = np.concatenate([np.concatenate([hw.ravel(), hb]) for hw, hb in zip(h_w, h_b)])
    if not np.isfinite(out).all():
        raise NumericError("non-finite Hessian-vector product")
    return out


def hessian_operator(model: ModelParams, x, y) -> LinearOperator:
    """Mean-loss Hessian at the given parameters as a LinearOperator."""
    x, y = _check_batch(model, x, y)
    dim = model.arch.param_count
    return LinearOperator(dim, lambda v: hessian_vector_product(model, x, y, v))


def dense_from_operator(op: LinearOperator) -> np.ndarray:
    """Materialize a LinearOperator column by column."""
    if op.dim > EXPLICIT_HESSIAN_MAX_PARAMS:
        raise CapacityError(f"refusing to materialize a {op.dim}x{op.dim} matrix")
    cols = np.empty((op.dim, op.dim))
    e = np.zeros(op.dim)
    for j in range(op.dim):
        e[j] = 1.0
        cols[:, j] = op(e)
        e[j] = 0.0
    return cols


def _lr_explicit_hessian(model: ModelParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Closed-form mean-loss Hessian for logistic regression.

    With S_i = diag(p_i) - p_i p_i^T the per-sample Hessian in the
    (W row-major, b) layout has blocks S_{cc'} x x^T, S_{cc'} x, and S.
    """
    n, d = x.shape
    c = model.arch.num_classes
    p = softmax(forward(model, x))
    dim = c * d + c
    h = np.zeros((dim, dim))
    for i in range(n):
        s = np.diag(p[i]) - np.outer(p[i], p[i])
        xx = np.outer(x[i], x[i])
        ww = np.kron(s, xx)
        wb = np.kron(s, x[i][:, None])  # (c*d, c)
        h[: c * d, : c * d] += ww
        h[: c * d, c * d :] += wb
        h[c * d :, : c * d] += wb.T
        h[c * d :, c * d :] += s
    return h / n


def explicit_hessian(model: ModelParams, x, y) -> np.ndarray:
    """Dense symmetric mean-loss Hessian; guarded against large models.

    LR uses its closed form; the MLPs are materialized from the
    Hessian-vector product, so independent checks should go through
    finite differences of loss_gradient instead.
    """
    x, y = _check_batch(model, x, y)
    if model.arch.param_count > EXPLICIT_HESSIAN_MAX_PARAMS:
        raise CapacityError(
            f"{model.arch.param_count} parameters exceeds the "
            f"{EXPLICIT_HESSIAN_MAX_PARAMS} dense-Hessian guard"
        )
    if model.arch.kind == "lr":
        return _lr_explicit_hessian(model, x, y)
    return dense_from_operator(hessian_operator(model, x, y))


def cg_solve(
    op: LinearOperator,
    rhs: np.ndarray,
    tol: float = 1e-6,
    max_iters: int = 200,
    damping: float = 1e-3,
    callback: Optional[Callable[[int, float], None]] = None,
) -> np.ndarray:
    """Conjugate gradients for (op + damping*I) x = rhs.

    Stops when the residual norm drops below tol * ||rhs||; raises
    SolverError (carrying the final residual) after max_iters otherwise.
    rhs = 0 returns 0 without iterating. callback(iteration, residual_norm)
    is invoked once per completed iteration.
    """
    if damping < 0:
        raise ConfigurationError("damping must be >= 0")
    rhs = np.asarray(rhs, dtype=np.float64)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(r @ r)
    for it in range(1, max_iters + 1):
        ap = op(p) + damping * p
        denom = float(p @ ap)
        if not np.isfinite(denom) or denom <= 0:
            raise SolverError(
                f"CG breakdown at iteration {it}: p.Ap = {denom}", residual=np.sqrt(rs)
            )
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        res = np.sqrt(rs_new)
        if callback is not None:
            callback(it, res)
        if res <= tol * rhs_norm:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverError(
        f"CG did not reach tol {tol:g} within {max_iters} iterations "
        f"(relative residual {np.sqrt(rs) / rhs_norm:.3e})",
        residual=np.sqrt(rs),
    )


def mixed_second_derivative_batch(model: ModelParams, x, y, v: np.ndarray) -> np.ndarray:
    """d/dx [ v . grad_theta loss ] for each sample independently; shape (n, D).

    Forward-over-reverse with the perturbation in parameter space and the
    reverse pass taken with respect to the inputs.
    """
    x, y = _check_batch(model, x, y)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.arch.param_count,):
        raise ConfigurationError("v length does not match the parameter count")
    layers = unpack(model)
    v_layers = unpack(ModelParams(model.arch, v))
    pre_acts, acts, r_pre, r_acts = _r_forward(model, x, v)

    p = softmax(pre_acts[-1])
    g = p - _onehot(y, model.arch.num_classes)
    r_g = p * r_pre[-1] - p * np.einsum("nc,nc->n", p, r_pre[-1])[:, None]
    for l in range(len(layers) - 1, 0, -1):
        w, _ = layers[l]
        rw, _ = v_layers[l]
        mask = pre_acts[l - 1] > 0
        r_g = (r_g @ w + g @ rw) * mask
        g = (g @ w) * mask
    w0, _ = layers[0]
    rw0, _ = v_layers[0]
    out = r_g @ w0 + g @ rw0
    if not np.isfinite(out).all():
        raise NumericError("non-finite mixed second derivative")
    return out


def mixed_second_derivative(model: ModelParams, x, y: int, v: np.ndarray) -> np.ndarray:
    """Single-sample d/dx [ v . grad_theta loss ]; a vector in feature space."""
    x = np.asarray(x, dtype=np.float64)
    return mixed_second_derivative_batch(model, x[None, :], np.array([y]), v)[0]
