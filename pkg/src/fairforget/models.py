"""The three classifier architectures (LR, MLP, MLP-2) over flat parameter vectors.

Parameters live in a single 1-D float64 array laid out layer by layer as
(W row-major, b). All forward/loss computations are pure numpy and batched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

HIDDEN_SIZES = {"lr": (), "mlp": (100,), "mlp2": (100, 100)}

CHECKPOINT_MAGIC = b"FFMC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Architecture descriptor; hidden widths are fixed per kind."""

    kind: str
    input_dim: int
    num_classes: int

    def __post_init__(self):
        if self.kind not in HIDDEN_SIZES:
            raise ConfigurationError(
                f"unknown architecture kind {self.kind!r}; expected one of {sorted(HIDDEN_SIZES)}"
            )
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigurationError(
                f"bad dims: input_dim={self.input_dim}, num_classes={self.num_classes}"
            )

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return HIDDEN_SIZES[self.kind]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.num_classes]

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass(frozen=True)
class ModelParams:
    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.shape != (self.arch.param_count,):
            raise ConfigurationError(
                f"theta has length {theta.shape}, arch needs ({self.arch.param_count},)"
            )
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def with_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(self.arch, theta)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int
    batch_size: int
    lr: float
    seed: int


@dataclass(frozen=True)
class PretrainedModel:
    """Final weights plus the initial weights they were trained from."""

    params: ModelParams
    initial_params: ModelParams
    training_config: TrainingConfig

    def __post_init__(self):
        if self.params.arch != self.initial_params.arch:
            raise ConfigurationError("params and initial_params use different architectures")

    @property
    def arch(self) -> Architecture:
        return self.params.arch


def unpack(model: ModelParams) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of theta as a list of (W, b) per layer; no copies."""
    dims = model.arch.layer_dims
    layers = []
    off = 0
    for i in range(len(dims) - 1):
        out_d, in_d = dims[i + 1], dims[i]
        w = model.theta[off : off + out_d * in_d].reshape(out_d, in_d)
        off += out_d * in_d
        b = model.theta[off : off + out_d]
        off += out_d
        layers.append((w, b))
    return layers


def pack(arch: Architecture, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    theta = np.concatenate(parts)
    if theta.shape != (arch.param_count,):
        raise ConfigurationError("packed layers do not match the architecture")
    return theta


def init(arch: Architecture, seed: int) -> ModelParams:
    """Uniform fan-in-scaled weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    layers = []
    for i in range(len(dims) - 1):
        out_d, in_d = dims[i + 1], dims[i]
        scale = 1.0 / np.sqrt(in_d)
        w = rng.uniform(-scale, scale, size=(out_d, in_d))
        b = np.zeros(out_d)
        layers.append((w, b))
    return ModelParams(arch, pack(arch, layers))


def forward(model: ModelParams, x: np.ndarray, keep: bool = False):
    """Batched forward pass.

    x is (n, D) or (D,). Returns logits (n, C), or (logits, pre_acts, acts)
    when keep=True; pre_acts[l] are the layer-l linear outputs, acts[l] the
    layer inputs (acts[0] is x itself).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.arch.input_dim:
        raise ConfigurationError(
            f"input has {x.shape[1]} features, model expects {model.arch.input_dim}"
        )
    layers = unpack(model)
    acts = [x]
    pre_acts = []
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        pre_acts.append(z)
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
    logits_out = pre_acts[-1]
    if keep:
        return logits_out, pre_acts, acts
    return logits_out


def logits(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Raw class scores for one sample."""
    return forward(model, x)[0]


def predict(model: ModelParams, x: np.ndarray) -> int:
    """Argmax class; ties go to the smaller index."""
    return int(np.argmax(logits(model, x)))


def predict_batch(model: ModelParams, x: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, x), axis=1)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def per_sample_loss(model: ModelParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = forward(model, x)
    y = np.asarray(y, dtype=np.intp)
    return -log_softmax(z)[np.arange(z.shape[0]), y]


def mean_loss(model: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    y = np.asarray(y)
    if y.size == 0:
        raise ConfigurationError("mean_loss needs a non-empty batch")
    return float(per_sample_loss(model, x, y).mean())


def save_checkpoint(pre: PretrainedModel, path: str | Path) -> None:
    """Binary checkpoint: magic, version, arch, training config, theta0, theta*.

    Layout (little-endian):
      4s magic "FFMC" | u32 version | u8 kind-length + kind bytes |
      u32 input_dim | u32 num_classes | u32 epochs | u32 batch_size |
      f64 lr | i64 seed | u64 param_count | param_count f64 (theta0) |
      param_count f64 (theta*)
    """
    arch = pre.arch
    cfg = pre.training_config
    kind = arch.kind.encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<B", len(kind)))
        fh.write(kind)
        fh.write(struct.pack("<IIIIdq", arch.input_dim, arch.num_classes,
                             cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed))
        fh.write(struct.pack("<Q", arch.param_count))
        fh.write(np.ascontiguousarray(pre.initial_params.theta, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(pre.params.theta, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> PretrainedModel:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ConfigurationError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        (klen,) = struct.unpack("<B", fh.read(1))
        kind = fh.read(klen).decode()
        input_dim, num_classes, epochs, batch_size, lr, seed = struct.unpack(
            "<IIIIdq", fh.read(32)
        )
        (count,) = struct.unpack("<Q", fh.read(8))
        arch = Architecture(kind, input_dim, num_classes)
        if count != arch.param_count:
            raise ConfigurationError(f"{path}: parameter count mismatch")
        theta0 = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
        theta = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
    cfg = TrainingConfig(epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
    return PretrainedModel(ModelParams(arch, theta), ModelParams(arch, theta0), cfg)
