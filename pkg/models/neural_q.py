'''
Q-network: a small fully connected rectifier network written directly in
numpy, with an explicit backward pass for the squared TD loss and a versioned
binary checkpoint format.
'''
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"IAQNET"
CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = (128, 128)


class CheckpointError(ValueError):
    pass


@dataclass
class MlpParameters:
    """weights[i] has shape (fan_in, fan_out); biases[i] has shape (fan_out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("Need one bias vector per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"Layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(f"Layer {i} input width {W.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def architecture(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True)
class TrainingBatch:
    observations: np.ndarray
    actions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        obs = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if obs.shape[0] < 1 or not obs.shape[0] == actions.size == targets.size:
            raise ValueError("Batch needs B >= 1 matching observations, actions and targets")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "targets", targets)

    def __len__(self):
        return self.actions.size


def q_architecture(observation_size: int, n_actions: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> tuple[int, ...]:
    return (observation_size, *hidden, n_actions)


def init_parameters(architecture: Sequence[int], rng: np.random.Generator) -> MlpParameters:
    """Weights uniform in +-1/sqrt(fan_in), zero biases. Two widths give a linear net."""
    widths = [int(w) for w in architecture]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"Architecture needs >= 2 positive widths, got {widths}")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParameters(weights, biases)


def _forward_trace(params: MlpParameters, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Pre-activations z_i and layer inputs a_i for backprop."""
    if X.shape[-1] != params.architecture[0]:
        raise ValueError(f"Observation width {X.shape[-1]} != network input {params.architecture[0]}")
    inputs, pre = [], []
    a = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ W + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
    return inputs, pre


def forward(params: MlpParameters, observation: np.ndarray) -> np.ndarray:
    """Q-values for one observation (1-D) or a batch (2-D)."""
    X = np.asarray(observation, dtype=np.float64)
    _, pre = _forward_trace(params, X)
    return pre[-1]


def _selected_q(params: MlpParameters, batch: TrainingBatch) -> tuple[np.ndarray, list, list]:
    inputs, pre = _forward_trace(params, batch.observations)
    q = pre[-1]
    if np.any(batch.actions < 0) or np.any(batch.actions >= q.shape[1]):
        raise ValueError(f"Batch actions must lie in [0, {q.shape[1]})")
    return q[np.arange(len(batch)), batch.actions], inputs, pre


def loss(params: MlpParameters, batch: TrainingBatch) -> float:
    """Mean squared TD error over the batch."""
    q_sel, _, _ = _selected_q(params, batch)
    return float(np.mean((batch.targets - q_sel) ** 2))


def backward(params: MlpParameters, batch: TrainingBatch) -> MlpParameters:
    """Exact gradient of `loss`; only the taken action's output receives error."""
    q_sel, inputs, pre = _selected_q(params, batch)
    B = len(batch)

    dz = np.zeros_like(pre[-1])
    dz[np.arange(B), batch.actions] = 2.0 * (q_sel - batch.targets) / B

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for i in reversed(range(len(params.weights))):
        grad_w[i] = inputs[i].T @ dz
        grad_b[i] = dz.sum(axis=0)
        if i:
            dz = (dz @ params.weights[i].T) * (pre[i - 1] > 0.0)
    return MlpParameters(grad_w, grad_b)


def sgd_step(params: MlpParameters, gradients: MlpParameters, lr: float) -> MlpParameters:
    if lr < 0:
        raise ValueError(f"Learning rate must be >= 0, got {lr}")
    return MlpParameters(
        [W - lr * g for W, g in zip(params.weights, gradients.weights)],
        [b - lr * g for b, g in zip(params.biases, gradients.biases)],
    )


def copy_weights(params: MlpParameters) -> MlpParameters:
    """Independent deep copy (the target network)."""
    return MlpParameters([W.copy() for W in params.weights], [b.copy() for b in params.biases])


def _serialize(params: MlpParameters) -> bytes:
    arch = params.architecture
    header = CHECKPOINT_MAGIC + struct.pack(f"<II{len(arch)}I", CHECKPOINT_VERSION, len(arch), *arch)
    body = b"".join(
        W.astype("<f8").tobytes(order="C") + b.astype("<f8").tobytes()
        for W, b in zip(params.weights, params.biases)
    )
    return header + body


def parameters_checksum(params: MlpParameters) -> str:
    return hashlib.sha256(_serialize(params)).hexdigest()


def save_checkpoint(params: MlpParameters, path) -> None:
    """Header (magic, version, widths) then each layer's weights and biases as little-endian float64."""
    path = Path(path)
    path.write_bytes(_serialize(params))
    logger.info("Checkpoint saved to %s (architecture %s)", path, params.architecture)


def load_checkpoint(path) -> MlpParameters:
    data = Path(path).read_bytes()
    magic_len = len(CHECKPOINT_MAGIC)
    if len(data) < magic_len + 8 or data[:magic_len] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an IAQNET checkpoint")

    version, n_widths = struct.unpack_from("<II", data, magic_len)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    offset = magic_len + 8
    if n_widths < 2 or len(data) < offset + 4 * n_widths:
        raise CheckpointError(f"{path}: truncated header")
    arch = struct.unpack_from(f"<{n_widths}I", data, offset)
    offset += 4 * n_widths

    expected = sum((fi * fo + fo) * 8 for fi, fo in zip(arch, arch[1:]))
    if len(data) - offset != expected:
        raise CheckpointError(f"{path}: expected {expected} parameter bytes, found {len(data) - offset}")

    weights, biases = [], []
    for fan_in, fan_out in zip(arch, arch[1:]):
        W = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset).reshape(fan_in, fan_out)
        offset += fan_in * fan_out * 8
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += fan_out * 8
        weights.append(W.astype(np.float64))
        biases.append(b.astype(np.float64))
    return MlpParameters(weights, biases)
