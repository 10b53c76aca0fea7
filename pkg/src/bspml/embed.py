"""Small feedforward embedding network with L2-normalized output.

Parameters are enumerated in a fixed order (per layer: weight matrix in
row-major order, then bias) so gradients can travel as flat vectors.
Hidden layers use the chosen nonlinearity, the last layer is linear and
is followed by L2 normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, IngestionError, NumericError

NORM_EPS = 1e-12
ACTIVATIONS = ("tanh", "relu")
CHECKPOINT_MAGIC = "bspml-checkpoint v1"


@dataclass(frozen=True, eq=False)
class EmbeddingModel:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise ContractError(f"layer {i}: bias shape {b.shape} vs weight {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ContractError(f"layer {i}: input width does not match previous layer")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b]
        return np.concatenate(parts)

    def with_params(self, flat) -> "EmbeddingModel":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ContractError(f"expected {self.n_params} parameters, got {flat.shape}")
        weights, biases, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + W.size].reshape(W.shape).copy())
            pos += W.size
            biases.append(flat[pos:pos + b.size].copy())
            pos += b.size
        return EmbeddingModel(tuple(weights), tuple(biases), self.activation)


def init_model(input_dim: int, output_dim: int = 8, hidden=(32,), activation="tanh",
               seed: int = 0) -> EmbeddingModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EmbeddingModel(tuple(weights), tuple(biases), activation)


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, a):
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(np.float64)


def _forward_cache(model: EmbeddingModel, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ContractError(f"expected inputs of dimension {model.input_dim}, got shape {X.shape}")
    acts, pre = [X], []
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W.T + b
        pre.append(z)
        h = z if i == last else _act(model.activation, z)
        acts.append(h)
    return acts, pre


def embed(model: EmbeddingModel, X) -> np.ndarray:
    """Row-wise unit-norm embeddings for a batch ``X`` of shape (n, M)."""
    acts, _ = _forward_cache(model, X)
    v = acts[-1]
    return v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), NORM_EPS)


def forward(model: EmbeddingModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("forward takes a single feature vector; use embed for batches")
    return embed(model, x[None, :])[0]


def similarity(e_i, e_j) -> float:
    return float(np.dot(e_i, e_j))


def backward(model: EmbeddingModel, X, upstream) -> np.ndarray:
    """Flat parameter gradient of a scalar loss given dLoss/d(embedding) per row.

    The Jacobian of the final normalization is included. A zero
    pre-normalization vector has no defined Jacobian and raises.
    """
    acts, pre = _forward_cache(model, X)
    upstream = np.asarray(upstream, dtype=np.float64)
    v = acts[-1]
    if upstream.shape != v.shape:
        raise ContractError(f"upstream shape {upstream.shape} does not match outputs {v.shape}")
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise NumericError("zero embedding before normalization; gradient undefined")
    y = v / norms
    # d(v/|v|) applied to g: (g - y <y, g>) / |v|
    delta = (upstream - y * np.sum(y * upstream, axis=1, keepdims=True)) / norms
    grads_W, grads_b = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        grads_W.append(delta.T @ acts[i])
        grads_b.append(delta.sum(axis=0))
        if i:
            delta = (delta @ model.weights[i]) * _act_grad(model.activation, pre[i - 1], acts[i])
    parts = []
    for gW, gb in zip(reversed(grads_W), reversed(grads_b)):
        parts += [gW.ravel(), gb]
    return np.concatenate(parts)


def sgd_step(model: EmbeddingModel, grads, lr: float) -> EmbeddingModel:
    grads = np.asarray(grads, dtype=np.float64)
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient; step refused")
    return model.with_params(model.params() - lr * grads)


def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Text checkpoint: magic line, activation, layer sizes, then one
    parameter per line in enumeration order (``repr`` round-trips exactly)."""
    lines = [CHECKPOINT_MAGIC, model.activation, " ".join(map(str, model.layer_sizes))]
    lines += [repr(float(p)) for p in model.params()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> EmbeddingModel:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 3 or lines[0] != CHECKPOINT_MAGIC:
        raise IngestionError(f"{path}: not a bspml checkpoint")
    try:
        sizes = [int(s) for s in lines[2].split()]
        flat = np.array([float(s) for s in lines[3:]])
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from None
    if len(sizes) < 2:
        raise IngestionError(f"{path}: need at least input and output sizes")
    skeleton = EmbeddingModel(
        tuple(np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])),
        tuple(np.zeros(o) for o in sizes[1:]),
        lines[1],
    )
    if flat.size != skeleton.n_params:
        raise IngestionError(f"{path}: expected {skeleton.n_params} parameters, found {flat.size}")
    return skeleton.with_params(flat)
