"""One-hidden-layer MLP with softmax output and hand-written backpropagation.

The network computes ``h = act(W1 x + b1)``, ``z = W2 h + b2``,
``p = softmax(z)``.  The hidden activation ``h`` is also the embedding used
for nearest-neighbour retrieval.

Gradients are exact for a *weighted sum* of per-example cross-entropy
losses, which is the only loss shape the learners need: the current example
plus retrieved neighbours, each with its own weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")
PROB_FLOOR = 1e-12
SNAPSHOT_FORMAT = "ramol-mlp"
SNAPSHOT_VERSION = 1


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        hidden, d = self.W1.shape
        n_cls = self.W2.shape[0]
        if self.b1.shape != (hidden,) or self.W2.shape != (n_cls, hidden) or self.b2.shape != (n_cls,):
            raise ValueError(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.W1, self.b1, self.W2, self.b2

    def copy(self) -> "MlpParams":
        return MlpParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(), self.activation)

    def zeros_like(self) -> "MlpParams":
        return MlpParams(*(np.zeros_like(a) for a in self.arrays()), self.activation)

    def is_finite(self) -> bool:
        # a sum over finite entries can only overflow to inf, which is a failure anyway
        return all(np.isfinite(a.sum()) for a in self.arrays())

    def equals(self, other: "MlpParams") -> bool:
        """Bit-for-bit equality of every tensor."""
        return self.activation == other.activation and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass(frozen=True)
class ForwardResult:
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class WeightedExample:
    x: np.ndarray
    y: int
    weight: float

    def __post_init__(self):
        if not self.weight >= 0:
            raise ValueError(f"example weight must be nonnegative, got {self.weight}")


def init_params(d: int, hidden_dim: int, n_classes: int, seed: int, activation: str = "relu") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if min(d, hidden_dim, n_classes) <= 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    s1 = np.sqrt(6.0 / (d + hidden_dim))
    s2 = np.sqrt(6.0 / (hidden_dim + n_classes))
    W1 = rng.uniform(-s1, s1, size=(hidden_dim, d))
    W2 = rng.uniform(-s2, s2, size=(n_classes, hidden_dim))
    return MlpParams(W1, np.zeros(hidden_dim), W2, np.zeros(n_classes), activation)


def _act(pre: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(pre, 0.0) if activation == "relu" else np.tanh(pre)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: MlpParams, x) -> ForwardResult:
    x = np.asarray(x, dtype=float)
    if x.shape != (params.input_dim,):
        raise ValueError(f"expected input of shape ({params.input_dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    h = _act(params.W1 @ x + params.b1, params.activation)
    z = params.W2 @ h + params.b2
    return ForwardResult(h, z, softmax(z))


def embed(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Hidden activations for a batch of inputs, shape (n, hidden_dim)."""
    return _act(X @ params.W1.T + params.b1, params.activation)


def cross_entropy(probs, y: int) -> float:
    probs = np.asarray(probs)
    if not 0 <= y < probs.shape[-1]:
        raise IndexError(f"label {y} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[y], PROB_FLOOR)))


def weighted_grad_arrays(params: MlpParams, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> MlpParams:
    """Gradient of ``sum_k w[k] * CE(f(X[k]), y[k])`` with respect to every parameter.

    Rows with zero weight are dropped before any arithmetic, so they cannot
    perturb the result even at the rounding level.
    """
    keep = w != 0
    if not keep.all():
        X, y, w = X[keep], y[keep], w[keep]
    if X.shape[0] == 0:
        return params.zeros_like()
    W1, b1, W2, b2 = params.arrays()
    pre = X @ W1.T + b1
    H = _act(pre, params.activation)
    P = softmax(H @ W2.T + b2)
    G = P
    G[np.arange(len(y)), y] -= 1.0
    G *= w[:, None]
    dW2 = G.T @ H
    db2 = G.sum(axis=0)
    dH = G @ W2
    if params.activation == "relu":
        dpre = dH * (pre > 0)
    else:
        dpre = dH * (1.0 - H * H)
    dW1 = dpre.T @ X
    db1 = dpre.sum(axis=0)
    return MlpParams(dW1, db1, dW2, db2, params.activation)


def weighted_grad(params: MlpParams, batch: Sequence[WeightedExample]) -> MlpParams:
    if not batch:
        raise ValueError("empty batch")
    X = np.stack([np.asarray(ex.x, dtype=float) for ex in batch])
    if X.shape[1] != params.input_dim:
        raise ValueError(f"expected inputs of dimension {params.input_dim}, got {X.shape[1]}")
    y = np.array([ex.y for ex in batch], dtype=int)
    if np.any((y < 0) | (y >= params.n_classes)):
        raise IndexError("label out of range")
    w = np.array([ex.weight for ex in batch], dtype=float)
    return weighted_grad_arrays(params, X, y, w)


def weighted_loss(params: MlpParams, batch: Sequence[WeightedExample]) -> float:
    """Weighted sum of clamped cross-entropies; the objective ``weighted_grad`` differentiates."""
    total = 0.0
    for ex in batch:
        total += ex.weight * cross_entropy(forward(params, ex.x).probs, ex.y)
    return total


def sgd_step(params: MlpParams, grads: MlpParams, lr: float) -> MlpParams:
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    if not grads.is_finite():
        raise FloatingPointError("non-finite gradient")
    new = [p - lr * g for p, g in zip(params.arrays(), grads.arrays())]
    if any(p.shape != n.shape for p, n in zip(params.arrays(), new)):
        raise ValueError("gradient shapes do not match parameters")
    return MlpParams(*new, params.activation)


# --------------------------------------------------------------------------
# Snapshots
# --------------------------------------------------------------------------


def params_to_dict(params: MlpParams) -> dict:
    return {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "activation": params.activation,
        "tensors": {
            name: {"shape": list(a.shape), "values": a.ravel(order="C").tolist()}
            for name, a in zip(("W1", "b1", "W2", "b2"), params.arrays())
        },
    }


def params_from_dict(data: dict) -> MlpParams:
    if data.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"not a parameter snapshot (format={data.get('format')!r})")
    if data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {data.get('version')!r}")
    t = data["tensors"]
    arrays = [np.array(t[n]["values"], dtype=float).reshape(t[n]["shape"]) for n in ("W1", "b1", "W2", "b2")]
    return MlpParams(*arrays, data["activation"])


def save_params(params: MlpParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh)


def load_params(path) -> MlpParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
