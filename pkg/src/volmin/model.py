"""Classifiers: softmax-linear and small tanh MLPs, with exact backward.

Parameters are per-layer weight matrices (fan_out x fan_in) and bias
vectors. Hidden layers (zero, one, or two) use tanh; the output layer feeds
a max-subtracted softmax. `backward_batch` propagates d(loss)/d(probability)
through the softmax Jacobian and the layers, returning exact gradients for
every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg

_INIT_STREAM = 501


@dataclass
class ClassifierParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def classes(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )


def init_classifier(
    in_dim: int, hidden: tuple[int, ...], classes: int, seed: int
) -> ClassifierParams:
    """Seeded init: weights uniform in [-a, a] with a = sqrt(6/(fan_in+fan_out)),
    biases zero. `hidden` may name at most two tanh layers; () is softmax-linear.
    """
    if len(hidden) > 2:
        raise ValueError(f"at most two hidden layers supported, got {len(hidden)}")
    if in_dim < 1 or classes < 2:
        raise ValueError(f"bad dimensions: in_dim={in_dim}, classes={classes}")
    if any(h < 1 for h in hidden):
        raise ValueError(f"hidden widths must be positive, got {hidden}")
    rng = np.random.default_rng([seed, _INIT_STREAM])
    dims = [in_dim, *hidden, classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ClassifierParams(weights, biases)


def _forward_cached(
    params: ClassifierParams, x: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (probs, activations); activations[l] is the input to layer l."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if l < last:
            h = np.tanh(z)
            acts.append(h)
        else:
            h = z
    logits = h
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, acts


def forward_batch(params: ClassifierParams, x: np.ndarray) -> np.ndarray:
    """Class-probability rows for a batch (n x in_dim) -> (n x C)."""
    x = linalg.as_matrix(x, "inputs")
    probs, _ = _forward_cached(params, x)
    return probs


def forward(params: ClassifierParams, x: np.ndarray) -> np.ndarray:
    """Single-sample probabilities."""
    x = linalg.as_vector(x, "input")
    return forward_batch(params, x[None, :])[0]


def backward_batch(
    params: ClassifierParams, x: np.ndarray, grad_probs: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of sum_b <grad_probs[b], probs[b]> w.r.t. every parameter."""
    x = linalg.as_matrix(x, "inputs")
    probs, acts = _forward_cached(params, x)
    if grad_probs.shape != probs.shape:
        raise ValueError(
            f"grad_probs shape {grad_probs.shape} != probs shape {probs.shape}"
        )
    # Softmax Jacobian: dz = p * (g - <g, p>)
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    dz = probs * (grad_probs - inner)
    grad_ws: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    grad_bs: list[np.ndarray] = [np.empty(0)] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        a_prev = acts[l]
        grad_ws[l] = dz.T @ a_prev
        grad_bs[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ params.weights[l]
            dz = da * (1.0 - acts[l] ** 2)  # through tanh
    return grad_ws, grad_bs


def backward(
    params: ClassifierParams, x: np.ndarray, grad_out: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Single-sample gradient of <grad_out, forward(params, x)>."""
    x = linalg.as_vector(x, "input")
    grad_out = linalg.as_vector(grad_out, "grad_out")
    return backward_batch(params, x[None, :], grad_out[None, :])


def save_classifier(path, params: ClassifierParams) -> None:
    blocks = []
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        blocks.append((f"layer{l}.weight", w))
        blocks.append((f"layer{l}.bias", b[None, :]))
    linalg.write_named_blocks(path, blocks)


def load_classifier(path) -> ClassifierParams:
    blocks = dict(linalg.read_named_blocks(path))
    weights, biases = [], []
    l = 0
    while f"layer{l}.weight" in blocks:
        weights.append(blocks[f"layer{l}.weight"])
        biases.append(blocks[f"layer{l}.bias"][0])
        l += 1
    if not weights:
        raise ValueError(f"{path}: no classifier layers found")
    return ClassifierParams(weights, biases)
