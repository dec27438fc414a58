"""Trainable transition matrix: construction, realization, volume, backward.

The matrix is parameterized so that any finite weights realize a valid
transition: off-diagonal gates are sigmoids of free weights, the diagonal
gate is pinned at 1, and each column is normalized by its gate sum. That
makes every realized column sum to 1 with the diagonal entry strictly
largest in its column, for any finite weights. Diagonal weight entries carry
no parameters (kept at 0 and ignored); gradients flow only to off-diagonal
weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg


@dataclass
class TrainableTransition:
    """Free weights of the transition parameterization (C x C, diagonal unused)."""

    weights: np.ndarray

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "TrainableTransition":
        return TrainableTransition(self.weights.copy())


def default_init_weight(classes: int) -> float:
    """Default off-diagonal weight: ln(1/(C-2)) for C >= 3, -2 for C = 2.

    At ln(1/(C-2)) every gate equals 1/(C-1), so the realized matrix starts
    at diagonal 1/2 with the rest of each column spread uniformly.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if classes == 2:
        return -2.0
    return math.log(1.0 / (classes - 2))


def init_weights(classes: int, value: float | None = None) -> TrainableTransition:
    """Fresh weights, all off-diagonal entries at `value` (default above)."""
    if value is None:
        value = default_init_weight(classes)
    w = np.full((classes, classes), float(value))
    np.fill_diagonal(w, 0.0)
    return TrainableTransition(w)


def _sigmoid(w: np.ndarray) -> np.ndarray:
    out = np.empty_like(w)
    pos = w >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-w[pos]))
    ew = np.exp(w[~pos])
    out[~pos] = ew / (1.0 + ew)
    return out


def _gates(weights: np.ndarray) -> np.ndarray:
    a = _sigmoid(weights)
    np.fill_diagonal(a, 1.0)
    return a


def _column_sums(a: np.ndarray) -> np.ndarray:
    # fsum is exactly rounded, hence order-independent: realization commutes
    # with class permutations bit-for-bit.
    return np.array([math.fsum(a[:, j]) for j in range(a.shape[1])])


def realize(tt: TrainableTransition) -> np.ndarray:
    """Realized transition matrix: gates normalized per column."""
    w = linalg.as_matrix(tt.weights, "transition weights")
    if w.shape[0] != w.shape[1] or w.shape[0] < 2:
        raise ValueError(f"weights must be square with C >= 2, got {w.shape}")
    a = _gates(w)
    return a / _column_sums(a)


def volume(tt: TrainableTransition) -> tuple[float, float]:
    """(sign, log|det|) of the realized matrix."""
    return linalg.signed_logdet(realize(tt))


def backward(tt: TrainableTransition, grad_output: np.ndarray) -> np.ndarray:
    """Map d(loss)/d(realized matrix) to d(loss)/d(weights).

    Chain: through the column normalization, then the sigmoid gates. The
    diagonal receives zero gradient (it carries no parameters).
    """
    w = linalg.as_matrix(tt.weights, "transition weights")
    grad_output = linalg.as_matrix(grad_output, "grad_output")
    if grad_output.shape != w.shape:
        raise ValueError(
            f"grad_output shape {grad_output.shape} != weights shape {w.shape}"
        )
    a = _gates(w)
    s = _column_sums(a)
    t_hat = a / s
    # d T[k,j] / d A[i,j] = (delta_ki - T[k,j]) / s_j
    grad_gates = (grad_output - (grad_output * t_hat).sum(axis=0, keepdims=True)) / s
    grad_w = grad_gates * a * (1.0 - a)
    np.fill_diagonal(grad_w, 0.0)
    return grad_w
