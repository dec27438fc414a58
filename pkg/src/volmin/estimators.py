"""Anchor-point baseline estimators for the noise transition matrix.

The two-stage recipe: fit a model of the noisy-label posterior, then read
off transition columns at the instances where each noisy class's posterior
peaks (exactly, or at a percentile for robustness). Consistent only when
true anchor points exist in the data; the systematic bias without them is
what the joint volume-minimizing trainer avoids.

Estimators accept either trained classifier parameters or a plain callable
mapping a batch of instances to posterior rows, so estimator bias can be
studied in isolation from posterior-fitting error.
"""

from __future__ import annotations

import math

import numpy as np

from . import model, trainer


def fit_noisy_posterior(train_set, val_set, config: trainer.TrainConfig):
    """Fit the noisy-class posterior: plain cross-entropy on the noisy
    labels, transition frozen at identity, no volume term. Returns the
    trainer result; its .params field is the fitted model."""
    classes = train_set.classes
    cfg = trainer.plain_config(config)
    return trainer.train(train_set, val_set, cfg, fixed_transition=np.eye(classes))


def _as_posterior_fn(g):
    """Normalize the estimator input: classifier params or callable."""
    if isinstance(g, model.ClassifierParams):
        return lambda xs: model.forward_batch(g, xs)
    if callable(g):
        return g
    raise TypeError("expected ClassifierParams or a callable posterior model")


def _posteriors(g, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("xs must be a non-empty (n, d) array")
    p = np.asarray(_as_posterior_fn(g)(xs), dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != xs.shape[0]:
        raise ValueError("posterior model must return one row per instance")
    return p


def anchor_estimate_max(g, xs) -> np.ndarray:
    """Transition estimate with column j read at the instance maximizing
    the class-j posterior (ties resolve to the lowest index). The result
    is reported as-is; nothing forces diagonal dominance."""
    p = _posteriors(g, xs)
    picks = p.argmax(axis=0)
    return p[picks].T.copy()


def anchor_estimate_percentile(g, xs, alpha: float) -> np.ndarray:
    """Like anchor_estimate_max but column j is read at the instance
    ranked floor(alpha/100 * n) in descending class-j posterior order,
    discarding the most extreme scores as unreliable."""
    if not (0.0 < alpha < 100.0):
        raise ValueError(f"alpha must lie strictly between 0 and 100, got {alpha}")
    p = _posteriors(g, xs)
    n, classes = p.shape
    idx = min(math.floor(alpha / 100.0 * n), n - 1)
    cols = []
    for j in range(classes):
        order = np.argsort(-p[:, j], kind="stable")
        cols.append(p[order[idx]])
    return np.array(cols).T.copy()
