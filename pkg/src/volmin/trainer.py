"""Joint training of the classifier and the transition matrix.

The objective is the mean cross-entropy of noisy labels under the composed
predictor (transition @ classifier probabilities) plus `lam` times the
log-determinant of the realized transition -- the volume penalty that makes
the factorization identifiable. One `loss_and_grads` call per minibatch
produces gradients for both parameter sets, and both are stepped from it.

Determinism: given a seed and a config, the run is bit-reproducible. The
per-epoch shuffle stream is derived from (seed, epoch); no other randomness
is consumed after initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg, model, noise, transition
from .fileio import atomic_write_text

_SHUFFLE_STREAM = 301

# Probabilities below this are clamped before the log; each occurrence is
# counted as a clamp event.
PROB_CLAMP = 1e-300

DEFAULT_VOLUME_WEIGHT = 1e-4

SELECTION_METRICS = ("noisy-val-accuracy", "noisy-val-loss")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str  # "sgd" | "adam"
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def sgd(lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> OptimizerSpec:
    return OptimizerSpec("sgd", lr, momentum=momentum, weight_decay=weight_decay)


def adam(
    lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> OptimizerSpec:
    return OptimizerSpec("adam", lr, beta1=beta1, beta2=beta2, eps=eps)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = DEFAULT_VOLUME_WEIGHT
    epochs: int = 150
    batch_size: int = 128
    seed: int = 0
    hidden: tuple[int, ...] = (32,)
    classifier_opt: OptimizerSpec = field(
        default_factory=lambda: sgd(1e-2, momentum=0.9, weight_decay=1e-3)
    )
    transition_opt: OptimizerSpec = field(default_factory=lambda: sgd(1e-2))
    lr_schedule: tuple[tuple[int, float], ...] = ()
    selection_metric: str = "noisy-val-loss"


class OptimizerState:
    """Per-parameter slot state for one optimizer over a list of arrays."""

    def __init__(self, spec: OptimizerSpec, params: list[np.ndarray]):
        if spec.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {spec.kind!r}")
        self.spec = spec
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(
        self,
        params: list[np.ndarray],
        grads: list[np.ndarray],
        lr_scale: float = 1.0,
        apply_weight_decay: bool = True,
    ) -> None:
        """In-place update. SGD: v <- mu v + g + wd w; w <- w - lr v."""
        spec = self.spec
        lr = spec.lr * lr_scale
        self.t += 1
        for i, (w, g) in enumerate(zip(params, grads)):
            if apply_weight_decay and spec.weight_decay:
                g = g + spec.weight_decay * w
            if spec.kind == "sgd":
                self.m[i] *= spec.momentum
                self.m[i] += g
                w -= lr * self.m[i]
            else:
                self.m[i] *= spec.beta1
                self.m[i] += (1.0 - spec.beta1) * g
                self.v[i] *= spec.beta2
                self.v[i] += (1.0 - spec.beta2) * g * g
                mhat = self.m[i] / (1.0 - spec.beta1**self.t)
                vhat = self.v[i] / (1.0 - spec.beta2**self.t)
                w -= lr * mhat / (np.sqrt(vhat) + spec.eps)


def lr_scale_at(schedule: tuple[tuple[int, float], ...], epoch: int) -> float:
    """Cumulative 1/divisor product; entry (e, d) takes effect after epoch e."""
    scale = 1.0
    for at_epoch, divisor in schedule:
        if epoch > at_epoch:
            scale /= divisor
    return scale


@dataclass
class StepStats:
    loss: float
    fidelity: float
    logdet_sign: float
    logabsdet: float
    clamp_events: int
    det_sign_events: int


def loss_and_grads(
    params: model.ClassifierParams,
    tt: transition.TrainableTransition | None,
    x: np.ndarray,
    y: np.ndarray | None,
    lam: float,
    fixed_transition: np.ndarray | None = None,
    soft_targets: np.ndarray | None = None,
):
    """Loss and exact gradients for one batch.

    Fidelity is the mean negative log of the composed probability assigned
    to each target; `soft_targets` (rows on the simplex) replaces hard
    labels with an expected cross-entropy when given. The volume term
    lam * log|det| is added whenever lam != 0 (with gradient
    lam * inverse-transpose flowing to the transition when it is trainable).

    Returns (stats, grad_weights_or_None, (grad_ws, grad_bs)).
    """
    if (tt is None) == (fixed_transition is None):
        raise ValueError("exactly one of tt / fixed_transition must be given")
    t_hat = transition.realize(tt) if tt is not None else fixed_transition
    probs, acts = model._forward_cached(params, x)
    q = probs @ t_hat.T
    n = x.shape[0]

    if soft_targets is not None:
        qc = np.maximum(q, PROB_CLAMP)
        clamp_events = int(((q < PROB_CLAMP) & (soft_targets > 0)).sum())
        fidelity = float(-(soft_targets * np.log(qc)).sum() / n)
        grad_q = -soft_targets / (n * qc)
    else:
        qy = q[np.arange(n), y]
        clamp_events = int((qy < PROB_CLAMP).sum())
        qy = np.maximum(qy, PROB_CLAMP)
        fidelity = float(-np.log(qy).mean())
        grad_q = np.zeros_like(q)
        grad_q[np.arange(n), y] = -1.0 / (n * qy)

    grad_probs = grad_q @ t_hat
    grad_t = grad_q.T @ probs

    loss = fidelity
    sign, logabs = linalg.signed_logdet(t_hat)
    det_sign_events = int(sign <= 0)
    if lam != 0.0:
        if not math.isfinite(logabs):
            raise linalg.SingularMatrixError(
                "realized transition is numerically singular"
            )
        loss = fidelity + lam * logabs
        if tt is not None:
            grad_t = grad_t + lam * linalg.inverse_transpose(t_hat)

    grad_w = transition.backward(tt, grad_t) if tt is not None else None
    grad_ws, grad_bs = _model_backward_from_cache(params, acts, probs, grad_probs)
    stats = StepStats(loss, fidelity, sign, logabs, clamp_events, det_sign_events)
    return stats, grad_w, (grad_ws, grad_bs)


def _model_backward_from_cache(params, acts, probs, grad_probs):
    """model.backward_batch without a second forward pass."""
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    dz = probs * (grad_probs - inner)
    grad_ws = [np.empty(0)] * len(params.weights)
    grad_bs = [np.empty(0)] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        grad_ws[l] = dz.T @ acts[l]
        grad_bs[l] = dz.sum(axis=0)
        if l > 0:
            dz = (dz @ params.weights[l]) * (1.0 - acts[l] ** 2)
    return grad_ws, grad_bs


# ---------------------------------------------------------------------------
# Metrics


def composed_probs(
    params: model.ClassifierParams, t_hat: np.ndarray, x: np.ndarray
) -> np.ndarray:
    return model.forward_batch(params, x) @ t_hat.T


def accuracy(params: model.ClassifierParams, x: np.ndarray, y: np.ndarray) -> float:
    """Share of argmax classifier predictions matching `y`."""
    if x.shape[0] == 0:
        return float("nan")
    pred = model.forward_batch(params, x).argmax(axis=1)
    return float((pred == y).mean())


def _val_metric(metric, params, t_hat, x, y, soft_targets) -> float:
    if x.shape[0] == 0:
        return float("nan")
    q = composed_probs(params, t_hat, x)
    target = soft_targets.argmax(axis=1) if soft_targets is not None else y
    if metric == "noisy-val-accuracy":
        return float((q.argmax(axis=1) == target).mean())
    # noisy-val-loss: negated mean composed cross-entropy, so that larger is
    # always better for selection.
    if soft_targets is not None:
        ce = -(soft_targets * np.log(np.maximum(q, PROB_CLAMP))).sum() / x.shape[0]
    else:
        ce = -np.log(np.maximum(q[np.arange(x.shape[0]), y], PROB_CLAMP)).mean()
    return float(-ce)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochRow:
    epoch: int
    fidelity: float
    logdet_sign: float
    logabsdet: float
    est_error: float | None
    val_metric: float
    det_sign_events: int


@dataclass
class TrainHistory:
    rows: list[EpochRow] = field(default_factory=list)
    aborted: str | None = None

    def to_csv(self) -> str:
        lines = ["epoch,fidelity,logdet_sign,logabsdet,est_error,val_metric,det_sign_events"]
        for r in self.rows:
            est = "" if r.est_error is None else repr(r.est_error)
            val = "" if math.isnan(r.val_metric) else repr(r.val_metric)
            lines.append(
                f"{r.epoch},{repr(r.fidelity)},{repr(r.logdet_sign)},"
                f"{repr(r.logabsdet)},{est},{val},{r.det_sign_events}"
            )
        if self.aborted:
            lines.append(f"# aborted: {self.aborted}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())


@dataclass
class TrainResult:
    params: model.ClassifierParams
    transition_weights: np.ndarray | None  # None when the transition was fixed
    transition: np.ndarray  # realized matrix of the selected epoch
    history: TrainHistory
    best_epoch: int
    aborted: str | None = None


def _labels_of(ds) -> np.ndarray:
    y = ds.y_noisy if ds.y_noisy is not None else ds.y_clean
    return np.asarray(y)


def train(
    train_set,
    val_set,
    config: TrainConfig,
    fixed_transition: np.ndarray | None = None,
    true_transition: np.ndarray | None = None,
    soft_targets: np.ndarray | None = None,
    val_soft_targets: np.ndarray | None = None,
) -> TrainResult:
    """Train on `train_set` (its noisy labels when present), selecting the
    checkpoint by the configured metric on `val_set`.

    `fixed_transition` freezes the transition at the given matrix (no
    transition updates; with lam = 0 this is exactly empirical risk
    minimization with a forward-corrected loss). `true_transition`, when
    known, is only used to record the per-epoch estimation error.
    `soft_targets` replaces the training labels with full distributions.

    A non-finite loss or a singular realized transition aborts the run: the
    last completed epoch's selection stands, and the returned history carries
    the diagnostic.

    Ties in the selection metric resolve to the LATEST epoch attaining the
    maximum (the transition keeps converging after the metric plateaus).
    """
    if config.selection_metric not in SELECTION_METRICS:
        raise ValueError(
            f"unknown selection metric {config.selection_metric!r}; "
            f"expected one of {SELECTION_METRICS}"
        )
    if config.batch_size < 1 or config.epochs < 0:
        raise ValueError("batch_size must be >= 1 and epochs >= 0")
    x_train = np.asarray(train_set.x, dtype=np.float64)
    y_train = _labels_of(train_set) if soft_targets is None else None
    x_val = np.asarray(val_set.x, dtype=np.float64)
    y_val = _labels_of(val_set) if val_soft_targets is None else None
    classes = train_set.classes
    n = x_train.shape[0]
    if n == 0:
        raise ValueError("empty training set")

    params = model.init_classifier(
        x_train.shape[1], tuple(config.hidden), classes, config.seed
    )
    tt = None if fixed_transition is not None else transition.init_weights(classes)
    if fixed_transition is not None:
        noise.validate_transition(fixed_transition, classes=classes, col_tol=1e-6)

    opt_theta = OptimizerState(config.classifier_opt, params.weights + params.biases)
    opt_w = None if tt is None else OptimizerState(config.transition_opt, [tt.weights])

    history = TrainHistory()
    best_metric = -np.inf
    best_params = params.copy()
    best_weights = None if tt is None else tt.weights.copy()
    best_epoch = 0
    aborted = None

    # Last-good fallback for aborts that happen before any epoch was scored.
    snap_params = params.copy()
    snap_weights = None if tt is None else tt.weights.copy()

    for epoch in range(1, config.epochs + 1):
        snap_params = params.copy()
        snap_weights = None if tt is None else tt.weights.copy()
        scale = lr_scale_at(config.lr_schedule, epoch)
        order = np.random.default_rng(
            [config.seed, _SHUFFLE_STREAM, epoch]
        ).permutation(n)
        fid_sum = 0.0
        sign_events = 0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                xb = x_train[idx]
                yb = None if y_train is None else y_train[idx]
                sb = None if soft_targets is None else soft_targets[idx]
                stats, grad_w, (grad_ws, grad_bs) = loss_and_grads(
                    params, tt, xb, yb, config.lam,
                    fixed_transition=fixed_transition, soft_targets=sb,
                )
                if not math.isfinite(stats.loss):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                    )
                fid_sum += stats.fidelity * len(idx)
                sign_events += stats.det_sign_events
                opt_theta.step(
                    params.weights + params.biases, grad_ws + grad_bs, scale
                )
                if tt is not None:
                    # Weight decay never touches the transition weights.
                    opt_w.step([tt.weights], [grad_w], scale, apply_weight_decay=False)
                if tt is not None and not np.isfinite(tt.weights).all():
                    raise FloatingPointError(
                        f"non-finite transition weights at epoch {epoch}"
                    )
                if not all(np.isfinite(w).all() for w in params.weights):
                    raise FloatingPointError(
                        f"non-finite classifier weights at epoch {epoch}"
                    )
        except (FloatingPointError, linalg.SingularMatrixError) as exc:
            aborted = str(exc)
            break

        t_hat = transition.realize(tt) if tt is not None else fixed_transition
        sign, logabs = linalg.signed_logdet(t_hat)
        est = (
            noise.estimation_error(true_transition, t_hat)
            if true_transition is not None
            else None
        )
        metric = _val_metric(
            config.selection_metric, params, t_hat, x_val, y_val, val_soft_targets
        )
        history.rows.append(
            EpochRow(epoch, fid_sum / n, sign, logabs, est, metric, sign_events)
        )
        if not math.isnan(metric) and metric >= best_metric:
            best_metric = metric
            best_params = params.copy()
            best_weights = None if tt is None else tt.weights.copy()
            best_epoch = epoch

    if best_epoch == 0:
        # No epoch was ever selected (empty validation set, zero epochs, or
        # an abort): fall back to the last-good state -- the start of the
        # aborted epoch, or the final state of a clean run.
        if aborted is not None:
            best_params, best_weights = snap_params, snap_weights
        else:
            best_params = params.copy()
            best_weights = None if tt is None else tt.weights.copy()
        best_epoch = len(history.rows)

    history.aborted = aborted
    if best_weights is not None:
        final_t = transition.realize(transition.TrainableTransition(best_weights))
    else:
        final_t = np.array(fixed_transition, dtype=np.float64)
    return TrainResult(
        params=best_params,
        transition_weights=best_weights,
        transition=final_t,
        history=history,
        best_epoch=best_epoch,
        aborted=aborted,
    )


def plain_config(config: TrainConfig) -> TrainConfig:
    """The same protocol with the volume term off (lam = 0)."""
    return replace(config, lam=0.0)
