"""Loss functions, Adam with per-epoch step decay, minibatching, train loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, NumericError
from .model import temporal_deltas

LOSS_CLAMP = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    decay: float = 0.95  # multiplicative step decay per epoch
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    gradient_clip_norm: float | None = 5.0
    val_fraction: float = 0.1  # held out for threshold selection

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 < self.decay <= 1:
            raise ConfigurationError("decay must be in (0, 1]")
        for b in (self.beta1, self.beta2):
            if not 0 < b < 1:
                raise ConfigurationError("Adam betas must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size >= 1 and epochs >= 0 required")
        if not 0 <= self.val_fraction < 1:
            raise ConfigurationError("val_fraction must be in [0, 1)")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def logistic_loss(preds: T.Tensor, labels) -> T.Tensor:
    """Mean binary cross-entropy; predictions clamped away from {0, 1}."""
    y = np.asarray(labels, dtype=np.float64)
    if preds.data.shape != y.shape:
        raise ContractError(f"preds shape {preds.data.shape} != labels shape {y.shape}")
    p = T.clip(preds, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    yt = T.Tensor(y)
    ll = yt * T.log(p) + (1.0 - yt) * T.log(1.0 - p)
    return -T.reduce_mean(ll)


def multitask_loss(probs: T.Tensor, labels) -> T.Tensor:
    """Mean negative log-likelihood of the true class; rows are distributions."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probs.data.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"label out of range for {k} tasks: {labels.max()}")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    picked = T.reduce_sum(T.Tensor(onehot) * T.log(T.clip(probs, LOSS_CLAMP, 1.0)), axis=-1)
    return -T.reduce_mean(picked)


def init_adam(params: dict) -> AdamState:
    state = AdamState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1=0.9, beta2=0.999, epsilon=1e-8, clip_norm=None):
    """Bias-corrected Adam update, with optional global-norm gradient clipping."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    if clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > clip_norm:
            scale = clip_norm / total
            grads = {name: g * scale for name, g in grads.items()}
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name].data -= lr * (m / bc1) / (np.sqrt(v / bc2) + epsilon)


def assemble_batch(trails, max_len, time_unit):
    """Right-pad trails to the longest one in the batch (capped at max_len).

    Returns (ids, deltas, mask, labels); padded cells use id 0 and are fully
    masked, so they never touch the loss or the gradients.
    """
    rows = []
    for trail in trails:
        ids = np.asarray(trail.event_ids, dtype=np.int64)
        deltas = temporal_deltas(trail, time_unit)
        if ids.shape[0] > max_len:
            ids, deltas = ids[-max_len:], deltas[-max_len:]
        rows.append((ids, deltas, trail.label))
    width = max(r[0].shape[0] for r in rows)
    n = len(rows)
    ids = np.zeros((n, width), dtype=np.int64)
    deltas = np.zeros((n, width))
    mask = np.zeros((n, width))
    labels = np.empty(n, dtype=np.int64)
    for i, (eid, dt, label) in enumerate(rows):
        ids[i, : eid.shape[0]] = eid
        deltas[i, : eid.shape[0]] = dt
        mask[i, : eid.shape[0]] = 1.0
        labels[i] = label
    return ids, deltas, mask, labels


def batch_loss(model, ids, deltas, mask, labels) -> T.Tensor:
    out = model.forward_batch(ids, deltas, mask)
    if model.config.num_tasks == 1:
        return logistic_loss(out, labels)
    return multitask_loss(out, labels)


def score_trails(model, trails, batch_size=512) -> np.ndarray:
    """Model scores without taping: (N,) probabilities or (N, K) rows."""
    cfg = model.config
    outs = []
    for start in range(0, len(trails), batch_size):
        chunk = trails[start:start + batch_size]
        ids, deltas, mask, _ = assemble_batch(chunk, cfg.max_len, getattr(cfg, "time_unit", 3600.0))
        outs.append(model.forward_batch(ids, deltas, mask).data)
    return np.concatenate(outs) if outs else np.empty((0,))


def train(model, trails, config: TrainConfig):
    """Train in place; returns a history dict (losses, thresholds, wall time)."""
    from .metrics import ScoredSet, select_threshold  # local import: metrics is tape-free

    if not trails:
        raise ConfigurationError("training set is empty")
    t0 = time.perf_counter()
    cfg = model.config
    time_unit = getattr(cfg, "time_unit", 3600.0)
    rng = np.random.default_rng(config.seed)

    order = rng.permutation(len(trails))
    n_val = int(round(len(trails) * config.val_fraction))
    val = [trails[i] for i in order[:n_val]]
    train_set = [trails[i] for i in order[n_val:]]
    if not train_set:
        raise ConfigurationError("no training examples left after validation split")

    state = init_adam(model.params)
    epoch_losses = []
    for epoch in range(config.epochs):
        lr = config.learning_rate * config.decay ** epoch
        perm = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for start in range(0, len(perm), config.batch_size):
            chunk = [train_set[i] for i in perm[start:start + config.batch_size]]
            ids, deltas, mask, labels = assemble_batch(chunk, cfg.max_len, time_unit)
            for p in model.params.values():
                p.grad = None
            with T.Tape():
                loss = batch_loss(model, ids, deltas, mask, labels)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            T.backward(loss)
            grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
            adam_step(model.params, grads, state, lr, config.beta1, config.beta2,
                      config.epsilon, config.gradient_clip_norm)
            total += float(loss.data) * len(chunk)
            seen += len(chunk)
        epoch_losses.append(total / seen)

    thresholds = _select_thresholds(model, val, ScoredSet, select_threshold)
    return {
        "epoch_losses": epoch_losses,
        "thresholds": thresholds,
        "threshold_rule": "max F1 on the held-out validation split",
        "n_train": len(train_set),
        "n_val": len(val),
        "wall_time_sec": time.perf_counter() - t0,
    }


def _select_thresholds(model, val, scored_set_cls, select_fn):
    default = 0.5
    k = model.config.num_tasks
    if not val:
        return [default] if k == 1 else [default] * k
    scores = score_trails(model, val)
    labels = np.array([t.label for t in val])
    if k == 1:
        if len(set(labels.tolist())) < 2:
            return [default]
        return [select_fn(scored_set_cls(scores, labels))]
    out = []
    for task in range(k):
        ovr = (labels == task).astype(np.int64)
        if ovr.min() == ovr.max():
            out.append(default)
        else:
            out.append(select_fn(scored_set_cls(scores[:, task], ovr)))
    return out
