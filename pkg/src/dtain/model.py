"""The DTAIN network: temporal-gated embeddings, bi-GRU, attention, MLP head.

Blocks are module-level functions so they can be composed, tested and
reused by the baselines; ``DtainModel`` wires them together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DataOrderingError, EmptySequenceError
from .kernels import gru_sequence

INIT_STDDEV = 0.05
INIT_TRUNC = 2.0  # in units of stddev


@dataclass
class DtainConfig:
    vocab_size: int
    d_w: int = 300
    d_m: int = 200
    attention_hidden: int = 64
    head_layers: tuple = (128, 64)
    max_len: int = 64
    num_tasks: int = 1
    time_unit: float = 3600.0  # seconds per delta-t unit (hours by default)

    def __post_init__(self):
        self.head_layers = tuple(self.head_layers)
        if self.vocab_size < 1:
            raise ConfigurationError("vocab_size must be positive")
        if self.d_w <= 0:
            raise ConfigurationError("d_w must be positive")
        if self.d_m <= 0 or self.d_m % 2 != 0:
            raise ConfigurationError("d_m must be positive and even (split across directions)")
        if self.max_len < 1:
            raise ConfigurationError("max_len must be >= 1")
        if self.num_tasks < 1:
            raise ConfigurationError("num_tasks must be >= 1")
        if self.time_unit <= 0:
            raise ConfigurationError("time_unit must be positive")


@dataclass
class ExplanationRecord:
    """Per-event interpretability values for one trail, plus the prediction."""

    event_ids: np.ndarray
    deltas: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    gate: np.ndarray
    attention: np.ndarray
    prediction: object


@dataclass
class Prediction:
    pcvr: float | None
    task_probs: np.ndarray | None = None
    explanation: ExplanationRecord | None = None


def truncated_normal(rng, shape, stddev=INIT_STDDEV, trunc=INIT_TRUNC):
    """Normal(0, stddev) samples redrawn until within +-trunc stddevs."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > trunc
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > trunc
    return out * stddev


def _param(params, name, data):
    params[name] = T.Tensor(data, requires_grad=True)


def init_gru_params(rng, params, prefix, d_in, h_dim):
    _param(params, f"{prefix}.wx", truncated_normal(rng, (d_in, 3 * h_dim)))
    _param(params, f"{prefix}.wh", truncated_normal(rng, (h_dim, 3 * h_dim)))
    _param(params, f"{prefix}.b", np.zeros(3 * h_dim))


def init_attention_params(rng, params, prefix, d_in, hidden):
    _param(params, f"{prefix}.w1", truncated_normal(rng, (d_in, hidden)))
    _param(params, f"{prefix}.b1", np.zeros(hidden))
    _param(params, f"{prefix}.w2", truncated_normal(rng, (hidden, 1)))
    _param(params, f"{prefix}.b2", np.zeros(1))


def init_head_params(rng, params, prefix, d_in, layers, out_dim):
    width = d_in
    for i, w in enumerate(layers):
        _param(params, f"{prefix}.{i}.w", truncated_normal(rng, (width, w)))
        _param(params, f"{prefix}.{i}.b", np.zeros(w))
        width = w
    _param(params, f"{prefix}.out.w", truncated_normal(rng, (width, out_dim)))
    _param(params, f"{prefix}.out.b", np.zeros(out_dim))


def init_params(config: DtainConfig, seed: int) -> dict:
    """Fresh DTAIN parameters: truncated-normal weights, zero biases/theta/mu."""
    rng = np.random.default_rng(seed)
    params = {}
    _param(params, "embedding", truncated_normal(rng, (config.vocab_size, config.d_w)))
    _param(params, "theta", np.zeros(config.vocab_size))
    _param(params, "mu", np.zeros(config.vocab_size))
    half = config.d_m // 2
    init_gru_params(rng, params, "gru_fwd", config.d_w, half)
    init_gru_params(rng, params, "gru_bwd", config.d_w, half)
    init_attention_params(rng, params, "attn", config.d_m, config.attention_hidden)
    out_dim = 1 if config.num_tasks == 1 else config.num_tasks
    init_head_params(rng, params, "head", config.d_m, config.head_layers, out_dim)
    return params


def temporal_deltas(trail, time_unit=3600.0) -> np.ndarray:
    """Elapsed time from each event to the prediction instant, in time units."""
    ts = np.asarray(trail.timestamps, dtype=np.float64)
    if ts.size and np.any(np.diff(ts) < 0):
        raise DataOrderingError(f"trail {trail.id}: timestamps not non-decreasing")
    deltas = (float(trail.prediction_time) - ts) / float(time_unit)
    if deltas.size and deltas.min() < 0:
        raise DataOrderingError(
            f"trail {trail.id}: prediction_time precedes an event timestamp"
        )
    return deltas


def temporal_gate(event_ids, deltas, params) -> T.Tensor:
    """Per-event gate S(theta[id] - mu[id] * delta_t), differentiable in theta/mu."""
    ids = np.asarray(event_ids)
    v = params["theta"].data.shape[0]
    theta = T.embedding_lookup(params["theta"].reshape((v, 1)), ids)
    mu = T.embedding_lookup(params["mu"].reshape((v, 1)), ids)
    dt = T.Tensor(np.asarray(deltas, dtype=np.float64).reshape(ids.shape + (1,)))
    gate = T.sigmoid(theta - mu * dt)
    return gate.reshape(ids.shape)


def apply_gate(h, gate) -> T.Tensor:
    """Scale each embedding row by its scalar gate value."""
    if h.data.shape[:-1] != gate.data.shape:
        raise T.DimensionError(
            f"gate shape {gate.data.shape} does not match rows of {h.data.shape}"
        )
    return h * gate.reshape(gate.data.shape + (1,))


def bigru_forward(v, mask, params, prefix_fwd="gru_fwd", prefix_bwd="gru_bwd") -> T.Tensor:
    """Bi-directional GRU over (B, T, d_w); halves concatenated to width d_m."""
    fwd = gru_sequence(v, mask, params[f"{prefix_fwd}.wx"], params[f"{prefix_fwd}.wh"],
                       params[f"{prefix_fwd}.b"], reverse=False)
    bwd = gru_sequence(v, mask, params[f"{prefix_bwd}.wx"], params[f"{prefix_bwd}.wh"],
                       params[f"{prefix_bwd}.b"], reverse=True)
    return T.concat([fwd, bwd], axis=-1)


def attention_block(g, mask, params, prefix="attn"):
    """Two-layer scorer + masked softmax; returns (weights (B,T), summary (B,d))."""
    batch, t_len, d = g.data.shape
    flat = g.reshape((batch * t_len, d))
    hidden = T.tanh(flat @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    scores = (hidden @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]).reshape((batch, t_len))
    weights = T.masked_softmax(scores, mask)
    summary = T.matmul(weights.reshape((batch, 1, t_len)), g).reshape((batch, d))
    return weights, summary


def head_forward(s, params, head_layers, num_tasks, prefix="head") -> T.Tensor:
    """ReLU MLP; sigmoid output for binary mode, K-way softmax for multi-task."""
    x = s
    for i in range(len(head_layers)):
        x = T.relu(x @ params[f"{prefix}.{i}.w"] + params[f"{prefix}.{i}.b"])
    logits = x @ params[f"{prefix}.out.w"] + params[f"{prefix}.out.b"]
    if num_tasks == 1:
        return T.sigmoid(logits).reshape((s.data.shape[0],))
    return T.masked_softmax(logits, np.ones(logits.data.shape, dtype=bool))


class DtainModel:
    kind = "dtain"

    def __init__(self, config: DtainConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: DtainConfig, seed: int):
        return cls(config, init_params(config, seed))

    def forward_batch(self, ids, deltas, mask, capture=None) -> T.Tensor:
        """Score a padded batch; ids/deltas/mask are (B, T) arrays."""
        cfg = self.config
        h = T.embedding_lookup(self.params["embedding"], ids)
        gate = temporal_gate(ids, deltas, self.params)
        v = apply_gate(h, gate)
        g = bigru_forward(v, mask, self.params)
        weights, summary = attention_block(g, mask, self.params)
        out = head_forward(summary, self.params, cfg.head_layers, cfg.num_tasks)
        if capture is not None:
            capture["gate"] = gate.data
            capture["attention"] = weights.data
        return out

    def forward(self, trail, capture_explanation=False) -> Prediction:
        """Score one trail (truncated to the most recent max_len events)."""
        cfg = self.config
        ids, deltas = _single_trail_arrays(trail, cfg)
        mask = np.ones((1, ids.shape[1]))
        capture = {} if capture_explanation else None
        out = self.forward_batch(ids, deltas, mask, capture=capture)
        explanation = None
        if capture_explanation:
            row = ids[0]
            if cfg.num_tasks == 1:
                pred = float(out.data[0])
            else:
                pred = out.data[0].copy()
            explanation = ExplanationRecord(
                event_ids=row.copy(),
                deltas=deltas[0].copy(),
                theta=self.params["theta"].data[row].copy(),
                mu=self.params["mu"].data[row].copy(),
                gate=capture["gate"][0].copy(),
                attention=capture["attention"][0].copy(),
                prediction=pred,
            )
        if cfg.num_tasks == 1:
            return Prediction(pcvr=float(out.data[0]), explanation=explanation)
        return Prediction(pcvr=None, task_probs=out.data[0].copy(), explanation=explanation)


def _single_trail_arrays(trail, config):
    ids = np.asarray(trail.event_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptySequenceError(f"trail {trail.id} has no events")
    deltas = temporal_deltas(trail, config.time_unit)
    if ids.shape[0] > config.max_len:  # keep the most recent events
        ids = ids[-config.max_len:]
        deltas = deltas[-config.max_len:]
    return ids[None, :], deltas[None, :]
