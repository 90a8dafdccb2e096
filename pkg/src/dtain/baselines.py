"""Comparison models: CNN, GRU, GRU+Attn, GRU+SelfAttn.

All four share the embedding layer, attention block, head, loss and
trainer with DTAIN so that benchmark differences isolate the
architecture. None of them sees the event timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .kernels import gru_sequence
from .model import (
    attention_block,
    head_forward,
    init_attention_params,
    init_gru_params,
    init_head_params,
    truncated_normal,
    _param,
)

BASELINE_KINDS = ("cnn", "gru", "gru_attn", "gru_self_attn")


@dataclass
class BaselineConfig:
    kind: str
    vocab_size: int
    d_w: int = 300
    d_m: int = 200
    attention_hidden: int = 64
    head_layers: tuple = (128, 64)
    max_len: int = 64
    num_tasks: int = 1
    conv_filters: int = 128
    kernel_sizes: tuple = (3,)
    self_attn_heads: int = 1

    def __post_init__(self):
        self.head_layers = tuple(self.head_layers)
        self.kernel_sizes = tuple(self.kernel_sizes)
        if self.kind not in BASELINE_KINDS:
            raise ConfigurationError(f"unknown baseline kind {self.kind!r}")
        if self.vocab_size < 1 or self.d_w <= 0 or self.d_m <= 0:
            raise ConfigurationError("vocab_size, d_w and d_m must be positive")
        if self.max_len < 1 or self.num_tasks < 1:
            raise ConfigurationError("max_len and num_tasks must be >= 1")
        if self.kind == "cnn":
            if self.conv_filters <= 0:
                raise ConfigurationError("conv_filters must be positive")
            if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
                raise ConfigurationError("kernel_sizes must be odd positive integers")
        if self.kind == "gru_self_attn":
            if self.self_attn_heads < 1 or self.d_w % self.self_attn_heads != 0:
                raise ConfigurationError("self_attn_heads must divide d_w")


def self_attention(h, mask, params, heads=1, prefix="selfattn"):
    """Scaled dot-product self-attention over (B, T, d); keys/queries at padded
    steps are excluded; no output projection."""
    batch, t_len, d = h.data.shape
    dh = d // heads
    flat = h.reshape((batch * t_len, d))

    def split_heads(x):
        # (B*T, d) -> (B*heads, T, dh)
        x = x.reshape((batch, t_len, heads, dh))
        x = T.transpose(x, (0, 2, 1, 3))
        return x.reshape((batch * heads, t_len, dh))

    q = split_heads(flat @ params[f"{prefix}.wq"])
    k = split_heads(flat @ params[f"{prefix}.wk"])
    v = split_heads(flat @ params[f"{prefix}.wv"])
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    key_mask = np.repeat(np.asarray(mask, dtype=bool), heads, axis=0)[:, None, :]
    attn = T.masked_softmax(scores, key_mask)
    mixed = T.matmul(attn, v)  # (B*heads, T, dh)
    mixed = mixed.reshape((batch, heads, t_len, dh))
    mixed = T.transpose(mixed, (0, 2, 1, 3)).reshape((batch, t_len, d))
    return mixed, attn


def cnn_forward(h, mask, params, kernel_sizes, capture=None):
    """Same-padded 1-d convolutions over time, ReLU, masked max-pool per filter."""
    mask_arr = np.asarray(mask, dtype=np.float64)
    hm = h * T.Tensor(mask_arr[:, :, None])  # zero padded rows: batch pad == conv pad
    t_len = h.data.shape[1]
    pooled = []
    for ks in kernel_sizes:
        pad = ks // 2
        hp = T.pad_time(hm, pad, pad)
        windows = T.concat([T.take(hp, (slice(None), slice(j, j + t_len))) for j in range(ks)],
                           axis=-1)
        batch, _, wd = windows.data.shape
        conv = windows.reshape((batch * t_len, wd)) @ params[f"conv.k{ks}.w"]
        conv = T.relu(conv + params[f"conv.k{ks}.b"])
        conv = conv.reshape((batch, t_len, conv.data.shape[-1]))
        pooled.append(T.max_over_time(conv, mask_arr))
    return pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=-1)


class BaselineModel:
    def __init__(self, config: BaselineConfig, params: dict):
        self.config = config
        self.params = params
        self.kind = config.kind

    @classmethod
    def build(cls, config: BaselineConfig, seed: int):
        rng = np.random.default_rng(seed)
        cfg = config
        params = {}
        _param(params, "embedding", truncated_normal(rng, (cfg.vocab_size, cfg.d_w)))
        out_dim = 1 if cfg.num_tasks == 1 else cfg.num_tasks
        if cfg.kind == "cnn":
            for ks in cfg.kernel_sizes:
                _param(params, f"conv.k{ks}.w", truncated_normal(rng, (ks * cfg.d_w, cfg.conv_filters)))
                _param(params, f"conv.k{ks}.b", np.zeros(cfg.conv_filters))
            head_in = cfg.conv_filters * len(cfg.kernel_sizes)
        else:
            if cfg.kind == "gru_self_attn":
                for name in ("wq", "wk", "wv"):
                    _param(params, f"selfattn.{name}", truncated_normal(rng, (cfg.d_w, cfg.d_w)))
            init_gru_params(rng, params, "gru", cfg.d_w, cfg.d_m)
            if cfg.kind in ("gru_attn", "gru_self_attn"):
                init_attention_params(rng, params, "attn", cfg.d_m, cfg.attention_hidden)
            head_in = cfg.d_m
        init_head_params(rng, params, "head", head_in, cfg.head_layers, out_dim)
        return cls(cfg, params)

    def forward_batch(self, ids, deltas, mask, capture=None) -> T.Tensor:
        """Score a padded batch; deltas are accepted for interface parity and ignored."""
        cfg = self.config
        h = T.embedding_lookup(self.params["embedding"], ids)
        if cfg.kind == "cnn":
            features = cnn_forward(h, mask, self.params, cfg.kernel_sizes)
        else:
            if cfg.kind == "gru_self_attn":
                mixed, _ = self_attention(h, mask, self.params, cfg.self_attn_heads)
                h = h + mixed
            g = gru_sequence(h, mask, self.params["gru.wx"], self.params["gru.wh"],
                             self.params["gru.b"])
            if cfg.kind == "gru":
                # right-padding carries the state, so the last step is the last real state
                features = T.take(g, (slice(None), -1))
            else:
                weights, features = attention_block(g, mask, self.params)
                if capture is not None:
                    capture["attention"] = weights.data
        return head_forward(features, self.params, cfg.head_layers, cfg.num_tasks)
