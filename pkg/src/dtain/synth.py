"""Synthetic trail generator with planted temporal signal types.

Each trail mixes background events with signal events; the conversion
probability is S(bias + sum over signal occurrences of theta - mu * dt),
so the generating process has exactly the temporal-gate functional form
and recoverability of (theta, mu) can be tested against ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from .data import RawTrail, build_vocab, encode_trails, split_train_test, validate_trails
from .errors import ConfigurationError

BASE_TIME = 1396310400.0  # 2014-04-01T00:00:00Z


@dataclass
class SynthSignal:
    key: str
    theta: float
    mu: float
    rate: float  # per-position probability of emitting this signal type


@dataclass
class SynthSpec:
    vocab_size: int = 40
    n_trails: int = 20000
    len_min: int = 3
    len_max: int = 30
    span_min: float = 0.5  # trail duration range, in time units
    span_max: float = 72.0
    horizon_min: float = 0.0  # prediction delay after the last event, in time units
    horizon_max: float = 0.0
    bias: float = -1.5
    signals: list = field(default_factory=list)
    task2_bias: float = 0.0
    task2_signals: list = field(default_factory=list)  # non-empty enables 3-class labels
    background_zipf: float = 1.1
    time_unit: float = 3600.0

    def __post_init__(self):
        self.signals = [s if isinstance(s, SynthSignal) else SynthSignal(**s) for s in self.signals]
        self.task2_signals = [s if isinstance(s, SynthSignal) else SynthSignal(**s)
                              for s in self.task2_signals]
        if not self.signals:
            raise ConfigurationError("synthetic spec needs at least one signal type")
        n_special = len(self.signals) + len(self.task2_signals)
        if self.vocab_size - n_special < 1:
            raise ConfigurationError("vocab_size leaves no room for background keys")
        if not 1 <= self.len_min <= self.len_max:
            raise ConfigurationError("need 1 <= len_min <= len_max")
        if not 0 < self.span_min <= self.span_max:
            raise ConfigurationError("need 0 < span_min <= span_max")
        if not 0 <= self.horizon_min <= self.horizon_max:
            raise ConfigurationError("need 0 <= horizon_min <= horizon_max")
        if sum(s.rate for s in self.signals + self.task2_signals) >= 1.0:
            raise ConfigurationError("signal rates must sum to < 1")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_dict(self):
        return asdict(self)


def synth_generate(spec: SynthSpec, seed: int):
    """Reproducible dataset of RawTrails plus a ground-truth record."""
    rng = np.random.default_rng(seed)
    specials = list(spec.signals) + list(spec.task2_signals)
    n_bg = spec.vocab_size - len(specials)
    bg_keys = [f"bg{i:03d}" for i in range(n_bg)]
    bg_p = 1.0 / np.arange(1, n_bg + 1) ** spec.background_zipf
    bg_p /= bg_p.sum()
    rates = np.array([s.rate for s in specials])
    cum_rates = np.cumsum(rates)
    multitask = bool(spec.task2_signals)
    stride = (spec.span_max + spec.horizon_max) * spec.time_unit + 60.0

    trails = []
    mean_probs = np.zeros(3 if multitask else 1)
    for i in range(spec.n_trails):
        length = int(rng.integers(spec.len_min, spec.len_max + 1))
        span = math.exp(rng.uniform(math.log(spec.span_min), math.log(spec.span_max)))
        start = BASE_TIME + i * stride
        offsets = np.sort(rng.uniform(0.0, span * spec.time_unit, size=length))
        times = np.round(start + offsets, 3)  # millisecond precision survives ISO export
        horizon = rng.uniform(spec.horizon_min, spec.horizon_max)
        pred_time = round(float(times[-1]) + horizon * spec.time_unit, 3)
        deltas = (pred_time - times) / spec.time_unit

        draw = rng.random(length)
        keys = []
        act1 = spec.bias
        act2 = spec.task2_bias
        for j in range(length):
            slot = int(np.searchsorted(cum_rates, draw[j], side="right"))
            if slot < len(specials):
                sig = specials[slot]
                keys.append(sig.key)
                contrib = sig.theta - sig.mu * deltas[j]
                if slot < len(spec.signals):
                    act1 += contrib
                else:
                    act2 += contrib
            else:
                keys.append(bg_keys[int(rng.choice(n_bg, p=bg_p))])

        p1 = 1.0 / (1.0 + math.exp(-act1))
        if multitask:
            p2 = 1.0 / (1.0 + math.exp(-act2))
            r1 = rng.random() < p1
            r2 = rng.random() < p2
            if r1 and r2:  # mutually exclusive outcomes: stronger activation wins
                label = 1 if act1 >= act2 else 2
            else:
                label = 1 if r1 else (2 if r2 else 0)
            both_to_1 = p1 * p2 if act1 >= act2 else 0.0
            both_to_2 = p1 * p2 - both_to_1
            mean_probs += [(1 - p1) * (1 - p2), p1 * (1 - p2) + both_to_1,
                           p2 * (1 - p1) + both_to_2]
        else:
            label = int(rng.random() < p1)
            mean_probs += p1

        trails.append(RawTrail(
            id=f"u{i:07d}",
            keys=keys,
            timestamps=[float(t) for t in times],
            prediction_time=pred_time,
            label=label,
        ))

    mean_probs /= spec.n_trails
    ground_truth = {
        "bias": spec.bias,
        "signals": [asdict(s) for s in spec.signals],
        "task2_bias": spec.task2_bias,
        "task2_signals": [asdict(s) for s in spec.task2_signals],
        "analytic_positive_rate": (float(1.0 - mean_probs[0]) if multitask
                                   else float(mean_probs[0])),
        "analytic_class_rates": mean_probs.tolist() if multitask else None,
        "spec": spec.to_dict(),
        "seed": seed,
    }
    return trails, ground_truth


def build_synth_dataset(spec: SynthSpec, seed: int, test_fraction=0.2):
    """Generate, encode with a fresh vocabulary, and split. Returns
    (train, test, vocab, ground_truth, summary)."""
    raw, ground_truth = synth_generate(spec, seed)
    vocab = build_vocab(raw, min_count=1)
    trails = encode_trails(raw, vocab)
    num_classes = 3 if spec.task2_signals else 2
    validate_trails(trails, spec.len_max, num_classes)
    train, test = split_train_test(trails, test_fraction, seed)
    n_pos = sum(1 for t in trails if t.label > 0)
    summary = {
        "trails": len(trails),
        "positives": n_pos,
        "positive_rate": n_pos / len(trails),
        "analytic_positive_rate": ground_truth["analytic_positive_rate"],
        "vocab_size": vocab.size,
        "train_size": len(train),
        "test_size": len(test),
        "num_classes": num_classes,
    }
    return train, test, vocab, ground_truth, summary


def _iso(ts):
    ms = int(round((ts - math.floor(ts)) * 1000.0))
    whole = math.floor(ts)
    if ms == 1000:
        whole += 1
        ms = 0
    stamp = datetime.fromtimestamp(whole, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
    return f"{stamp}.{ms:03d}Z"


def write_recsys_surrogate(raw_trails, clicks_path, buys_path):
    """Emit a clicks/buys CSV pair in the public log layout.

    Event keys become categories (items carry an i- prefix); positive trails
    get a single buy row at their prediction time.
    """
    with open(clicks_path, "w") as cf, open(buys_path, "w") as bf:
        for t in raw_trails:
            for key, ts in zip(t.keys, t.timestamps):
                cf.write(f"{t.id},{_iso(ts)},i-{key},{key}\n")
            if t.label > 0:
                bf.write(f"{t.id},{_iso(t.prediction_time)},i-{t.keys[-1]},1000,1\n")
