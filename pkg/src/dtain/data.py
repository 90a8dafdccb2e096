"""Trail construction from click/buy logs: parsing, retargeting trail cutting,
negative downsampling, vocabulary building, splits, and stable serialization.

All outputs are byte-stable for fixed inputs and seeds: ordering is always
sorted or input-driven, row hashing uses md5, and floats are written with
repr (shortest round-trip form).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigurationError, DataOrderingError, DtainError

OOV_ID = 0
OOV_KEY = "<oov>"

SOURCE_TAGS = ("click", "buy", "search", "mail", "content", "ad", "site_visit", "other")


@dataclass
class RawEvent:
    uid: str
    timestamp: float  # epoch seconds
    key: str
    source: str = "other"


@dataclass
class RawTrail:
    """A trail whose events are still string keys (pre-vocabulary)."""

    id: str
    keys: list
    timestamps: list
    prediction_time: float
    label: int


@dataclass
class UserTrail:
    id: str
    event_ids: np.ndarray
    timestamps: np.ndarray
    prediction_time: float
    label: int

    def __post_init__(self):
        self.event_ids = np.asarray(self.event_ids, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)

    @property
    def length(self):
        return int(self.event_ids.shape[0])

    def validate(self, max_len, num_classes=2):
        if not 1 <= self.length <= max_len:
            raise DtainError(f"trail {self.id}: length {self.length} outside [1, {max_len}]")
        if self.event_ids.shape != self.timestamps.shape:
            raise DtainError(f"trail {self.id}: ids/timestamps length mismatch")
        if np.any(np.diff(self.timestamps) < 0):
            raise DataOrderingError(f"trail {self.id}: timestamps not sorted")
        if self.prediction_time < self.timestamps[-1]:
            raise DataOrderingError(f"trail {self.id}: prediction_time precedes last event")
        if not 0 <= self.label < num_classes:
            raise DtainError(f"trail {self.id}: label {self.label} outside [0, {num_classes})")


@dataclass
class Vocabulary:
    key_to_id: dict = field(default_factory=dict)
    id_to_key: list = field(default_factory=lambda: [OOV_KEY])
    counts: list = field(default_factory=lambda: [0])
    min_count: int = 1

    @property
    def size(self):
        return len(self.id_to_key)

    def encode(self, key):
        return self.key_to_id.get(key, OOV_ID)

    def digest(self):
        h = hashlib.md5()
        for key, count in zip(self.id_to_key, self.counts):
            h.update(f"{key}\x00{count}\x00".encode())
        return h.hexdigest()


def _parse_iso8601(text):
    for fmt in ("%Y-%m-%dT%H:%M:%S.%fZ", "%Y-%m-%dT%H:%M:%SZ"):
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc).timestamp()
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {text!r}")


def parse_recsys(clicks_path, buys_path):
    """Read click/buy CSV logs into per-session event lists.

    Clicks: session,timestamp,item,category ; buys: session,timestamp,item,price,quantity.
    A session is positive iff its id appears in the buys file. The event key is
    the category, falling back to the item id when the category is empty.
    Malformed rows are skipped and counted.
    """
    stats = {"click_rows": 0, "buy_rows": 0, "skipped_rows": 0}
    bought = set()
    try:
        with open(buys_path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                if len(row) < 1 or not row[0].strip():
                    stats["skipped_rows"] += 1
                    continue
                bought.add(row[0].strip())
                stats["buy_rows"] += 1
        sessions = {}
        with open(clicks_path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    sid = row[0].strip()
                    ts = _parse_iso8601(row[1].strip())
                    item = row[2].strip()
                    category = row[3].strip() if len(row) > 3 else ""
                    if not sid or not item:
                        raise ValueError("empty id field")
                except (IndexError, ValueError):
                    stats["skipped_rows"] += 1
                    continue
                key = category if category else item
                sessions.setdefault(sid, []).append(RawEvent(sid, ts, key, "click"))
                stats["click_rows"] += 1
    except OSError as e:
        raise DtainError(f"cannot read input file: {e}") from e
    for events in sessions.values():
        events.sort(key=lambda e: e.timestamp)
    return {sid: (events, sid in bought) for sid, events in sessions.items()}, stats


def cut_at_retargeting(events, blacklist):
    """Prefix strictly before the first event whose key is blacklisted."""
    if not blacklist:
        return list(events)
    for i, ev in enumerate(events):
        if ev.key in blacklist:
            return list(events[:i])
    return list(events)


def sessions_to_trails(sessions, blacklist=(), max_len=64):
    """Cut, truncate to the most recent max_len events, and label each session.

    The label is the session outcome (bought or not) regardless of cutting;
    prediction time is the last remaining event's timestamp. Returns
    (trails, drop_counts).
    """
    blacklist = set(blacklist)
    drops = {"no_events": 0, "empty_after_cut": 0}
    trails = []
    for sid in sorted(sessions):
        events, bought_flag = sessions[sid]
        if not events:
            drops["no_events"] += 1
            continue
        kept = cut_at_retargeting(events, blacklist)
        if not kept:
            drops["empty_after_cut"] += 1
            continue
        kept = kept[-max_len:]
        trails.append(RawTrail(
            id=sid,
            keys=[e.key for e in kept],
            timestamps=[e.timestamp for e in kept],
            prediction_time=kept[-1].timestamp,
            label=1 if bought_flag else 0,
        ))
    return trails, drops


def downsample_negatives(trails, target_positive_rate, seed):
    """Keep all positives; uniformly subsample negatives toward the target rate.

    If positives already make up at least the target share, nothing changes.
    Output preserves the original trail order.
    """
    if not 0 < target_positive_rate < 1:
        raise ConfigurationError(f"target rate {target_positive_rate} outside (0, 1)")
    pos_idx = [i for i, t in enumerate(trails) if t.label > 0]
    neg_idx = [i for i, t in enumerate(trails) if t.label == 0]
    if not pos_idx:
        raise ConfigurationError("downsampling needs at least one positive")
    want_neg = int(round(len(pos_idx) * (1.0 - target_positive_rate) / target_positive_rate))
    if len(neg_idx) <= want_neg:
        return list(trails)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(neg_idx), size=want_neg, replace=False)
    keep = set(pos_idx) | {neg_idx[i] for i in chosen}
    return [t for i, t in enumerate(trails) if i in keep]


def build_vocab(trails, min_count=1) -> Vocabulary:
    """Ids ordered by (frequency desc, key asc); rare keys fold into OOV id 0."""
    freq = {}
    for trail in trails:
        for key in trail.keys:
            freq[key] = freq.get(key, 0) + 1
    vocab = Vocabulary(min_count=min_count)
    oov_count = 0
    for key, count in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0])):
        if count >= min_count:
            vocab.key_to_id[key] = len(vocab.id_to_key)
            vocab.id_to_key.append(key)
            vocab.counts.append(count)
        else:
            oov_count += count
    vocab.counts[OOV_ID] = oov_count
    return vocab


def encode_trails(raw_trails, vocab: Vocabulary):
    return [
        UserTrail(
            id=t.id,
            event_ids=[vocab.encode(k) for k in t.keys],
            timestamps=t.timestamps,
            prediction_time=t.prediction_time,
            label=t.label,
        )
        for t in raw_trails
    ]


def _split_hash(trail_id, seed):
    digest = hashlib.md5(f"{seed}:{trail_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


def split_train_test(trails, test_fraction=0.2, seed=0):
    """Disjoint, exhaustive, deterministic split keyed on a hash of the id."""
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test_fraction {test_fraction} outside (0, 1)")
    train, test = [], []
    for trail in trails:
        (test if _split_hash(trail.id, seed) < test_fraction else train).append(trail)
    return train, test


def validate_trails(trails, max_len, num_classes=2):
    for trail in trails:
        trail.validate(max_len, num_classes)


def _fmt_num(x):
    x = float(x)
    return str(int(x)) if x == int(x) else repr(x)


def write_trails(trails, path):
    """One trail per line: id, label, prediction_time, then vid:ts pairs."""
    with open(path, "w") as fh:
        for t in trails:
            pairs = ",".join(f"{int(v)}:{_fmt_num(ts)}"
                             for v, ts in zip(t.event_ids, t.timestamps))
            fh.write(f"{t.id}\t{t.label}\t{_fmt_num(t.prediction_time)}\t{pairs}\n")


def read_trails(path):
    trails = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            tid, label, pred, pairs = line.split("\t")
            ids, stamps = [], []
            for pair in pairs.split(","):
                v, ts = pair.split(":")
                ids.append(int(v))
                stamps.append(float(ts))
            trails.append(UserTrail(tid, ids, stamps, float(pred), int(label)))
    return trails


def write_vocab(vocab: Vocabulary, path):
    with open(path, "w") as fh:
        for i, (key, count) in enumerate(zip(vocab.id_to_key, vocab.counts)):
            fh.write(f"{i}\t{key}\t{count}\n")


def read_vocab(path) -> Vocabulary:
    vocab = Vocabulary()
    vocab.id_to_key = []
    vocab.counts = []
    with open(path) as fh:
        for line in fh:
            idx, key, count = line.rstrip("\n").split("\t")
            assert int(idx) == len(vocab.id_to_key)
            vocab.id_to_key.append(key)
            vocab.counts.append(int(count))
    for i, key in enumerate(vocab.id_to_key):
        if i != OOV_ID:
            vocab.key_to_id[key] = i
    return vocab


def prepare_dataset(clicks_path, buys_path, blacklist=(), target_positive_rate=0.1,
                    min_count=1, max_len=64, test_fraction=0.2, seed=7):
    """Full pipeline: parse -> cut -> downsample -> vocab -> split -> validate.

    Returns (train, test, vocab, summary).
    """
    sessions, stats = parse_recsys(clicks_path, buys_path)
    raw, drops = sessions_to_trails(sessions, blacklist, max_len)
    raw = downsample_negatives(raw, target_positive_rate, seed)
    vocab = build_vocab(raw, min_count)
    trails = encode_trails(raw, vocab)
    num_classes = max(2, max((t.label for t in trails), default=1) + 1)
    validate_trails(trails, max_len, num_classes)
    train, test = split_train_test(trails, test_fraction, seed)
    n_pos = sum(1 for t in trails if t.label > 0)
    summary = {
        "sessions": len(sessions),
        "parse_stats": stats,
        "dropped": drops,
        "trails": len(trails),
        "positives": n_pos,
        "positive_rate": n_pos / len(trails) if trails else 0.0,
        "vocab_size": vocab.size,
        "train_size": len(train),
        "test_size": len(test),
    }
    return train, test, vocab, summary
