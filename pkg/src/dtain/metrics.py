"""Scoring-quality metrics and the bid computation. Pure functions, no state."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractError, UndefinedMetricError


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ContractError(
                f"scores {self.scores.shape} and labels {self.labels.shape} must be equal 1-D"
            )
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ContractError("scores must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1)).all():
            raise ContractError("labels must be 0/1")

    @property
    def n_pos(self):
        return int(self.labels.sum())

    @property
    def n_neg(self):
        return int(self.labels.size - self.labels.sum())


def _average_ranks(x):
    """1-based ranks with ties averaged (midranks)."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    return avg[inverse]


def roc_auc(scored: ScoredSet) -> float:
    """P(random positive outranks random negative), ties counted 1/2."""
    np_, nn = scored.n_pos, scored.n_neg
    if np_ == 0 or nn == 0:
        raise UndefinedMetricError("roc_auc needs at least one positive and one negative")
    ranks = _average_ranks(scored.scores)
    pos_rank_sum = ranks[scored.labels == 1].sum()
    return float((pos_rank_sum - np_ * (np_ + 1) / 2.0) / (np_ * nn))


def prc_auc(scored: ScoredSet) -> float:
    """Area under precision-recall via step-wise sums over distinct thresholds
    (no linear interpolation, which would overestimate)."""
    n_pos = scored.n_pos
    if n_pos == 0:
        raise UndefinedMetricError("prc_auc needs at least one positive")
    order = np.argsort(-scored.scores, kind="mergesort")
    s = scored.scores[order]
    y = scored.labels[order]
    # cumulative counts at each distinct-score boundary, highest threshold first
    boundary = np.nonzero(np.diff(s))[0]
    idx = np.concatenate([boundary, [s.size - 1]])
    tp = np.cumsum(y)[idx].astype(np.float64)
    pred_pos = idx + 1.0
    precision = tp / pred_pos
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def threshold_metrics(scored: ScoredSet, threshold: float):
    """(accuracy, precision, recall) with predicted positive = score >= threshold."""
    if not 0 <= threshold <= 1:
        raise ContractError(f"threshold {threshold} outside [0, 1]")
    if scored.n_pos == 0:
        raise UndefinedMetricError("recall undefined without positives")
    pred = scored.scores >= threshold
    y = scored.labels == 1
    tp = int(np.sum(pred & y))
    accuracy = float(np.mean(pred == y))
    if not pred.any():
        raise UndefinedMetricError("precision undefined: no positive predictions")
    precision = tp / int(pred.sum())
    recall = tp / scored.n_pos
    return accuracy, precision, recall


def select_threshold(scored: ScoredSet) -> float:
    """Distinct score maximizing F1; ties resolved to the larger threshold."""
    if scored.n_pos == 0:
        raise UndefinedMetricError("threshold selection needs positives")
    best_f1, best_t = -1.0, None
    for t in np.unique(scored.scores):
        pred = scored.scores >= t
        tp = int(np.sum(pred & (scored.labels == 1)))
        p = tp / int(pred.sum())
        r = tp / scored.n_pos
        f1 = 0.0 if tp == 0 else 2 * p * r / (p + r)
        if f1 >= best_f1:
            best_f1, best_t = f1, float(t)
    return best_t


def bias(scored: ScoredSet) -> float:
    """Total predicted probability mass over total positives; 1 is calibrated."""
    if scored.n_pos == 0:
        raise UndefinedMetricError("bias undefined without positives")
    return float(scored.scores.sum() / scored.labels.sum())


def compute_bid(pcvr: float, alpha: float) -> float:
    """Maximum bid as a factored conversion probability."""
    if not 0 <= pcvr <= 1:
        raise ContractError(f"pcvr {pcvr} outside [0, 1]")
    if alpha < 0:
        raise ContractError(f"alpha must be non-negative, got {alpha}")
    return alpha * pcvr


@dataclass
class RunReportRow:
    model: str
    task: str
    roc_auc: float
    prc_auc: float
    accuracy: float
    precision: float
    recall: float
    bias: float
    threshold: float
    n_pos: int
    n_neg: int


def evaluate_scored(scored: ScoredSet, model_name: str, task: str, threshold: float) -> RunReportRow:
    accuracy, precision, recall = threshold_metrics(scored, threshold)
    return RunReportRow(
        model=model_name,
        task=task,
        roc_auc=roc_auc(scored),
        prc_auc=prc_auc(scored),
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        bias=bias(scored),
        threshold=threshold,
        n_pos=scored.n_pos,
        n_neg=scored.n_neg,
    )


def multitask_report(probs, labels, model_name="model", thresholds=None):
    """One-vs-rest rows (Task 0..K-1) from softmax columns."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ContractError(f"probs {probs.shape} incompatible with labels {labels.shape}")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
        raise ContractError("probability rows must sum to 1")
    k = probs.shape[1]
    if thresholds is None:
        thresholds = [0.5] * k
    rows = []
    for task in range(k):
        scored = ScoredSet(probs[:, task], (labels == task).astype(np.int64))
        rows.append(evaluate_scored(scored, model_name, f"Task {task}", thresholds[task]))
    return rows


REPORT_COLUMNS = [f.name for f in fields(RunReportRow)]


def write_report_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([getattr(row, c) for c in REPORT_COLUMNS])


def read_report_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(RunReportRow(
                model=rec["model"], task=rec["task"],
                roc_auc=float(rec["roc_auc"]), prc_auc=float(rec["prc_auc"]),
                accuracy=float(rec["accuracy"]), precision=float(rec["precision"]),
                recall=float(rec["recall"]), bias=float(rec["bias"]),
                threshold=float(rec["threshold"]),
                n_pos=int(rec["n_pos"]), n_neg=int(rec["n_neg"]),
            ))
    return rows
