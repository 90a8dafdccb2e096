"""Interpretability export: per-user matrices of attention / gate / theta / mu.

Rows are sampled converters, columns are trail positions right-aligned to
the sequence end (column end-0 is the last event); padded cells are empty.
The CSVs are plot-ready for external heat-map tooling.
"""

from __future__ import annotations

import csv
import os
import warnings

import numpy as np

from .errors import ConfigurationError

EXPLAINABLE_KINDS = ("dtain", "gru_attn")


def sample_converters(trails, n, seed):
    """Seeded sample of converted trails; all of them (with a warning) if fewer."""
    converters = [t for t in trails if t.label > 0]
    if len(converters) < n:
        warnings.warn(f"only {len(converters)} converters available, requested {n}")
        return converters
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(converters), size=n, replace=False)
    return [converters[i] for i in sorted(picked)]


def explanation_matrices(model, trails, n=100, seed=0):
    """Run the model with explanation capture over sampled converters.

    Returns (user_ids, matrices) where matrices maps name -> list of 1-D
    arrays (one per user, natural event order).
    """
    if model.kind not in EXPLAINABLE_KINDS:
        raise ConfigurationError(
            f"explanations need one of {EXPLAINABLE_KINDS}, got {model.kind!r}")
    sampled = sample_converters(trails, n, seed)
    user_ids = [t.id for t in sampled]
    matrices = {"attention": []}
    if model.kind == "dtain":
        matrices.update({"gate": [], "theta": [], "mu": []})
        for trail in sampled:
            record = model.forward(trail, capture_explanation=True).explanation
            matrices["attention"].append(record.attention)
            matrices["gate"].append(record.gate)
            matrices["theta"].append(record.theta)
            matrices["mu"].append(record.mu)
    else:
        from .training import assemble_batch
        for trail in sampled:
            ids, deltas, mask, _ = assemble_batch([trail], model.config.max_len, 3600.0)
            capture = {}
            model.forward_batch(ids, deltas, mask, capture=capture)
            matrices["attention"].append(capture["attention"][0])
    return user_ids, matrices


def write_matrix_csv(path, name, user_ids, rows):
    """Right-aligned matrix CSV: header names the matrix and the positions."""
    width = max((len(r) for r in rows), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([name] + [f"end-{width - 1 - j}" for j in range(width)])
        for uid, row in zip(user_ids, rows):
            cells = [""] * (width - len(row)) + [repr(float(v)) for v in row]
            writer.writerow([uid] + cells)


def read_matrix_csv(path):
    """Inverse of write_matrix_csv; empty cells come back as nan."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        user_ids, rows = [], []
        for rec in reader:
            user_ids.append(rec[0])
            rows.append(np.array([float(c) if c else np.nan for c in rec[1:]]))
    return header[0], user_ids, rows


def export_explanations(model, trails, out_dir, n=100, seed=0):
    """Write one CSV per available matrix; returns the written paths."""
    user_ids, matrices = explanation_matrices(model, trails, n, seed)
    paths = {}
    for name, rows in matrices.items():
        path = os.path.join(out_dir, f"{name}.csv")
        write_matrix_csv(path, name, user_ids, rows)
        paths[name] = path
    return user_ids, paths
