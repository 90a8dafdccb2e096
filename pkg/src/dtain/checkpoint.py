"""Single-file model checkpoints: config echo + named float64 arrays (npz)."""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from . import tensor as T
from .baselines import BaselineConfig, BaselineModel
from .errors import CompatibilityError, DtainError
from .model import DtainConfig, DtainModel

FORMAT_VERSION = 1


def save_checkpoint(path, model, meta=None):
    """Write kind + config + parameters + metadata to one npz file."""
    meta = dict(meta or {})
    meta.update({
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
    })
    arrays = {f"param/{name}": p.data for name, p in model.params.items()}
    np.savez(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Rebuild the model (exact 64-bit values) and return (model, meta)."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
            arrays = {k[len("param/"):]: archive[k] for k in archive.files
                      if k.startswith("param/")}
    except (OSError, KeyError, ValueError) as e:
        raise DtainError(f"cannot read checkpoint {path}: {e}") from e
    if meta.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(f"unsupported checkpoint version {meta.get('format_version')}")
    kind = meta["kind"]
    cfg = meta["config"]
    if kind == "dtain":
        model = DtainModel(DtainConfig(**cfg), {})
    else:
        model = BaselineModel(BaselineConfig(**cfg), {})
    model.params = {name: T.Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    return model, meta


def check_vocab_compatibility(meta, vocab):
    digest = meta.get("vocab_digest")
    if digest is not None and digest != vocab.digest():
        raise CompatibilityError(
            "checkpoint was trained with a different vocabulary than this dataset"
        )
