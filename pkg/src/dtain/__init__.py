"""Time-aware conversion prediction on user activity trails.

DTAIN model (temporal-gated embeddings, bi-GRU, attention summarizer),
four sequence baselines, a from-scratch autodiff engine, the data
pipeline, training loop, evaluation metrics, and a CLI.
"""

__version__ = "0.1.0"

from .tensor import Tape, Tensor, backward

__all__ = ["Tape", "Tensor", "backward", "__version__"]
