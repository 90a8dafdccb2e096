"""GRU sequence kernel with compiled/pure-python backends.

The compiled Cython kernel is preferred; the numpy fallback is selected
automatically when the extension is missing. Set DTAIN_BACKEND=python or
DTAIN_BACKEND=compiled to force a choice (forcing an unavailable backend
raises at import).
"""

import os

import numpy as np

from .. import tensor as T
from ..errors import ConfigurationError
from . import gru_numpy

_requested = os.environ.get("DTAIN_BACKEND", "").strip().lower()

if _requested in ("python", "numpy"):
    _impl = gru_numpy
    BACKEND = "python"
elif _requested in ("", "compiled", "cython"):
    try:
        from . import _gru_cy as _impl
        BACKEND = "compiled"
    except ImportError:
        if _requested:
            raise ConfigurationError("DTAIN_BACKEND=compiled but the extension is not built")
        _impl = gru_numpy
        BACKEND = "python"
else:
    raise ConfigurationError(f"unknown DTAIN_BACKEND value {_requested!r}")


def backend_module(name=None):
    """Return a kernel module by name (default: the active backend)."""
    if name is None:
        return _impl
    if name in ("python", "numpy"):
        return gru_numpy
    if name in ("compiled", "cython"):
        from . import _gru_cy
        return _gru_cy
    raise ConfigurationError(f"unknown backend {name!r}")


def gru_sequence(x, mask, wx, wh, b, reverse=False):
    """Run a masked GRU over a (B, T, D) tensor; differentiable tape op.

    mask is a (B, T) float/bool array; masked steps carry the hidden state
    through unchanged, so right-padded batches match unpadded evaluation.
    Returns the per-step hidden states as a (B, T, H) tensor.
    """
    batch, t_len, _ = x.data.shape
    h_dim = wh.data.shape[0]
    x_tm = np.ascontiguousarray(np.swapaxes(x.data, 0, 1))
    mask_tm = np.ascontiguousarray(np.swapaxes(np.asarray(mask, dtype=np.float64), 0, 1))
    h0 = np.zeros((batch, h_dim))

    h_out, cache = _impl.gru_forward(x_tm, mask_tm, h0, wx.data, wh.data, b.data, reverse)
    out_data = np.ascontiguousarray(np.swapaxes(h_out, 0, 1))

    def bwd(g):
        g_tm = np.ascontiguousarray(np.swapaxes(g, 0, 1))
        dx, dwx, dwh, db = _impl.gru_backward(g_tm, cache)
        T._accumulate(x, np.swapaxes(dx, 0, 1))
        T._accumulate(wx, dwx)
        T._accumulate(wh, dwh)
        T._accumulate(b, db)

    return T._result(out_data, (x, wx, wh, b), bwd)
