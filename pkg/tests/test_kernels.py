"""GRU kernel: backend equivalence, mask semantics, gradients."""

import numpy as np
import pytest

from conftest import assert_grad_match
from dtain import kernels
from dtain import tensor as T
from dtain.kernels import backend_module, gru_numpy, gru_sequence

try:
    compiled = backend_module("compiled")
except Exception:
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def _random_case(seed, t_len=6, batch=4, d_in=5, h_dim=3, pad=True):
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(rng.normal(size=(t_len, batch, d_in)))
    mask = np.ones((t_len, batch))
    if pad:
        mask[4:, 1] = 0.0
        mask[2:, 3] = 0.0
    h0 = np.zeros((batch, h_dim))
    wx = rng.normal(size=(d_in, 3 * h_dim)) * 0.4
    wh = rng.normal(size=(h_dim, 3 * h_dim)) * 0.4
    b = rng.normal(size=(3 * h_dim,)) * 0.4
    return x, mask, h0, wx, wh, b


def test_backend_name_is_sane():
    assert kernels.BACKEND in ("python", "compiled")


@needs_compiled
@pytest.mark.parametrize("reverse", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed, reverse):
    x, mask, h0, wx, wh, b = _random_case(seed)
    h_py, c_py = gru_numpy.gru_forward(x, mask, h0, wx, wh, b, reverse)
    h_cy, c_cy = compiled.gru_forward(x, mask, h0, wx, wh, b, reverse)
    np.testing.assert_allclose(h_cy, h_py, rtol=1e-13, atol=1e-15)
    g = np.random.default_rng(seed + 100).normal(size=h_py.shape)
    outs_py = gru_numpy.gru_backward(g, c_py)
    outs_cy = compiled.gru_backward(g, c_cy)
    for a, b_ in zip(outs_py, outs_cy):
        np.testing.assert_allclose(b_, a, rtol=1e-12, atol=1e-14)


def test_masked_steps_carry_state_through():
    x, mask, h0, wx, wh, b = _random_case(0, pad=False)
    mask[3:, 2] = 0.0
    h_out, _ = gru_numpy.gru_forward(x, mask, h0, wx, wh, b)
    # once masked, the state for that row freezes at its last real value
    assert np.array_equal(h_out[3, 2], h_out[2, 2])
    assert np.array_equal(h_out[5, 2], h_out[2, 2])


def test_reverse_on_full_mask_equals_manual_flip():
    x, mask, h0, wx, wh, b = _random_case(1, pad=False)
    rev, _ = gru_numpy.gru_forward(x, mask, h0, wx, wh, b, reverse=True)
    flip, _ = gru_numpy.gru_forward(x[::-1].copy(), mask, h0, wx, wh, b, reverse=False)
    np.testing.assert_allclose(rev, flip[::-1], rtol=0, atol=0)


def test_zero_input_zero_weights_fixed_point():
    t_len, batch, d_in, h_dim = 4, 2, 3, 2
    h_out, _ = gru_numpy.gru_forward(
        np.zeros((t_len, batch, d_in)), np.ones((t_len, batch)),
        np.zeros((batch, h_dim)), np.zeros((d_in, 3 * h_dim)),
        np.zeros((h_dim, 3 * h_dim)), np.zeros(3 * h_dim))
    assert np.array_equal(h_out, np.zeros((t_len, batch, h_dim)))


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_sequence_gradients_match_finite_differences(reverse, rng):
    batch, t_len, d_in, h_dim = 2, 4, 3, 2
    x = T.Tensor(rng.normal(size=(batch, t_len, d_in)), requires_grad=True)
    mask = np.ones((batch, t_len))
    mask[1, 2:] = 0.0
    wx = T.Tensor(rng.normal(size=(d_in, 3 * h_dim)) * 0.5, requires_grad=True)
    wh = T.Tensor(rng.normal(size=(h_dim, 3 * h_dim)) * 0.5, requires_grad=True)
    b = T.Tensor(rng.normal(size=(3 * h_dim,)) * 0.5, requires_grad=True)
    w = T.Tensor(rng.normal(size=(batch, t_len, h_dim)))

    def build():
        return T.reduce_sum(gru_sequence(x, mask, wx, wh, b, reverse) * w)

    assert_grad_match(build, {"x": x, "wx": wx, "wh": wh, "b": b})


def test_padded_rows_get_no_input_gradient(rng):
    batch, t_len, d_in, h_dim = 2, 4, 3, 2
    x = T.Tensor(rng.normal(size=(batch, t_len, d_in)), requires_grad=True)
    mask = np.ones((batch, t_len))
    mask[0, 1:] = 0.0
    wx = T.Tensor(rng.normal(size=(d_in, 3 * h_dim)), requires_grad=True)
    wh = T.Tensor(rng.normal(size=(h_dim, 3 * h_dim)), requires_grad=True)
    b = T.Tensor(np.zeros(3 * h_dim), requires_grad=True)
    with T.Tape():
        loss = T.reduce_sum(gru_sequence(x, mask, wx, wh, b))
    T.backward(loss)
    assert np.array_equal(x.grad[0, 1:], np.zeros((3, d_in)))
    assert np.abs(x.grad[0, 0]).sum() > 0
