"""Shared test helpers: finite-difference gradient oracle and tiny fixtures."""

import numpy as np
import pytest

from dtain import tensor as T
from dtain.data import UserTrail


def finite_diff_grads(loss_fn, tensors, step=1e-5):
    """Central finite differences of loss_fn() w.r.t. every tensor coordinate.

    loss_fn must re-run the forward pass from the tensors' current data; the
    oracle never touches the tape machinery.
    """
    grads = {}
    for name, t in tensors.items():
        flat = t.data.ravel()
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            g[i] = (up - down) / (2.0 * step)
        grads[name] = g.reshape(t.data.shape)
    return grads


def tape_grads(loss_builder, tensors):
    """Gradients of loss_builder() via the tape, keyed like `tensors`."""
    for t in tensors.values():
        t.grad = None
    with T.Tape():
        loss = loss_builder()
    T.backward(loss)
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in tensors.items()}


def assert_grad_match(loss_builder, tensors, rtol=1e-4, atol=1e-7, step=1e-5):
    """Check tape gradients against the finite-difference oracle."""
    analytic = tape_grads(loss_builder, tensors)
    numeric = finite_diff_grads(lambda: float(loss_builder().data), tensors, step)
    for name in tensors:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n)
        tol = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        worst = np.argmax(err - tol)
        assert (err <= tol).all(), (
            f"{name}: gradient mismatch at flat index {worst}: "
            f"tape={a.ravel()[worst]:.10g} fd={n.ravel()[worst]:.10g}"
        )


def nudge_params(params, seed=0, scale=0.02):
    """Shift every parameter by small random offsets.

    Keeps ReLU/clip pre-activations away from their kinks, where central
    differences are not a valid derivative oracle, and moves zero-initialized
    parameters (biases, theta, mu) off their stationary points.
    """
    rng = np.random.default_rng(seed)
    for t in params.values():
        t.data += rng.uniform(0.25 * scale, scale, size=t.data.shape) * \
            np.where(rng.random(t.data.shape) < 0.5, -1.0, 1.0)


def make_trail(tid, ids, timestamps, prediction_time=None, label=0):
    timestamps = list(timestamps)
    if prediction_time is None:
        prediction_time = timestamps[-1]
    return UserTrail(tid, ids, timestamps, prediction_time, label)


@pytest.fixture
def rng():
    return np.random.default_rng(20240)
