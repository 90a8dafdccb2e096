"""Autodiff core: forward values, backward rules, error contracts."""

import mpmath
import numpy as np
import pytest

from conftest import assert_grad_match
from dtain import tensor as T
from dtain.errors import (
    ContractError,
    DimensionError,
    EmptySequenceError,
    TapeReuseError,
    VocabularyError,
)


class TestMatmul:
    def test_identity(self):
        a = T.Tensor(np.eye(2))
        b = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.matmul(a, b).data, b.data)

    def test_hand_computed(self):
        out = T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as err:
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))
        assert "(2, 3)" in str(err.value)

    def test_gradient_matches_finite_differences(self, rng):
        a = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        assert_grad_match(lambda: T.reduce_sum(T.matmul(a, b)),
                          {"a": a, "b": b}, rtol=1e-6)

    def test_batched(self, rng):
        a = T.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
        out = T.matmul(a, b)
        assert out.data.shape == (2, 3, 5)
        assert np.allclose(out.data, a.data @ b.data)
        assert_grad_match(lambda: T.reduce_sum(T.matmul(a, b) * T.Tensor(np.ones((2, 3, 5)))),
                          {"a": a, "b": b}, rtol=1e-6)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(T.Tensor(0.0)).data == 0.5

    def test_relu(self):
        assert T.relu(T.Tensor(-3.0)).data == 0.0
        assert T.relu(T.Tensor(3.0)).data == 3.0

    def test_sigmoid_derivative_at_zero(self):
        x = T.Tensor(0.0, requires_grad=True)
        with T.Tape():
            y = T.sigmoid(x)
        T.backward(y)
        assert abs(x.grad - 0.25) <= 1e-15
        # and against central differences
        h = 1e-6
        fd = (1 / (1 + np.exp(-h)) - 1 / (1 + np.exp(h))) / (2 * h)
        assert abs(x.grad - fd) <= 1e-8

    def test_binary_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(T.Tensor(np.ones(3)), T.Tensor(np.ones(4)))

    def test_broadcast_backward_sums(self):
        row = T.Tensor(np.ones(3), requires_grad=True)
        mat = T.Tensor(np.ones((4, 3)), requires_grad=True)
        with T.Tape():
            loss = T.reduce_sum(mat + row)
        T.backward(loss)
        assert np.array_equal(row.grad, np.full(3, 4.0))
        assert np.array_equal(mat.grad, np.ones((4, 3)))

    def test_sigmoid_strictly_inside_unit_interval(self, rng):
        x = T.Tensor(rng.normal(scale=30.0, size=200))
        out = T.sigmoid(x).data
        assert (out > 0).all() and (out < 1).all()


class TestMaskedSoftmax:
    def test_uniform_over_equal_scores(self):
        out = T.masked_softmax(T.Tensor([1.0, 1.0, 1.0]), np.array([True, True, True]))
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_single_unmasked_entry(self):
        out = T.masked_softmax(T.Tensor([5.0, 0.0]), np.array([True, False]))
        assert out.data.tolist() == [1.0, 0.0]

    def test_large_scores_match_arbitrary_precision(self):
        # oracle: exp at 50 decimal digits, no stabilization tricks
        mpmath.mp.dps = 50
        e1000, e999 = mpmath.exp(1000), mpmath.exp(999)
        expected = [float(e1000 / (e1000 + e999)), float(e999 / (e1000 + e999))]
        out = T.masked_softmax(T.Tensor([1000.0, 999.0]), np.array([True, True]))
        assert np.isfinite(out.data).all()
        assert np.allclose(out.data, expected, atol=1e-15)

    def test_all_masked_raises(self):
        with pytest.raises(EmptySequenceError):
            T.masked_softmax(T.Tensor([[1.0, 2.0], [3.0, 4.0]]),
                             np.array([[True, True], [False, False]]))

    def test_distribution_property(self):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            scores = T.Tensor(rng.normal(scale=100, size=(4, 7)))
            mask = rng.random((4, 7)) < 0.6
            mask[:, 0] = True
            out = T.masked_softmax(scores, mask).data
            assert (out >= 0).all() and (out <= 1).all()
            assert np.abs(out.sum(axis=-1) - 1.0).max() <= 1e-12
            assert (out[~mask] == 0).all()

    def test_gradient(self, rng):
        scores = T.Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        mask = np.array([[True, True, False, True, True]] * 2)
        w = T.Tensor(rng.normal(size=(2, 5)))
        assert_grad_match(lambda: T.reduce_sum(T.masked_softmax(scores, mask) * w),
                          {"scores": scores})


class TestEmbeddingLookup:
    def test_gather(self):
        table = T.Tensor(np.arange(6.0).reshape(3, 2))
        out = T.embedding_lookup(table, np.array([2, 0]))
        assert out.data.tolist() == [[4.0, 5.0], [0.0, 1.0]]

    def test_repeated_ids_accumulate(self, rng):
        table = T.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        upstream = np.array([[1.0, 2.0], [10.0, 20.0]])
        with T.Tape():
            loss = T.reduce_sum(T.embedding_lookup(table, np.array([1, 1])) * T.Tensor(upstream))
        T.backward(loss)
        assert np.array_equal(table.grad[1], upstream.sum(axis=0))
        assert np.array_equal(table.grad[0], np.zeros(2))

    def test_gradient_matches_finite_differences(self, rng):
        table = T.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        ids = np.array([[0, 2], [4, 2]])
        w = T.Tensor(rng.normal(size=(2, 2, 3)))
        assert_grad_match(lambda: T.reduce_sum(T.embedding_lookup(table, ids) * w),
                          {"table": table}, rtol=1e-6)

    def test_out_of_range_id_carried_in_error(self):
        table = T.Tensor(np.zeros((3, 2)))
        with pytest.raises(VocabularyError) as err:
            T.embedding_lookup(table, np.array([1, 7]))
        assert err.value.event_id == 7


class TestReduce:
    def test_sum(self):
        assert T.reduce_sum(T.Tensor([1.0, 2.0, 3.0])).data == 6.0

    def test_mean(self):
        assert T.reduce_mean(T.Tensor([2.0, 4.0])).data == 3.0

    def test_mean_gradient_distributes(self):
        x = T.Tensor(np.arange(4.0), requires_grad=True)
        with T.Tape():
            loss = T.reduce_mean(x)
        T.backward(loss)
        assert np.array_equal(x.grad, np.full(4, 0.25))

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            T.reduce_sum(T.Tensor(np.ones((2, 2))), axis=5)


class TestBackward:
    def test_power_rule(self):
        x = T.Tensor(3.0, requires_grad=True)
        with T.Tape():
            loss = x * x
        T.backward(loss)
        assert x.grad == 6.0

    def test_fanout_accumulates(self):
        x = T.Tensor(1.0, requires_grad=True)
        with T.Tape():
            loss = x + x
        T.backward(loss)
        assert x.grad == 2.0

    def test_composite_graph_matches_finite_differences(self, rng):
        w = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(4,)), requires_grad=True)
        x = T.Tensor(rng.normal(size=(2, 3)))

        def build():
            return T.reduce_sum(T.sigmoid(T.matmul(x, w) + b))

        assert_grad_match(build, {"w": w, "b": b}, rtol=1e-5)

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with T.Tape():
            y = x * 2.0
        with pytest.raises(ContractError):
            T.backward(y)

    def test_dead_tape_rejected(self):
        x = T.Tensor(2.0, requires_grad=True)
        with T.Tape():
            loss = x * x
        T.backward(loss)
        with pytest.raises(TapeReuseError):
            T.backward(loss)

    def test_loss_without_tape_rejected(self):
        with pytest.raises(ContractError):
            T.backward(T.Tensor(1.0))

    def test_backward_deterministic(self, rng):
        data = rng.normal(size=(4, 4))

        def run():
            w = T.Tensor(data.copy(), requires_grad=True)
            with T.Tape():
                loss = T.reduce_sum(T.tanh(T.matmul(w, w)))
            T.backward(loss)
            return w.grad

        first, second = run(), run()
        assert np.array_equal(first, second)


def _kitchen_sink_loss(params, ids, mask):
    """Composite graph touching every differentiable primitive once."""
    batch = ids.shape[0]
    emb = T.embedding_lookup(params["table"], ids)           # (B, L, d)
    gated = emb * T.sigmoid(params["gate"])                   # broadcast mul
    padded = T.pad_time(gated, 1, 1)
    window = T.take(padded, (slice(None), slice(0, ids.shape[1])))
    mixed = T.matmul(window, params["w3"])                    # batched matmul
    pooled = T.max_over_time(T.relu(mixed), mask)
    flat = T.concat([pooled, T.tanh(pooled)], axis=-1)       # (B, 4)
    scores = T.matmul(flat, params["w2"])                    # (B, 1)
    attn = T.masked_softmax(T.transpose(scores, (1, 0)), np.ones((1, batch), dtype=bool))
    picked = T.reduce_sum(attn.reshape((batch,)) * T.exp(T.take(pooled, (slice(None), 0))))
    safe = T.log(T.clip(picked + 2.0, 1e-6, 1e6))
    return T.reduce_mean(safe - T.reduce_sum(params["w2"]))


class TestEveryPrimitiveAgainstFiniteDifferences:
    @pytest.mark.parametrize("seed", range(20))
    def test_composite(self, seed):
        rng = np.random.default_rng(seed)
        ids = rng.integers(0, 5, size=(3, 4))
        mask = np.ones((3, 4), dtype=bool)
        mask[2, 2:] = False
        params = {
            "table": T.Tensor(rng.normal(size=(5, 2)), requires_grad=True),
            "gate": T.Tensor(rng.normal(size=(2,)), requires_grad=True),
            "w3": T.Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True),
            "w2": T.Tensor(rng.normal(size=(4, 1)), requires_grad=True),
        }
        assert_grad_match(lambda: _kitchen_sink_loss(params, ids, mask), params)
