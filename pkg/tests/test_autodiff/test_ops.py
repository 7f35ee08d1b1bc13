"""Tests for tape operations and their gradients."""

import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.gradcheck import check_gradients, numerical_gradient, relative_error
from src.autodiff.tensor import Tape, Tensor, backward_call_count, no_grad, parameter
from src.utils.errors import ContractError, DimensionError, NumericError


def _weighted_sum(t: Tensor, seed: int = 99) -> Tensor:
    """Random linear functional of ``t`` so every output entry matters."""
    w = np.random.default_rng(seed).standard_normal(t.shape)
    return ops.sum(ops.mul(t, Tensor(w)))


def _positive(rng, shape):
    return parameter(np.abs(rng.standard_normal(shape)) + 0.5)


def _case_add(rng):
    a, b = parameter(rng.standard_normal((3, 4))), parameter(rng.standard_normal((3, 4)))
    return lambda: _weighted_sum(ops.add(a, b)), [a, b]


def _case_add_broadcast(rng):
    a, b = parameter(rng.standard_normal((3, 4))), parameter(rng.standard_normal(4))
    return lambda: _weighted_sum(ops.add(a, b)), [a, b]


def _case_sub(rng):
    a, b = parameter(rng.standard_normal((2, 3))), parameter(rng.standard_normal(3))
    return lambda: _weighted_sum(ops.sub(a, b)), [a, b]


def _case_mul(rng):
    a, b = parameter(rng.standard_normal((2, 3))), parameter(rng.standard_normal((2, 3)))
    return lambda: _weighted_sum(ops.mul(a, b)), [a, b]


def _case_mul_broadcast(rng):
    a, b = parameter(rng.standard_normal((4, 3))), parameter(rng.standard_normal(3))
    return lambda: _weighted_sum(ops.mul(a, b)), [a, b]


def _case_scale(rng):
    a = parameter(rng.standard_normal(5))
    return lambda: _weighted_sum(ops.scale(ops.add_scalar(a, 0.3), -1.7)), [a]


def _case_pow(rng):
    a = _positive(rng, (2, 3))
    return lambda: _weighted_sum(ops.pow_scalar(a, -0.5)), [a]


def _case_relu(rng):
    a = parameter(rng.standard_normal((3, 3)))
    return lambda: _weighted_sum(ops.relu(a)), [a]


def _case_sigmoid_tanh(rng):
    a = parameter(rng.standard_normal(6))
    return lambda: _weighted_sum(ops.mul(ops.sigmoid(a), ops.tanh(a))), [a]


def _case_exp_log(rng):
    a = _positive(rng, (2, 2))
    return lambda: _weighted_sum(ops.add(ops.exp(a), ops.log(a))), [a]


def _case_clamp(rng):
    a = parameter(rng.standard_normal(8))
    return lambda: _weighted_sum(ops.clamp(a, low=-0.5, high=0.7)), [a]


def _case_maximum(rng):
    a, b = parameter(rng.standard_normal(6)), parameter(rng.standard_normal(6))
    return lambda: _weighted_sum(ops.maximum(a, b)), [a, b]


def _case_logaddexp(rng):
    a, b = parameter(rng.standard_normal(5)), parameter(rng.standard_normal(5))
    return lambda: _weighted_sum(ops.logaddexp(a, b)), [a, b]


def _case_sum_axis(rng):
    a = parameter(rng.standard_normal((3, 4)))
    return lambda: _weighted_sum(ops.sum(a, axis=0)), [a]


def _case_mean(rng):
    a = parameter(rng.standard_normal((3, 4)))
    return lambda: _weighted_sum(ops.mean(a, axis=1)), [a]


def _case_reshape_concat(rng):
    a, b = parameter(rng.standard_normal((2, 3))), parameter(rng.standard_normal((1, 3)))
    return lambda: _weighted_sum(ops.reshape(ops.concat([a, b], axis=0), (9,))), [a, b]


def _case_slice(rng):
    a = parameter(rng.standard_normal((3, 5)))
    return lambda: _weighted_sum(ops.slice(a, 1, 1, 4)), [a]


def _case_gather(rng):
    a = parameter(rng.standard_normal((4, 3)))
    index = (np.array([0, 2, 2, 3]), np.array([1, 0, 0, 2]))
    return lambda: _weighted_sum(ops.gather(a, index)), [a]


def _case_embedding(rng):
    w = parameter(rng.standard_normal((5, 3)))
    return lambda: _weighted_sum(ops.embedding(w, [4, 0, 4, 1])), [w]


def _case_matmul(rng):
    a, b = parameter(rng.standard_normal((3, 4))), parameter(rng.standard_normal((4, 2)))
    return lambda: ops.sum(ops.matmul(a, b)), [a, b]


def _case_linear(rng):
    x = parameter(rng.standard_normal((3, 4)))
    w, b = parameter(rng.standard_normal((4, 2))), parameter(rng.standard_normal(2))
    return lambda: _weighted_sum(ops.linear(x, w, b)), [x, w, b]


def _case_pairwise_add(rng):
    a, b = parameter(rng.standard_normal((3, 2))), parameter(rng.standard_normal((2, 2)))
    return lambda: _weighted_sum(ops.tanh(ops.pairwise_add(a, b))), [a, b]


def _case_log_softmax(rng):
    x = parameter(rng.standard_normal(7))
    return lambda: _weighted_sum(ops.log_softmax(x)), [x]


def _case_layer_norm(rng):
    x = parameter(rng.standard_normal((3, 4)))
    gain, bias = parameter(rng.standard_normal(4)), parameter(rng.standard_normal(4))
    return lambda: _weighted_sum(ops.layer_norm(x, gain, bias)), [x, gain, bias]


def _case_gated_scan(rng):
    gate = parameter(rng.uniform(0.1, 0.9, size=(4, 3)))
    value = parameter(rng.standard_normal((4, 3)))
    return lambda: _weighted_sum(ops.gated_scan(gate, value)), [gate, value]


def _case_dropout(rng):
    a = parameter(rng.standard_normal((3, 4)))
    mask = (rng.random((3, 4)) >= 0.3) / 0.7
    return lambda: _weighted_sum(ops.dropout(a, mask)), [a]


CASES = {
    "add": _case_add,
    "add_broadcast": _case_add_broadcast,
    "sub": _case_sub,
    "mul": _case_mul,
    "mul_broadcast": _case_mul_broadcast,
    "scale": _case_scale,
    "pow": _case_pow,
    "relu": _case_relu,
    "sigmoid_tanh": _case_sigmoid_tanh,
    "exp_log": _case_exp_log,
    "clamp": _case_clamp,
    "maximum": _case_maximum,
    "logaddexp": _case_logaddexp,
    "sum_axis": _case_sum_axis,
    "mean": _case_mean,
    "reshape_concat": _case_reshape_concat,
    "slice": _case_slice,
    "gather": _case_gather,
    "embedding": _case_embedding,
    "matmul": _case_matmul,
    "linear": _case_linear,
    "pairwise_add": _case_pairwise_add,
    "log_softmax": _case_log_softmax,
    "layer_norm": _case_layer_norm,
    "gated_scan": _case_gated_scan,
    "dropout": _case_dropout,
}


class TestFiniteDifferences:
    """Tape gradients against central differences."""

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("name", sorted(CASES))
    def test_op_gradient(self, name, seed):
        fn, tensors = CASES[name](np.random.default_rng(seed))
        errors = check_gradients(fn, tensors)
        assert max(errors.values()) < 1e-6, f"{name}: {errors}"

    @pytest.mark.slow
    @pytest.mark.parametrize("name", sorted(CASES))
    def test_op_gradient_hundred_seeds(self, name):
        for seed in range(100):
            fn, tensors = CASES[name](np.random.default_rng(1000 + seed))
            errors = check_gradients(fn, tensors)
            assert max(errors.values()) < 1e-4, f"{name} seed {seed}: {errors}"

    def test_two_layer_network_with_nll(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((3, 4)))
        w1, b1 = parameter(rng.standard_normal((4, 5))), parameter(rng.standard_normal(5))
        w2, b2 = parameter(rng.standard_normal((5, 3))), parameter(rng.standard_normal(3))
        labels = np.array([0, 2, 1])

        def loss():
            hidden = ops.relu(ops.linear(x, w1, b1))
            log_probs = ops.log_softmax(ops.linear(hidden, w2, b2))
            picked = ops.gather(log_probs, (np.arange(3), labels))
            return ops.neg(ops.mean(picked))

        errors = check_gradients(loss, [w1, b1, w2, b2])
        assert max(errors.values()) < 1e-4

    def test_relative_error_floor(self):
        assert relative_error(np.array([1e-9]), np.array([2e-9])) == pytest.approx(1e-9)
        assert relative_error(np.array([]), np.array([])) == 0.0

    def test_numerical_gradient_restores_data(self):
        x = parameter([1.0, -2.0, 3.0])
        before = x.data.copy()
        numerical_gradient(lambda: ops.sum(ops.mul(x, x)), x)
        assert np.array_equal(x.data, before)


class TestMatmul:
    def test_identity(self):
        out = ops.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        assert np.array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_basis_selection(self):
        out = ops.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]]))
        assert np.array_equal(out.data, [[0.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as excinfo:
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        assert "(2, 3) vs (2, 3)" in str(excinfo.value)

    def test_counts_flops(self):
        a, b = parameter(np.ones((3, 4))), parameter(np.ones((4, 2)))
        with Tape() as tape:
            ops.matmul(a, b)
        assert tape.forward_flops == 2 * 3 * 4 * 2


class TestLogSoftmax:
    def test_uniform_logits(self):
        out = ops.log_softmax(Tensor(np.zeros(4)))
        assert np.allclose(out.data, np.log(0.25), rtol=0, atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = ops.log_softmax(Tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(0.0, abs=1e-12)
        assert out.data[1] == pytest.approx(-1000.0, abs=1e-9)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_input(self, bad):
        with pytest.raises(NumericError):
            ops.log_softmax(Tensor([0.0, bad, 1.0]))

    def test_slices_sum_to_one(self):
        x = Tensor(np.random.default_rng(3).standard_normal((6, 9)) * 10)
        sums = np.exp(ops.log_softmax(x).data).sum(axis=-1)
        assert np.all(np.abs(sums - 1.0) <= 1e-12)


class TestBroadcasting:
    def test_trailing_operand_allowed(self):
        out = ops.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
        assert np.array_equal(out.data, [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])

    def test_leading_operand_rejected(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0]))

    def test_slice_out_of_range(self):
        with pytest.raises(ContractError):
            ops.slice(Tensor(np.zeros((2, 3))), 1, 0, 4)

    def test_embedding_id_out_of_range(self):
        with pytest.raises(ContractError):
            ops.embedding(Tensor(np.zeros((3, 2))), [0, 3])

    def test_dropout_mask_shape(self):
        with pytest.raises(DimensionError):
            ops.dropout(Tensor(np.zeros((2, 2))), np.ones(2))
