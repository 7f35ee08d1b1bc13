"""Tests for the reverse-mode tape."""

import threading

import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.tensor import Tape, Tensor, backward_call_count, current_tape, no_grad, parameter
from src.utils.errors import ContractError


class TestBackward:
    def test_square_sum(self):
        x = parameter([1.0, -2.0, 3.0])
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        tape.backward(loss)
        assert np.array_equal(x.grad, [2.0, -4.0, 6.0])

    def test_constant_loss_leaves_zero_grads(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            loss = Tensor(3.0)
        tape.backward(loss)
        assert np.array_equal(x.grad, [0.0, 0.0])

    def test_unreachable_tensor_keeps_zero_grad(self):
        x, y = parameter([1.0, 2.0]), parameter([5.0])
        with Tape() as tape:
            loss = ops.sum(ops.scale(x, 3.0))
            ops.mul(y, y)
        tape.backward(loss)
        assert np.array_equal(x.grad, [3.0, 3.0])
        assert np.array_equal(y.grad, [0.0])

    def test_non_scalar_loss(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            out = ops.mul(x, x)
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_backward_accumulates(self):
        x = parameter([1.0, 2.0])
        for _ in range(2):
            with Tape() as tape:
                loss = ops.sum(x)
            tape.backward(loss)
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_reused_tensor_gradients_sum(self):
        x = parameter([2.0])
        with Tape() as tape:
            loss = ops.sum(ops.add(ops.mul(x, x), ops.scale(x, 3.0)))
        tape.backward(loss)
        assert x.grad[0] == pytest.approx(7.0)

    def test_zero_grad(self):
        x = parameter([1.0])
        with Tape() as tape:
            loss = ops.sum(x)
        tape.backward(loss)
        x.zero_grad()
        assert np.array_equal(x.grad, [0.0])


class TestTape:
    def test_records_in_execution_order(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            ops.sum(ops.exp(ops.scale(x, 2.0)))
        assert [node.op for node in tape.nodes] == ["scale", "exp", "sum"]

    def test_replay_is_deterministic(self):
        rng = np.random.default_rng(0)
        w = parameter(rng.standard_normal((4, 3)))
        x = Tensor(rng.standard_normal((5, 4)))
        with Tape() as tape:
            loss = ops.sum(ops.tanh(ops.matmul(x, w)))
        first = tape.gradients(loss, [w])[0]
        second = tape.gradients(loss, [w])[0]
        assert np.array_equal(first, second)

    def test_rerun_graph_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            w = parameter(rng.standard_normal((4, 3)))
            x = Tensor(rng.standard_normal((5, 4)))
            with Tape() as tape:
                loss = ops.sum(ops.log_softmax(ops.matmul(x, w)))
            return tape.gradients(loss, [w])[0]

        assert np.array_equal(run(), run())

    def test_gradients_do_not_touch_grad_buffers(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        tape.gradients(loss, [x])
        assert np.array_equal(x.grad, [0.0, 0.0])

    def test_no_grad_suspends_recording(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            with no_grad():
                assert current_tape() is None
                ops.sum(ops.mul(x, x))
        assert len(tape) == 0

    def test_constant_inputs_are_not_recorded(self):
        with Tape() as tape:
            ops.add(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0
        assert tape.forward_flops == 1

    def test_backward_call_counter(self):
        x = parameter([1.0])
        before = backward_call_count()
        with Tape() as tape:
            loss = ops.sum(x)
        tape.backward(loss)
        tape.gradients(loss, [x])
        assert backward_call_count() == before + 2

    def test_tapes_are_per_thread(self):
        seen = []

        def worker():
            seen.append(current_tape())

        with Tape():
            thread = threading.Thread(target=worker)
            thread.start()
            thread.join()
        assert seen == [None]

    def test_backward_flops_counted(self):
        a, b = parameter(np.ones((2, 3))), parameter(np.ones((3, 2)))
        with Tape() as tape:
            loss = ops.sum(ops.matmul(a, b))
        tape.backward(loss)
        assert tape.backward_flops == 2 * tape.forward_flops
