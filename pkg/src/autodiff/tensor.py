"""Dense float64 tensors and the reverse-mode tape that records operations on them."""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import ContractError

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()
_counter_lock = threading.Lock()
_backward_calls = 0


class Tensor:
    """A dense n-dimensional array of 64-bit floats.

    Leaves created with ``requires_grad=True`` own a gradient buffer that
    :meth:`Tape.backward` accumulates into. Tensors produced by recorded
    operations are marked as tracked so later operations keep recording.

    Args:
        data: Array-like values, converted to float64
        requires_grad: Whether this leaf receives gradients
        name: Optional label used in error messages and checkpoints
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._tracked = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from src.autodiff import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from src.autodiff import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from src.autodiff import ops

        return ops.mul(self, other)

    def __neg__(self):
        from src.autodiff import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from src.autodiff import ops

        return ops.matmul(self, other)


@dataclass
class Node:
    """One recorded operation."""

    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn
    flops: int


class Tape:
    """Ordered record of operations, replayed in reverse to obtain gradients.

    Use as a context manager; operations executed inside the block on tensors
    that require (or carry) gradients are appended in execution order, which
    is a topological order by construction.

    Example:
        >>> with Tape() as tape:
        ...     loss = ops.sum(ops.mul(x, x))
        >>> tape.backward(loss)
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.forward_flops = 0
        self.backward_flops = 0
        self._index: Dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self, op: str, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn, flops: int
    ) -> None:
        output._tracked = True
        self._index[id(output)] = len(self.nodes)
        self.nodes.append(Node(op, output, tuple(inputs), backward, int(flops)))

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to ``wrt``.

        Does not touch ``.grad`` buffers. Tensors that do not influence the
        loss get zero arrays.

        Raises:
            ContractError: If ``loss`` is not a scalar
        """
        grads = self._reverse(loss)
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

        Raises:
            ContractError: If ``loss`` is not a scalar
        """
        leaves: Dict[int, Tensor] = {}
        for node in self.nodes:
            for tensor in node.inputs:
                if tensor.requires_grad:
                    leaves[id(tensor)] = tensor
        if loss.requires_grad:
            leaves[id(loss)] = loss
        grads = self._reverse(loss)
        for key, tensor in leaves.items():
            if key in grads:
                tensor.grad = tensor.grad + grads[key]

    def _reverse(self, loss: Tensor) -> Dict[int, np.ndarray]:
        global _backward_calls

        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
        with _counter_lock:
            _backward_calls += 1

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        last = self._index.get(id(loss))
        if last is None:
            # Constant loss: nothing upstream to differentiate.
            return grads

        for node in reversed(self.nodes[: last + 1]):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            local = node.backward(upstream)
            self.backward_flops += 2 * node.flops
            for tensor, grad in zip(node.inputs, local):
                if grad is None or not (tensor.requires_grad or tensor._tracked):
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad
        return grads


def _stack() -> List[Optional[Tape]]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def current_tape() -> Optional[Tape]:
    """Innermost active tape of this thread, or None under :func:`no_grad`."""
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on this thread."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def backward_call_count() -> int:
    """Number of reverse passes run by any tape in this process."""
    return _backward_calls


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, name: Optional[str] = None) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
