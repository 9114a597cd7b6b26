"""Dense tensors and the dynamic reverse-mode tape.

Tensors are immutable double-precision arrays. Operations executed while a
`Tape` is active are recorded on it when any input requires a gradient;
outside a tape nothing is recorded, which is how frozen passes run.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any

import numpy as np

from errors import ContractError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_active_tape: ContextVar[Tape | None] = ContextVar("active_tape", default=None)


class Tensor:
    """An immutable n-dimensional float64 value with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: str = ""):
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> Tensor:
        """Adopt an array produced by an op without copying it again."""
        tensor = cls.__new__(cls)
        array = np.ascontiguousarray(array, dtype=np.float64)
        array.setflags(write=False)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = ""
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(
                f"item() needs a single element, got shape {self.shape}"
            )
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor.wrap(self.data, requires_grad=False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other: Any) -> Tensor:
        return _F.add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return _F.add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return _F.sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return _F.sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return _F.mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return _F.mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return _F.div(self, other)

    def __neg__(self) -> Tensor:
        return _F.scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return _F.matmul(self, other)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return _F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return _F.mean_over_axis(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return _F.reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return _F.transpose(self, axes)


@dataclass(eq=False)
class Node:
    """One executed operation: its inputs, output and adjoint rule."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of executed operations for one forward pass.

    Usage:
        with Tape() as tape:
            loss = objective(params)
            tape.backward(loss)
    """

    def __init__(self) -> None:
        self._nodes: list[Node] = []
        self._tokens: list[Any] = []

    def __enter__(self) -> Tape:
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc_info: object) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> tuple[Node, ...]:
        return tuple(self._nodes)

    def record(self, node: Node) -> None:
        self._nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """Populate `.grad` on every requires-grad tensor the loss depends on.

        Raises:
            ContractError: If the loss is not a scalar or was not recorded on
                this tape.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not any(node.output is loss for node in self._nodes):
            raise ContractError("loss was not produced by an operation on this tape")

        pending: dict[int, tuple[Tensor, np.ndarray]] = {
            id(loss): (loss, np.ones_like(loss.data))
        }
        for node in reversed(self._nodes):
            entry = pending.pop(id(node.output), None)
            if entry is None:
                continue
            _, grad_out = entry
            node.output.grad = grad_out
            for tensor, grad_in in zip(node.inputs, node.backward(grad_out)):
                if grad_in is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in pending:
                    pending[key] = (tensor, pending[key][1] + grad_in)
                else:
                    pending[key] = (tensor, np.asarray(grad_in, dtype=np.float64))

        # Whatever is left never appeared as an output: these are the leaves.
        for tensor, grad in pending.values():
            tensor.grad = np.array(grad, dtype=np.float64).reshape(tensor.shape)

    def clear(self) -> None:
        """Drop every recorded node and the gradient state it produced."""
        for node in self._nodes:
            node.output.grad = None
            for tensor in node.inputs:
                tensor.grad = None
        self._nodes.clear()


def active_tape() -> Tape | None:
    return _active_tape.get()


def record(
    op: str,
    inputs: tuple[Tensor, ...],
    result: np.ndarray,
    backward: BackwardFn,
) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed."""
    tape = _active_tape.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    output = Tensor.wrap(result, requires_grad=tracked)
    if tracked:
        tape.record(Node(op, inputs, output, backward))
    return output


def backward(loss: Tensor) -> None:
    """Run `Tape.backward` on the currently active tape."""
    tape = _active_tape.get()
    if tape is None:
        raise ContractError("backward called without an active tape")
    tape.backward(loss)


from autodiff import functional as _F  # noqa: E402
