"""Differentiable operations on `Tensor`.

Each op computes its forward value with numpy and registers an adjoint rule
through `record`. Broadcasting is limited to what the encoders need: numpy
rules for elementwise ops and batched `matmul`, with gradients summed back to
each operand's shape.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import Any

import numpy as np

from autodiff.tensor import Tensor, record
from errors import ContractError, DimensionError, NumericError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# Elementwise arithmetic


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), a.data + b.data, backward)


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", (a, b), a.data - b.data, backward)


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), a.data * b.data, backward)


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g: np.ndarray):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return record("div", (a, b), out, backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray):
        return (g * factor,)

    return record("scale", (x,), x.data * factor, backward)


def square(x: Tensor) -> Tensor:
    def backward(g: np.ndarray):
        return (2.0 * x.data * g,)

    return record("square", (x,), x.data * x.data, backward)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def backward(g: np.ndarray):
        return (g / (2.0 * out),)

    return record("sqrt", (x,), out, backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g: np.ndarray):
        return (g * out,)

    return record("exp", (x,), out, backward)


def log(x: Tensor) -> Tensor:
    def backward(g: np.ndarray):
        return (g / x.data,)

    return record("log", (x,), np.log(x.data), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    inner = _GELU_C * (x.data + _GELU_K * x.data**3)
    t = np.tanh(inner)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_K * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner),)

    return record("gelu", (x,), out, backward)


# Reductions


def sum(  # noqa: A001
    x: Tensor, axis: int | None = None, keepdims: bool = False
) -> Tensor:
    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return record("sum", (x,), out, backward)


def mean_over_axis(
    x: Tensor, axis: int | None = None, keepdims: bool = False
) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape", x.shape, shape) from None

    def backward(g: np.ndarray):
        return (g.reshape(x.shape),)

    return record("reshape", (x,), out, backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return record("transpose", (x,), np.transpose(x.data, axes), backward)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError("broadcast_to", x.shape, shape) from None

    def backward(g: np.ndarray):
        return (_unbroadcast(g, x.shape),)

    return record("broadcast_to", (x,), out, backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", *(t.shape for t in tensors)) from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, cuts, axis=axis))

    return record("concat", tensors, out, backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Take positions `[start, stop)` along `axis`."""
    extent = x.shape[axis]
    if not 0 <= start <= stop <= extent:
        raise ContractError(
            f"slice [{start}, {stop}) out of range for axis {axis} of extent {extent}"
        )
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g: np.ndarray):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return record("slice", (x,), x.data[index], backward)


def gather_tokens(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick tokens per batch element: `out[j, b] = x[index[j, b], b]`.

    `x` is `[L, N, d]` and `index` is an integer `[k, N]` array. The index
    choice itself carries no gradient.
    """
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 3 or index.ndim != 2 or index.shape[1] != x.shape[1]:
        raise DimensionError("gather_tokens", x.shape, index.shape)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ContractError(f"gather index out of range for {x.shape[0]} tokens")
    batch = np.arange(x.shape[1])[None, :]

    def backward(g: np.ndarray):
        full = np.zeros(x.shape)
        np.add.at(full, (index, np.broadcast_to(batch, index.shape)), g)
        return (full,)

    return record("gather_tokens", (x,), x.data[index, batch], backward)


# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", a.shape, b.shape) from None

    def backward(g: np.ndarray):
        grad_a = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        grad_b = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (
            None if grad_a is None else _unbroadcast(grad_a, a.shape),
            None if grad_b is None else _unbroadcast(grad_b, b.shape),
        )

    return record("matmul", (a, b), a.data @ b.data, backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record("softmax_rows", (x,), out, backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("log_softmax_rows received NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return record("log_softmax_rows", (x,), out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm", x.shape, gain.shape, bias.shape)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    lead = tuple(range(x.ndim - 1))

    def backward(g: np.ndarray):
        g_normed = g * gain.data
        grad_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        return grad_x, (g * normed).sum(axis=lead), g.sum(axis=lead)

    out = normed * gain.data + bias.data
    return record("layer_norm", (x, gain, bias), out, backward)


# Composites


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    return div(x, sqrt(sum(square(x), axis=axis, keepdims=True)))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Look up rows of `table` for an integer array of token ids."""
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise DimensionError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"token id out of range for a vocabulary of {table.shape[0]} entries"
        )

    def backward(g: np.ndarray):
        full = np.zeros(table.shape)
        np.add.at(full, ids, g)
        return (full,)

    return record("embedding", (table,), table.data[ids], backward)
