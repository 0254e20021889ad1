"""Differentiable ops over Tensor.

Every op computes its result with numpy in the dtype of its inputs and registers a backward
function that maps the output gradient to one gradient per parent.
"""

import math

from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np

from numpy.typing import ArrayLike, NDArray
from scipy.special import erf, expit, logsumexp

from retnet_lab.numerics.tensor import Rng, Tensor

Scalar = Union[int, float]
TensorLike = Union[Tensor, ArrayLike]

_SQRT_HALF = math.sqrt(0.5)
_INV_SQRT_TWO_PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(value: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap a constant so it can take part in an op.

    Args:
        value: A tensor (returned as is), an array or a scalar.
        like: When given, constants take this tensor's dtype.

    Returns:
        A tensor that does not require a gradient, unless value already was one.
    """
    if isinstance(value, Tensor):
        return value
    if like is not None:
        return Tensor.from_op(np.array(value, dtype=like.dtype), (), lambda _: ())
    return Tensor(value)


def _unbroadcast(grad: NDArray[Any], shape: Tuple[int, ...]) -> NDArray[Any]:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    """Promote two operands so constants follow the tensor's dtype."""
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return Tensor(a), Tensor(b)


####################################################################################################
# Elementwise arithmetic
####################################################################################################


def add(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise sum with broadcasting.

    Args:
        a: The left operand.
        b: The right operand.

    Returns:
        a + b.
    """
    x, y = _pair(a, b)

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], NDArray[Any]]:
        return _unbroadcast(grad, x.shape), _unbroadcast(grad, y.shape)

    return Tensor.from_op(x.data + y.data, (x, y), backward)


def subtract(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise difference with broadcasting.

    Args:
        a: The left operand.
        b: The right operand.

    Returns:
        a - b.
    """
    x, y = _pair(a, b)

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], NDArray[Any]]:
        return _unbroadcast(grad, x.shape), _unbroadcast(-grad, y.shape)

    return Tensor.from_op(x.data - y.data, (x, y), backward)


def multiply(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise product with broadcasting.

    Args:
        a: The left operand.
        b: The right operand.

    Returns:
        a * b.
    """
    x, y = _pair(a, b)

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], NDArray[Any]]:
        return _unbroadcast(grad * y.data, x.shape), _unbroadcast(grad * x.data, y.shape)

    return Tensor.from_op(x.data * y.data, (x, y), backward)


def divide(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise quotient with broadcasting.

    Args:
        a: The numerator.
        b: The denominator, never zero.

    Returns:
        a / b.
    """
    x, y = _pair(a, b)
    out = x.data / y.data

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], NDArray[Any]]:
        return (
            _unbroadcast(grad / y.data, x.shape),
            _unbroadcast(-grad * out / y.data, y.shape),
        )

    return Tensor.from_op(out, (x, y), backward)


def absolute(x: Tensor) -> Tensor:
    """Elementwise absolute value.

    Args:
        x: The input.

    Returns:
        |x|.
    """

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (grad * np.sign(x.data),)

    return Tensor.from_op(np.abs(x.data), (x,), backward)


def maximum(x: Tensor, floor: Scalar) -> Tensor:
    """Clamp from below.

    Args:
        x: The input.
        floor: The smallest value kept.

    Returns:
        max(x, floor) elementwise.
    """

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (grad * (x.data > floor),)

    return Tensor.from_op(np.maximum(x.data, x.dtype.type(floor)), (x,), backward)


####################################################################################################
# Linear algebra and shape
####################################################################################################


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batched over any leading axes.

    Args:
        a: A tensor of shape (..., m, k).
        b: A tensor of shape (..., k, n) or (k, n).

    Returns:
        The (..., m, n) product.
    """
    if a.ndim < 2 or b.ndim < 2:  # noqa: PLR2004
        raise ValueError(f"matmul needs at least 2 dimensions, got {a.shape} @ {b.shape}.")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})."
        )

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], NDArray[Any]]:
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor.from_op(np.matmul(a.data, b.data), (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes.

    Args:
        x: A tensor with at least two dimensions.

    Returns:
        The transposed view, copied.
    """

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (np.swapaxes(grad, -1, -2),)

    return Tensor.from_op(np.ascontiguousarray(np.swapaxes(x.data, -1, -2)), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Change the shape, keeping the element order.

    Args:
        x: The input.
        shape: The new shape, one entry may be -1.

    Returns:
        The reshaped tensor.
    """

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (grad.reshape(x.shape),)

    return Tensor.from_op(x.data.reshape(tuple(shape)).copy(), (x,), backward)


def getitem(x: Tensor, index: Any) -> Tensor:
    """Index or slice the tensor with numpy semantics.

    Args:
        x: The input.
        index: Any numpy index expression.

    Returns:
        The selected elements.
    """

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(part, (int, np.integer, slice, type(Ellipsis))) for part in parts)

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        full = np.zeros_like(x.data)
        if basic:
            full[index] = grad
        else:
            np.add.at(full, index, grad)
        return (full,)

    return Tensor.from_op(np.array(x.data[index]), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join tensors along an existing axis.

    Args:
        tensors: The tensors, equal in every other dimension.
        axis: The joining axis.

    Returns:
        The joined tensor.
    """
    sizes = [tensor.shape[axis] for tensor in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], ...]:
        return tuple(np.split(grad, splits, axis=axis))

    return Tensor.from_op(
        np.concatenate([tensor.data for tensor in tensors], axis=axis), tensors, backward
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join equally shaped tensors along a new axis.

    Args:
        tensors: The tensors.
        axis: Where the new axis goes.

    Returns:
        The stacked tensor.
    """

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], ...]:
        return tuple(np.moveaxis(grad, axis, 0))

    stacked = np.stack([tensor.data for tensor in tensors], axis=axis)
    return Tensor.from_op(stacked, tensors, backward)


def sum(  # noqa: A001  # pylint: disable=redefined-builtin
    x: Tensor,
    axis: Optional[int] = None,
    keepdims: bool = False,
) -> Tensor:
    """Sum over one axis or over everything.

    Args:
        x: The input.
        axis: The reduced axis, or None for a full reduction.
        keepdims: Whether the reduced axis is kept with size one.

    Returns:
        The sum.
    """

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return Tensor.from_op(np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Average over one axis or over everything.

    Args:
        x: The input.
        axis: The reduced axis, or None for a full reduction.
        keepdims: Whether the reduced axis is kept with size one.

    Returns:
        The mean.
    """
    count = x.size if axis is None else x.shape[axis]
    return multiply(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


####################################################################################################
# Nonlinearities
####################################################################################################


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x).

    Args:
        x: The input.

    Returns:
        The gated input.
    """
    sigmoid = expit(x.data)

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (grad * (sigmoid + x.data * sigmoid * (1.0 - sigmoid)),)

    return Tensor.from_op(x.data * sigmoid, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """The exact Gaussian error linear unit.

    Args:
        x: The input.

    Returns:
        x * Phi(x).
    """
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_TWO_PI
        return (grad * (cdf + x.data * pdf),)

    return Tensor.from_op((x.data * cdf).astype(x.dtype), (x,), backward)


def softmax_rows(x: Tensor, mask: Optional[NDArray[np.bool_]] = None) -> Tensor:
    """Softmax over the last axis.

    Args:
        x: The scores.
        mask: Broadcastable to x, False entries get zero weight. Every row keeps one True entry.

    Returns:
        Rows that sum to one.
    """
    scores = x.data if mask is None else np.where(mask, x.data, -np.inf)
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    weights = np.exp(shifted)
    out = (weights / np.sum(weights, axis=-1, keepdims=True)).astype(x.dtype)

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (out * (grad - np.sum(grad * out, axis=-1, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    """Log of the softmax over the last axis.

    Args:
        x: The scores.

    Returns:
        x minus its row-wise log-sum-exp.
    """
    out = (x.data - logsumexp(x.data, axis=-1, keepdims=True)).astype(x.dtype)

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (grad - np.exp(out) * np.sum(grad, axis=-1, keepdims=True),)

    return Tensor.from_op(out, (x,), backward)


####################################################################################################
# Normalization
####################################################################################################


def group_norm(
    x: Tensor,
    groups: int,
    eps: float,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """Normalize each block of ``features / groups`` consecutive features at every position.

    Args:
        x: A tensor of shape (..., features).
        groups: The number of blocks the last axis splits into.
        eps: Added to the variance.
        weight: Optional per-feature scale.
        bias: Optional per-feature shift.

    Returns:
        The normalized tensor, zero mean and unit variance per block before the affine.
    """
    features = x.shape[-1]
    if groups < 1 or features % groups:
        raise ValueError(f"{features} features cannot be split into {groups} groups.")
    grouped_shape = (*x.shape[:-1], groups, features // groups)
    grouped = x.data.reshape(grouped_shape)
    centered = grouped - grouped.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = (centered * inv_std).reshape(x.shape)

    out = normalized
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data

    parents = [x] + [param for param in (weight, bias) if param is not None]

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any], ...]:
        grad_normalized = grad if weight is None else grad * weight.data
        g = grad_normalized.reshape(grouped_shape)
        n = normalized.reshape(grouped_shape)
        grad_x = inv_std * (
            g - g.mean(axis=-1, keepdims=True) - n * (g * n).mean(axis=-1, keepdims=True)
        )
        grads = [grad_x.reshape(x.shape)]
        leading = tuple(range(grad.ndim - 1))
        if weight is not None:
            grads.append(np.sum(grad * normalized, axis=leading))
        if bias is not None:
            grads.append(np.sum(grad, axis=leading))
        return tuple(grads)

    return Tensor.from_op(out.astype(x.dtype), parents, backward)


def layer_norm(
    x: Tensor,
    eps: float,
    weight: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """Normalize all features at every position.

    Args:
        x: A tensor of shape (..., features).
        eps: Added to the variance.
        weight: Optional per-feature scale.
        bias: Optional per-feature shift.

    Returns:
        The normalized tensor.
    """
    return group_norm(x, 1, eps, weight, bias)


####################################################################################################
# Positions, lookups and regularization
####################################################################################################


def rotate_pairs(
    x: Tensor,
    angles: NDArray[Any],
    position: Union[int, Sequence[int], NDArray[np.int64]],
    sign: int = 1,
) -> Tensor:
    """Rotate each feature pair (x[2k], x[2k+1]) by ``sign * position * angles[k]``.

    Args:
        x: A tensor of shape (..., d) with d even.
        angles: The d/2 base angles.
        position: One position for every row, or one position per row of the second to last axis.
        sign: +1 or -1, -1 undoes a +1 rotation.

    Returns:
        The rotated tensor.
    """
    features = x.shape[-1]
    if features % 2:
        raise ValueError(f"Pair rotation needs an even feature count, got {features}.")
    if angles.shape != (features // 2,):
        raise ValueError(f"Expected {features // 2} angles, got shape {angles.shape}.")
    if sign not in {-1, 1}:
        raise ValueError(f"The rotation sign must be +1 or -1, got {sign}.")
    positions = np.asarray(position, dtype=np.float64)
    if positions.ndim == 1 and (x.ndim < 2 or positions.shape[0] != x.shape[-2]):  # noqa: PLR2004
        raise ValueError(f"{positions.shape[0]} positions do not match tensor shape {x.shape}.")
    phase = sign * np.multiply.outer(positions, angles.astype(np.float64))
    cos = np.cos(phase).astype(x.dtype)
    sin = np.sin(phase).astype(x.dtype)

    def rotate(values: NDArray[Any], direction: int) -> NDArray[Any]:
        even = values[..., 0::2]
        odd = values[..., 1::2]
        out = np.empty_like(values)
        out[..., 0::2] = even * cos - direction * odd * sin
        out[..., 1::2] = direction * even * sin + odd * cos
        return out

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        return (rotate(grad, -1),)

    return Tensor.from_op(rotate(x.data, 1), (x,), backward)


def take_rows(table: Tensor, ids: NDArray[np.int64]) -> Tensor:
    """Gather rows of a table, the embedding lookup.

    Args:
        table: A (rows, features) tensor.
        ids: Integer row ids of any shape.

    Returns:
        A tensor of shape ids.shape + (features,).
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"Row ids must lie in [0, {table.shape[0]}), got {ids.min()}..{ids.max()}."
        )

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        full = np.zeros_like(table.data)
        np.add.at(full, ids, grad)
        return (full,)

    return Tensor.from_op(table.data[ids], (table,), backward)


def pick(x: Tensor, ids: NDArray[np.int64]) -> Tensor:
    """Select one entry of the last axis per row.

    Args:
        x: A (rows, classes) tensor.
        ids: One class id per row.

    Returns:
        A (rows,) tensor.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if x.ndim != 2 or ids.shape != (x.shape[0],):  # noqa: PLR2004
        raise ValueError(f"Cannot pick ids of shape {ids.shape} from a tensor of shape {x.shape}.")
    rows = np.arange(x.shape[0])

    def backward(grad: NDArray[Any]) -> Tuple[NDArray[Any]]:
        full = np.zeros_like(x.data)
        full[rows, ids] = grad
        return (full,)

    return Tensor.from_op(x.data[rows, ids], (x,), backward)


def dropout(x: Tensor, rate: float, rng: Optional[Rng]) -> Tensor:
    """Zero a random fraction of the entries and rescale the rest.

    Args:
        x: The input.
        rate: The drop probability in [0, 1).
        rng: The stream the mask is drawn from, unused when rate is zero.

    Returns:
        The input when rate is zero, otherwise the masked input.
    """
    if rate == 0.0:
        return x
    if not 0.0 < rate < 1.0:
        raise ValueError(f"The dropout rate must lie in [0, 1), got {rate}.")
    if rng is None:
        raise ValueError("Dropout with a nonzero rate needs an Rng.")
    keep = (rng.uniform(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return multiply(x, Tensor.from_op(keep, (), lambda _: ()))
