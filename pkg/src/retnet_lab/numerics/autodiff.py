"""Reverse-mode gradients over the Tensor graph and the finite-difference oracle."""

from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from numpy.typing import ArrayLike, NDArray

from retnet_lab.numerics.tensor import Tensor

ParamArrays = Mapping[str, ArrayLike]
LossFn = Callable[[Dict[str, Tensor]], Union[Tensor, float]]


def _topological_order(root: Tensor) -> List[Tensor]:
    """Every tracked tensor reachable from root, each after all of its parents."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        stack.extend(
            (parent, False)
            for parent in node.parents
            if parent.requires_grad and id(parent) not in visited
        )
    return order


def backward(loss: Tensor) -> Dict[int, NDArray[Any]]:
    """Propagate d(loss)/d(node) to every tracked node.

    Args:
        loss: A single element tensor.

    Returns:
        The gradient of every tracked node keyed by ``id(node)``.
    """
    if loss.size != 1:
        raise ValueError(f"Gradients need a scalar loss, got shape {loss.shape}.")
    grads: Dict[int, NDArray[Any]] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if grad is None or node.backward_fn is None:
            continue
        for parent, parent_grad in zip(node.parents, node.backward_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
    return grads


def value_and_grad(
    f: LossFn,
    params: ParamArrays,
) -> Tuple[float, Dict[str, NDArray[Any]]]:
    """Evaluate a scalar function and its exact gradient.

    Args:
        f: Builds the loss from tensors named like params.
        params: The point to differentiate at.

    Returns:
        The loss value and one gradient array per parameter, zero where f does not depend on it.
    """
    leaves = {name: Tensor(value, requires_grad=True, name=name) for name, value in params.items()}
    loss = f(leaves)
    if isinstance(loss, Tensor) and loss.size != 1:
        raise ValueError(f"Gradients need a scalar loss, got shape {loss.shape}.")
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        value = loss.item() if isinstance(loss, Tensor) else float(loss)
        return value, {name: np.zeros_like(leaf.data) for name, leaf in leaves.items()}
    grads = backward(loss)
    return loss.item(), {
        name: grads.get(id(leaf), np.zeros_like(leaf.data)) for name, leaf in leaves.items()
    }


def grad(f: LossFn, params: ParamArrays) -> Dict[str, NDArray[Any]]:
    """The exact reverse-mode gradient of a scalar function.

    Args:
        f: Builds the loss from tensors named like params.
        params: The point to differentiate at.

    Returns:
        One gradient array per parameter.
    """
    return value_and_grad(f, params)[1]


def finite_diff(
    f: LossFn,
    params: ParamArrays,
    step: float = 1e-5,
    coordinates: Optional[Mapping[str, NDArray[np.int64]]] = None,
) -> Dict[str, NDArray[Any]]:
    """Estimate the gradient with central differences (f(x + h) - f(x - h)) / 2h.

    Args:
        f: Builds the loss from tensors named like params.
        params: The point to differentiate at, evaluated in its own precision (fp64 expected).
        step: The perturbation h.
        coordinates: Optional flat indices per parameter; other entries are left at zero.

    Returns:
        One gradient estimate per parameter.
    """
    base = {name: np.array(value) for name, value in params.items()}
    base = {
        name: value if np.issubdtype(value.dtype, np.floating) else value.astype(np.float64)
        for name, value in base.items()
    }

    def evaluate(point: Dict[str, NDArray[Any]]) -> float:
        value = f({name: Tensor(array) for name, array in point.items()})
        return value.item() if isinstance(value, Tensor) else float(value)

    estimates: Dict[str, NDArray[Any]] = {}
    for name, value in base.items():
        estimate = np.zeros_like(value)
        flat_estimate = estimate.reshape(-1)
        if coordinates is None:
            indices = np.arange(value.size)
        else:
            indices = np.asarray(coordinates.get(name, ()), dtype=np.int64)
        for index in indices:
            perturbed = value.copy()
            flat = perturbed.reshape(-1)
            original = flat[index]
            flat[index] = original + step
            upper = evaluate({**base, name: perturbed})
            flat[index] = original - step
            lower = evaluate({**base, name: perturbed})
            flat_estimate[index] = (upper - lower) / (2.0 * step)
        estimates[name] = estimate
    return estimates
