"""The language modeling objective."""

import math

from typing import Optional

import numpy as np

from numpy.typing import ArrayLike

from retnet_lab.numerics import ops
from retnet_lab.numerics.tensor import Tensor


def cross_entropy(
    logits: Tensor,
    targets: ArrayLike,
    weights: Optional[ArrayLike] = None,
) -> Tensor:
    """Mean negative log-likelihood of the targets in nats.

    Args:
        logits: (..., length, vocab) scores, row n predicting target n.
        targets: (..., length) ids, already shifted by one against the inputs.
        weights: Optional per-target weights, the loss is their weighted mean.

    Returns:
        A scalar tensor.
    """
    ids = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != ids.shape:
        raise ValueError(
            f"Targets of shape {ids.shape} do not line up with logits of shape {logits.shape}."
        )
    if ids.size and (ids.min() < 0 or ids.max() >= logits.shape[-1]):
        raise ValueError(f"Target ids must lie in [0, {logits.shape[-1]}).")
    rows = ops.reshape(ops.log_softmax_rows(logits), (ids.size, logits.shape[-1]))
    picked = ops.pick(rows, ids.reshape(-1))
    if weights is None:
        return -ops.mean(picked)
    scale = np.asarray(weights, dtype=logits.dtype).reshape(-1)
    if scale.shape != (ids.size,):
        raise ValueError(f"Weights of shape {np.shape(weights)} do not match targets {ids.shape}.")
    total = scale.sum()
    if total <= 0:
        raise ValueError("The weights must have a positive sum.")
    return -ops.sum(picked * (scale / total))


def perplexity(loss: float) -> float:
    """exp(loss), infinite on overflow."""
    try:
        return math.exp(loss)
    except OverflowError:
        return math.inf
