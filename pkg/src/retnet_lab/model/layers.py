"""Pieces shared by both architectures: embeddings, feed-forward blocks and the output head."""

from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from numpy.typing import ArrayLike, NDArray

from retnet_lab.model.config import ModelConfig
from retnet_lab.numerics import ops
from retnet_lab.numerics.tensor import Rng, Tensor

ParamsLike = Mapping[str, Union[Tensor, NDArray[Any]]]


def as_param_tensors(params: ParamsLike) -> Dict[str, Tensor]:
    """Wrap plain arrays as constant tensors, leaving tensors alone.

    Args:
        params: Arrays or tensors keyed by name.

    Returns:
        Tensors keyed by name.
    """
    return {
        name: value if isinstance(value, Tensor) else Tensor(value, name=name)
        for name, value in params.items()
    }


def check_tokens(tokens: ArrayLike, config: ModelConfig) -> NDArray[np.int64]:
    """Validate token ids against the vocabulary.

    Args:
        tokens: A (length,) or (batch, length) array of ids.
        config: The model config.

    Returns:
        The ids as int64.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim not in {1, 2} or ids.shape[-1] < 1:
        raise ValueError(
            f"Tokens must be a non-empty (length,) or (batch, length) array, got {ids.shape}."
        )
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        bad = int(ids[(ids < 0) | (ids >= config.vocab_size)][0])
        raise ValueError(f"Token id {bad} is outside the vocabulary of {config.vocab_size}.")
    return ids


def layer_norm(x: Tensor, params: Mapping[str, Tensor], prefix: str, eps: float) -> Tensor:
    """LayerNorm with the affine stored under ``prefix``.

    Args:
        x: The input, (..., d).
        params: The parameter tensors.
        prefix: For example ``blocks.0.ln_1``.
        eps: The variance epsilon.

    Returns:
        The normalized input.
    """
    return ops.layer_norm(x, eps, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def feed_forward(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """FFN(X) = gelu(X W_1) W_2.

    Args:
        x: The input, (..., d).
        params: The parameter tensors.
        prefix: For example ``blocks.0.ffn``.

    Returns:
        The (..., d) output.
    """
    hidden = ops.gelu(ops.matmul(x, params[f"{prefix}.w_1"]))
    return ops.matmul(hidden, params[f"{prefix}.w_2"])


def embed(
    ids: NDArray[np.int64],
    params: Mapping[str, Tensor],
    config: ModelConfig,
    rng: Optional[Rng] = None,
) -> Tensor:
    """Look the tokens up in the embedding table, with dropout when an rng is given.

    Args:
        ids: Token ids.
        params: The parameter tensors.
        config: The model config.
        rng: Set only while training.

    Returns:
        The (..., length, d) embeddings.
    """
    x = ops.take_rows(params["embed.weight"], ids)
    return maybe_dropout(x, config, rng)


def maybe_dropout(x: Tensor, config: ModelConfig, rng: Optional[Rng]) -> Tensor:
    """Dropout at the configured rate during training, identity otherwise.

    Args:
        x: The activations.
        config: The model config.
        rng: Set only while training.

    Returns:
        The activations.
    """
    if rng is None or config.dropout == 0.0:
        return x
    return ops.dropout(x, config.dropout, rng)


def output_logits(x: Tensor, params: Mapping[str, Tensor], config: ModelConfig) -> Tensor:
    """Final LayerNorm followed by the (optionally tied) output projection.

    Args:
        x: The last block's output, (..., d).
        params: The parameter tensors.
        config: The model config.

    Returns:
        The (..., vocab) logits.
    """
    x = layer_norm(x, params, "final_norm", config.eps)
    table = params["embed.weight"] if config.tie_embeddings else params["head.weight"]
    return ops.matmul(x, ops.transpose(table))
