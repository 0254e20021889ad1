"""The parameter matched softmax attention baseline and its key/value cache."""

import math

from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from numpy.typing import ArrayLike, NDArray

from retnet_lab.helpers.enums import Architecture
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.layers import (
    as_param_tensors,
    check_tokens,
    embed,
    feed_forward,
    layer_norm,
    maybe_dropout,
    output_logits,
    ParamsLike,
)
from retnet_lab.numerics import ops
from retnet_lab.numerics.tensor import Rng, Tensor
from retnet_lab.retention.rotation import apply_xpos, rotation_angles


class KVCache:
    """Rotated keys and values of every past position, one buffer pair per layer.

    Buffers double in capacity when full. Only the filled prefix is counted as cache elements.
    """

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    def __init__(
        self,
        n_layers: int,
        d_model: int,
        batch_shape: Sequence[int],
        dtype: "np.dtype[Any]",
        capacity: int = 16,
    ) -> None:
        """Allocate empty buffers.

        Args:
            n_layers: The number of attention layers.
            d_model: The key/value width.
            batch_shape: Leading batch axes.
            dtype: The element type.
            capacity: The initial number of positions per buffer.
        """
        self.d_model = d_model
        self.batch_shape = tuple(batch_shape)
        shape = (*self.batch_shape, capacity, d_model)
        self._keys: List[NDArray[Any]] = [np.zeros(shape, dtype=dtype) for _ in range(n_layers)]
        self._values: List[NDArray[Any]] = [np.zeros(shape, dtype=dtype) for _ in range(n_layers)]
        self._lengths = [0] * n_layers

    ################################################################################################
    # Public Methods
    ################################################################################################

    def get(self, layer: int) -> Tuple[NDArray[Any], NDArray[Any]]:
        """Copies of the filled part of a layer's buffers.

        Args:
            layer: The layer index.

        Returns:
            Keys and values of shape (..., positions, d).
        """
        length = self._lengths[layer]
        keys = self._keys[layer][..., :length, :]
        return keys.copy(), self._values[layer][..., :length, :].copy()

    def append(self, layer: int, keys: NDArray[Any], values: NDArray[Any]) -> None:
        """Add new positions to a layer's buffers.

        Args:
            layer: The layer index.
            keys: Rotated keys, (..., new positions, d).
            values: Values, (..., new positions, d).
        """
        length = self._lengths[layer]
        needed = length + keys.shape[-2]
        capacity = self._keys[layer].shape[-2]
        if needed > capacity:
            capacity = self.planned_capacity(needed, capacity)
            self._keys[layer] = self._grow(self._keys[layer], capacity)
            self._values[layer] = self._grow(self._values[layer], capacity)
        self._keys[layer][..., length:needed, :] = keys
        self._values[layer][..., length:needed, :] = values
        self._lengths[layer] = needed

    @staticmethod
    def planned_capacity(positions: int, capacity: int = 16) -> int:
        """The buffer length a layer reaches after holding ``positions`` positions.

        Args:
            positions: The number of cached positions.
            capacity: The initial buffer length.

        Returns:
            The doubled capacity.
        """
        capacity = max(capacity, 1)
        while capacity < positions:
            capacity *= 2
        return capacity

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def element_count(self) -> int:
        """Exactly 2 * layers * positions * d_model per batch entry."""
        batch = int(np.prod(self.batch_shape, dtype=np.int64))
        return 2 * sum(self._lengths) * self.d_model * batch

    @property
    def capacity_elements(self) -> int:
        """Every float allocated by the buffers, filled or not."""
        return sum(buffer.size for buffer in (*self._keys, *self._values))

    ################################################################################################
    # Private Methods
    ################################################################################################

    @staticmethod
    def _grow(buffer: NDArray[Any], capacity: int) -> NDArray[Any]:
        grown = np.zeros((*buffer.shape[:-2], capacity, buffer.shape[-1]), dtype=buffer.dtype)
        grown[..., : buffer.shape[-2], :] = buffer
        return grown


def _split_heads_rotated(x: Tensor, n_heads: int, positions: NDArray[np.int64]) -> Tensor:
    """Rotate every head's block of features by its row position."""
    d_head = x.shape[-1] // n_heads
    angles = rotation_angles(d_head)
    blocks = [
        apply_xpos(x[Ellipsis, slice(head * d_head, (head + 1) * d_head)], positions, 1, angles)
        for head in range(n_heads)
    ]
    return ops.concat(blocks, axis=-1)


def causal_attention(  # noqa: PLR0913
    x: Tensor,
    params: Mapping[str, Tensor],
    prefix: str,
    n_heads: int,
    offset: int = 0,
    cache: Optional[KVCache] = None,
    layer: int = 0,
) -> Tensor:
    """Multi-head softmax attention with rotated queries and keys.

    Args:
        x: The input, (..., length, d).
        params: The parameter tensors.
        prefix: For example ``blocks.0.attn``.
        n_heads: The number of heads.
        offset: The absolute position of the first row.
        cache: When given, rows also attend to the cached positions and are appended to it.
        layer: The cache layer index.

    Returns:
        The (..., length, d) output.
    """
    length = x.shape[-2]
    d_head = x.shape[-1] // n_heads
    positions = offset + np.arange(length)
    q = _split_heads_rotated(ops.matmul(x, params[f"{prefix}.w_q"]), n_heads, positions)
    k = _split_heads_rotated(ops.matmul(x, params[f"{prefix}.w_k"]), n_heads, positions)
    v = ops.matmul(x, params[f"{prefix}.w_v"])
    if cache is not None:
        past_keys, past_values = cache.get(layer)
        cache.append(layer, k.data, v.data)
        if past_keys.shape[-2]:
            k = ops.concat([Tensor(past_keys), k], axis=-2)
            v = ops.concat([Tensor(past_values), v], axis=-2)
    visible = np.arange(k.shape[-2])[None, :] <= (offset + np.arange(length))[:, None]
    scale = 1.0 / math.sqrt(d_head)
    heads = []
    for head in range(n_heads):
        cols = (Ellipsis, slice(head * d_head, (head + 1) * d_head))
        scores = ops.matmul(q[cols], ops.transpose(k[cols])) * scale
        heads.append(ops.matmul(ops.softmax_rows(scores, visible), v[cols]))
    return ops.matmul(ops.concat(heads, axis=-1), params[f"{prefix}.w_o"])


def baseline_layers(
    ids: NDArray[np.int64],
    config: ModelConfig,
    params: Mapping[str, Tensor],
    cache: Optional[KVCache] = None,
    offset: int = 0,
    rng: Optional[Rng] = None,
) -> Tuple[Tensor, Optional[KVCache]]:
    """Run the transformer blocks, the attention twin of ``retnet_layers``.

    Args:
        ids: Validated token ids, (length,) or (batch, length).
        config: The model config.
        params: The parameter tensors.
        cache: The cache holding positions before ``offset``, extended in place.
        offset: The absolute position of the first token.
        rng: Dropout stream, set only while training.

    Returns:
        The (..., length, vocab) logits and the cache.
    """
    x = embed(ids, params, config, rng)
    for layer in range(config.n_layers):
        prefix = f"blocks.{layer}"
        mixed = causal_attention(
            layer_norm(x, params, f"{prefix}.ln_1", config.eps),
            params,
            f"{prefix}.attn",
            config.heads,
            offset,
            cache,
            layer,
        )
        x = x + maybe_dropout(mixed, config, rng)
        normed = layer_norm(x, params, f"{prefix}.ln_2", config.eps)
        x = x + maybe_dropout(feed_forward(normed, params, f"{prefix}.ffn"), config, rng)
    return output_logits(x, params, config), cache


def baseline_forward(
    tokens: ArrayLike,
    config: ModelConfig,
    params: ParamsLike,
    rng: Optional[Rng] = None,
) -> Tensor:
    """Next-token logits of the transformer baseline for every position.

    Args:
        tokens: Ids of shape (length,) or (batch, length).
        config: A transformer model config.
        params: Arrays or tensors keyed by name.
        rng: Dropout stream, set only while training.

    Returns:
        The (..., length, vocab) logits.
    """
    if config.architecture is not Architecture.TRANSFORMER:
        raise ValueError(
            f"baseline_forward needs a transformer config, got {config.architecture.value}."
        )
    ids = check_tokens(tokens, config)
    return baseline_layers(ids, config, as_param_tensors(params), rng=rng)[0]
