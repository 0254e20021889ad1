"""The RetNet stack: pre-LN blocks of multi-scale retention and a feed-forward network."""

from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from numpy.typing import ArrayLike, NDArray

from retnet_lab.helpers.enums import Architecture, Paradigm
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
from retnet_lab.model.transformer import baseline_layers
from retnet_lab.msr.layer import msr_forward, MSRLayerParams, MSRState
from retnet_lab.numerics.tensor import Rng, Tensor


def retnet_layers(
    ids: NDArray[np.int64],
    config: ModelConfig,
    params: Mapping[str, Tensor],
    paradigm: Paradigm,
    states: Optional[Sequence[MSRState]] = None,
    rng: Optional[Rng] = None,
) -> Tuple[Tensor, List[MSRState]]:
    """Run the blocks, Y = MSR(LN(X)) + X then X' = FFN(LN(Y)) + Y.

    Args:
        ids: Validated token ids, (length,) or (batch, length).
        config: The model config.
        params: The parameter tensors.
        paradigm: How retention walks the sequence.
        states: One incoming state per layer, or None to start from scratch.
        rng: Dropout stream, set only while training.

    Returns:
        The (..., length, vocab) logits and one outgoing state per layer.
    """
    if states is not None and len(states) != config.n_layers:
        raise ValueError(f"Got {len(states)} layer states for {config.n_layers} layers.")
    gammas = config.gammas
    x = embed(ids, params, config, rng)
    new_states: List[MSRState] = []
    for layer in range(config.n_layers):
        prefix = f"blocks.{layer}"
        msr_params = MSRLayerParams.from_mapping(params, f"{prefix}.msr", gammas)
        mixed, state = msr_forward(
            layer_norm(x, params, f"{prefix}.ln_1", config.eps),
            msr_params,
            config.flags,
            paradigm,
            config.chunk_size,
            None if states is None else states[layer],
            config.normalization,
            config.eps,
        )
        x = x + maybe_dropout(mixed, config, rng)
        normed = layer_norm(x, params, f"{prefix}.ln_2", config.eps)
        hidden = feed_forward(normed, params, f"{prefix}.ffn")
        x = x + maybe_dropout(hidden, config, rng)
        new_states.append(state)
    return output_logits(x, params, config), new_states


def forward(
    tokens: ArrayLike,
    config: ModelConfig,
    params: ParamsLike,
    paradigm: Optional[Paradigm] = None,
    rng: Optional[Rng] = None,
) -> Tensor:
    """Next-token logits for every position.

    Transformer configs are routed to the baseline so callers can stay architecture agnostic.

    Args:
        tokens: Ids of shape (length,) or (batch, length), normally starting with <bos>.
        config: The model config.
        params: Arrays or tensors keyed by name.
        paradigm: Parallel or chunkwise, defaults to ``config.paradigm``.
        rng: Dropout stream, set only while training.

    Returns:
        The (..., length, vocab) logits. Row n depends on tokens up to n only.
    """
    ids = check_tokens(tokens, config)
    tensors = as_param_tensors(params)
    if config.architecture is Architecture.TRANSFORMER:
        return baseline_layers(ids, config, tensors, rng=rng)[0]
    paradigm = config.paradigm if paradigm is None else Paradigm(paradigm)
    if paradigm is Paradigm.RECURRENT:
        states = [
            MSRState.zeros(config.heads, config.d_model, config.precision, ids.shape[:-1])
            for _ in range(config.n_layers)
        ]
        return retnet_layers(ids, config, tensors, paradigm, states, rng)[0]
    return retnet_layers(ids, config, tensors, paradigm, None, rng)[0]
