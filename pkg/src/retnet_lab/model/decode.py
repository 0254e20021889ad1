"""Autoregressive decoding sessions for both architectures."""

import logging

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from numpy.typing import ArrayLike, NDArray

from retnet_lab.helpers.enums import Architecture, Paradigm
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.layers import as_param_tensors, check_tokens, ParamsLike
from retnet_lab.model.retnet import retnet_layers
from retnet_lab.model.transformer import baseline_layers, KVCache
from retnet_lab.msr.layer import MSRState
from retnet_lab.numerics.tensor import Rng, Tensor

_logger = logging.getLogger(__name__)


class DecodeSession:
    """The inference memory of one model: layer states for RetNet, a KV cache for the baseline.

    A session has a single owner. Advancing it returns a new session and retires the old one, so
    a stale session cannot be advanced twice.
    """

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    def __init__(  # noqa: PLR0913
        self,
        config: ModelConfig,
        batch_size: Optional[int] = None,
        states: Optional[Sequence[MSRState]] = None,
        cache: Optional[KVCache] = None,
        position: int = 0,
    ) -> None:
        """Wrap existing decoding memory, use ``start`` for a fresh session.

        Args:
            config: The model config.
            batch_size: The number of sequences decoded together, None for a single unbatched one.
            states: One MSRState per layer (RetNet).
            cache: The key/value cache (transformer).
            position: How many tokens the session has absorbed.
        """
        self.config = config
        self.batch_size = batch_size
        self.states = None if states is None else tuple(states)
        self.cache = cache
        self.position = position
        self._retired = False

    def __repr__(self) -> str:
        """Show the architecture, position and state size."""
        return (
            f"DecodeSession({self.config.architecture.value}, position={self.position}, "
            f"state_elements={self.state_elements})"
        )

    ################################################################################################
    # Public Methods
    ################################################################################################

    @classmethod
    def start(cls, config: ModelConfig, batch_size: Optional[int] = None) -> "DecodeSession":
        """An empty session at position 0.

        Args:
            config: The model config.
            batch_size: The number of sequences decoded together, None for a single one.

        Returns:
            The session.
        """
        batch_shape = () if batch_size is None else (batch_size,)
        if config.architecture is Architecture.RETNET:
            states = [
                MSRState.zeros(config.heads, config.d_model, config.precision, batch_shape)
                for _ in range(config.n_layers)
            ]
            return cls(config, batch_size, states=states)
        cache = KVCache(config.n_layers, config.d_model, batch_shape, config.dtype)
        return cls(config, batch_size, cache=cache)

    def claim(self) -> None:
        """Retire the session before advancing it."""
        if self._retired:
            raise ValueError("This decode session was already advanced, use the returned session.")
        self._retired = True

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        """The leading batch axes of every token array."""
        return () if self.batch_size is None else (self.batch_size,)

    @property
    def state_elements(self) -> int:
        """The exact number of floats carried between steps."""
        if self.states is not None:
            return sum(state.element_count for state in self.states)
        return 0 if self.cache is None else self.cache.element_count

    @property
    def workspace_elements(self) -> int:
        """Every float allocated for the carried memory, including unused cache capacity."""
        if self.states is not None:
            return self.state_elements
        return 0 if self.cache is None else self.cache.capacity_elements


def _token_ids(session: DecodeSession, tokens: ArrayLike) -> NDArray[np.int64]:
    ids = np.asarray(tokens, dtype=np.int64).reshape(*session.batch_shape, -1)
    return check_tokens(ids, session.config)


def _advance(
    session: DecodeSession,
    ids: NDArray[np.int64],
    params: ParamsLike,
    paradigm: Paradigm,
) -> Tuple[Tensor, DecodeSession]:
    session.claim()
    config = session.config
    tensors = as_param_tensors(params)
    length = ids.shape[-1]
    if config.architecture is Architecture.RETNET:
        incoming = None if paradigm is Paradigm.PARALLEL else session.states
        logits, states = retnet_layers(ids, config, tensors, paradigm, incoming)
        advanced = DecodeSession(config, session.batch_size, states=states)
    else:
        logits, cache = baseline_layers(ids, config, tensors, session.cache, session.position)
        advanced = DecodeSession(config, session.batch_size, cache=cache)
    advanced.position = session.position + length
    return logits, advanced


def decode_step(
    session: DecodeSession,
    token: Union[int, ArrayLike],
    params: ParamsLike,
) -> Tuple[Tensor, DecodeSession]:
    """Feed one token and read the next-token logits in O(1) memory for RetNet.

    Args:
        session: The session, retired by this call.
        token: One id, or one id per batch entry.
        params: Arrays or tensors keyed by name. Pass tensors to avoid a copy per step.

    Returns:
        The (vocab,) or (batch, vocab) logits and the advanced session.
    """
    ids = _token_ids(session, token)
    if ids.shape[-1] != 1:
        raise ValueError(f"decode_step takes one token per sequence, got {ids.shape[-1]}.")
    logits, advanced = _advance(session, ids, params, Paradigm.RECURRENT)
    return logits[Ellipsis, -1, :], advanced


def baseline_decode_step(
    session: DecodeSession,
    token: Union[int, ArrayLike],
    params: ParamsLike,
) -> Tuple[Tensor, DecodeSession]:
    """``decode_step`` restricted to the transformer baseline and its KV cache.

    Args:
        session: A transformer session, retired by this call.
        token: One id, or one id per batch entry.
        params: Arrays or tensors keyed by name.

    Returns:
        The logits and the advanced session.
    """
    if session.config.architecture is not Architecture.TRANSFORMER:
        raise ValueError("baseline_decode_step needs a transformer session.")
    return decode_step(session, token, params)


def prefill(
    session: DecodeSession,
    tokens: ArrayLike,
    params: ParamsLike,
) -> Tuple[Tensor, DecodeSession]:
    """Absorb a prompt in one pass.

    A fresh RetNet session uses the parallel form and keeps its closed form final state. A session
    that already holds positions continues with the chunkwise form from its state.

    Args:
        session: The session, retired by this call.
        tokens: The prompt, (length,) or (batch, length).
        params: Arrays or tensors keyed by name.

    Returns:
        The (..., length, vocab) logits and the advanced session.
    """
    ids = _token_ids(session, tokens)
    paradigm = Paradigm.PARALLEL if session.position == 0 else Paradigm.CHUNKWISE
    return _advance(session, ids, params, paradigm)


def _choose(logits: NDArray[np.floating], temperature: float, rng: Optional[Rng]) -> int:
    if temperature <= 0.0:
        return int(np.argmax(logits))
    if rng is None:
        raise ValueError("Sampling with a temperature needs an Rng.")
    scaled = logits.astype(np.float64) / temperature
    weights = np.exp(scaled - scaled.max())
    cumulative = np.cumsum(weights / weights.sum())
    return int(min(np.searchsorted(cumulative, rng.uniform(())), len(cumulative) - 1))


def generate(  # noqa: PLR0913
    session: DecodeSession,
    prompt: Sequence[int],
    steps: int,
    params: ParamsLike,
    temperature: float = 0.0,
    rng: Optional[Rng] = None,
) -> Tuple[List[int], DecodeSession]:
    """Continue a single prompt token by token.

    Args:
        session: An unbatched session, retired by this call.
        prompt: The prompt ids, normally starting with <bos>.
        steps: How many tokens to produce.
        params: Arrays or tensors keyed by name.
        temperature: Zero for greedy argmax, otherwise the softmax temperature.
        rng: The sampling stream, needed when temperature is positive.

    Returns:
        The produced ids and the session after absorbing all but the last of them.
    """
    if session.batch_size is not None:
        raise ValueError("generate works on unbatched sessions.")
    tensors = as_param_tensors(params)
    logits, session = prefill(session, list(prompt), tensors)
    last = logits.data[-1]
    produced: List[int] = []
    for step in range(steps):
        produced.append(_choose(last, temperature, rng))
        if step + 1 < steps:
            next_logits, session = decode_step(session, produced[-1], tensors)
            last = next_logits.data
    _logger.debug("generated %d tokens, session at position %d", steps, session.position)
    return produced, session
