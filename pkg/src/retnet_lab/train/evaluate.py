"""Last-K perplexity evaluation over several context lengths."""

import logging

from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from numpy.typing import ArrayLike

from retnet_lab.helpers.enums import Paradigm
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.layers import as_param_tensors, ParamsLike
from retnet_lab.model.retnet import forward
from retnet_lab.train.data import lead_with_bos
from retnet_lab.train.loss import cross_entropy, perplexity

_logger = logging.getLogger(__name__)


class PerplexityRow(NamedTuple):
    """The score of one context length."""

    context_length: int
    tokens_scored: int
    loss: float
    perplexity: float


def window_ends(
    length: int,
    context_lengths: Sequence[int],
    score_last: int,
    max_windows: Optional[int] = None,
) -> List[int]:
    """The exclusive end offsets shared by every context length.

    Args:
        length: The number of tokens in the slice.
        context_lengths: The requested context lengths.
        score_last: How many final targets of each window are scored.
        max_windows: Caps the number of windows.

    Returns:
        End offsets spaced ``score_last`` apart so scored targets never overlap.
    """
    if not context_lengths:
        raise ValueError("At least one context length is needed.")
    if score_last < 1 or score_last > min(context_lengths):
        raise ValueError(
            f"score_last={score_last} must lie in [1, {min(context_lengths)}], "
            "the shortest context."
        )
    longest = max(context_lengths)
    if length < longest:
        raise ValueError(
            f"Insufficient data: {length} tokens cannot fill a context of {longest}."
        )
    ends = list(range(longest, length + 1, score_last))
    return ends if max_windows is None else ends[:max_windows]


def eval_perplexity(  # noqa: PLR0913
    params: ParamsLike,
    config: ModelConfig,
    data: ArrayLike,
    context_lengths: Sequence[int] = (64, 128, 256),
    score_last: int = 32,
    max_windows: Optional[int] = None,
    paradigm: Optional[Paradigm] = None,
) -> List[PerplexityRow]:
    """Score the same final tokens of each window under every context length.

    A window of context c ending at offset e conditions on ``<bos>`` and ``data[e - c : e - 1]``
    and predicts ``data[e - c : e]``. Only the last ``score_last`` targets count, and they are the
    same tokens for every c, so a longer context always conditions on at least as much text.

    Args:
        params: Arrays or tensors keyed by name.
        config: The model config.
        data: A slice of token ids, longer than the largest context.
        context_lengths: The contexts to compare.
        score_last: The number of final targets scored per window.
        max_windows: Caps the number of windows.
        paradigm: The retention paradigm, defaults to ``config.paradigm``.

    Returns:
        One row per context length, in the order given.
    """
    ids = np.asarray(data, dtype=np.int64).reshape(-1)
    ends = window_ends(len(ids), context_lengths, score_last, max_windows)
    tensors = as_param_tensors(params)
    rows: List[PerplexityRow] = []
    for context in context_lengths:
        windows = np.stack([ids[end - context : end] for end in ends])
        batch = lead_with_bos(windows)
        logits = forward(batch.inputs, config, tensors, paradigm)
        loss = cross_entropy(logits[:, -score_last:, :], batch.targets[:, -score_last:]).item()
        rows.append(PerplexityRow(context, len(ends) * score_last, loss, perplexity(loss)))
        _logger.info("context %d: loss %.4f perplexity %.3f", context, loss, rows[-1].perplexity)
    return rows


def validation_loss(
    params: ParamsLike,
    config: ModelConfig,
    data: ArrayLike,
    seq_len: int,
    max_windows: Optional[int] = 16,
) -> float:
    """Mean next-token loss over non-overlapping <bos> led windows of held out data.

    Args:
        params: Arrays or tensors keyed by name.
        config: The model config.
        data: Held out token ids.
        seq_len: The window length.
        max_windows: Caps the number of windows.

    Returns:
        The loss in nats.
    """
    ids = np.asarray(data, dtype=np.int64).reshape(-1)
    count = len(ids) // seq_len
    if max_windows is not None:
        count = min(count, max_windows)
    if count == 0:
        raise ValueError(f"Insufficient data: {len(ids)} tokens cannot fill a window of {seq_len}.")
    batch = lead_with_bos(ids[: count * seq_len].reshape(count, seq_len))
    logits = forward(batch.inputs, config, as_param_tensors(params))
    return cross_entropy(logits, batch.targets).item()
