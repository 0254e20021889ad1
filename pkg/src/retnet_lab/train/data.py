"""Byte level corpora and synthetic probe tasks, both yielding <bos> led batches."""

from pathlib import Path
from typing import Any, NamedTuple, Union

import numpy as np

from numpy.typing import NDArray
from pydantic import model_validator
from pydantic.dataclasses import dataclass

from retnet_lab.helpers.enums import SyntheticKind
from retnet_lab.helpers.vocabulary import BOS_ID, BYTE_COUNT
from retnet_lab.numerics.tensor import Rng, Tensor


class Batch(NamedTuple):
    """Aligned model inputs and next-token targets, (batch, length) each."""

    inputs: NDArray[np.int64]
    targets: NDArray[np.int64]
    weights: NDArray[np.float64]  # zero where a target is not scored

    @property
    def token_count(self) -> int:
        """The number of input tokens in the batch."""
        return int(self.inputs.size)


def lead_with_bos(windows: NDArray[np.int64]) -> Batch:
    """Turn raw windows into inputs ``[<bos>, w_0 .. w_{n-2}]`` and targets ``w``.

    Args:
        windows: A (batch, length) array of byte ids.

    Returns:
        The batch with every target scored.
    """
    windows = np.asarray(windows, dtype=np.int64)
    bos = np.full((*windows.shape[:-1], 1), BOS_ID, dtype=np.int64)
    inputs = np.concatenate([bos, windows[..., :-1]], axis=-1)
    return Batch(inputs, windows, np.ones(windows.shape, dtype=np.float64))


class Corpus:
    """Raw bytes split once into a training and a validation region."""

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    def __init__(self, data: bytes, valid_fraction: float = 0.1) -> None:
        """Split the bytes, the validation region is the tail.

        Args:
            data: The corpus text as bytes.
            valid_fraction: The share of bytes held out for evaluation.
        """
        if not 0.0 <= valid_fraction < 1.0:
            raise ValueError(f"valid_fraction must lie in [0, 1), got {valid_fraction}.")
        self.ids = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
        if self.ids.size == 0:
            raise ValueError("The corpus is empty.")
        self.split = len(self.ids) - int(len(self.ids) * valid_fraction)

    def __len__(self) -> int:
        """The total number of bytes."""
        return len(self.ids)

    ################################################################################################
    # Public Methods
    ################################################################################################

    @classmethod
    def from_file(cls, path: Union[str, Path], valid_fraction: float = 0.1) -> "Corpus":
        """Read any file as a byte corpus.

        Args:
            path: The file path.
            valid_fraction: The share of bytes held out for evaluation.

        Returns:
            The corpus.
        """
        return cls(Path(path).read_bytes(), valid_fraction)

    def windows(self, seq_len: int) -> NDArray[np.int64]:
        """Every contiguous non-overlapping training window of ``seq_len`` bytes.

        Args:
            seq_len: The window length.

        Returns:
            A (count, seq_len) array.
        """
        count = self.split // seq_len
        if count == 0:
            raise ValueError(
                f"The training region holds {self.split} bytes, fewer than one window of {seq_len}."
            )
        return self.train_ids[: count * seq_len].reshape(count, seq_len)

    def sample(self, batch_size: int, seq_len: int, rng: Rng) -> Batch:
        """Draw training windows.

        Args:
            batch_size: The number of sequences.
            seq_len: The sequence length.
            rng: The data stream.

        Returns:
            The batch.
        """
        windows = self.windows(seq_len)
        picked = rng.choice(len(windows), batch_size, replace=len(windows) < batch_size)
        return lead_with_bos(windows[picked])

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def train_ids(self) -> NDArray[np.int64]:
        """The training region."""
        return self.ids[: self.split]

    @property
    def valid_ids(self) -> NDArray[np.int64]:
        """The held out region, empty when valid_fraction is zero."""
        return self.ids[self.split :]


@dataclass(frozen=True, kw_only=True)
class SyntheticTask:
    """Generated sequences with one exact answer, used to probe what a model can learn.

    ``copy`` lays out ``<bos> payload <sep> payload`` and scores the repeated payload.
    ``induction`` hides a ``<key> value`` pair in random filler, ends with ``<key>`` and scores the
    single prediction of ``value``.
    """

    kind: SyntheticKind = SyntheticKind.COPY
    length: int = 16
    alphabet: int = 16
    seed: int = 0

    ################################################################################################
    # Public Methods
    ################################################################################################

    def sample(self, batch_size: int, rng: Rng) -> Batch:
        """Draw a batch of task sequences.

        Args:
            batch_size: The number of sequences.
            rng: The data stream.

        Returns:
            The batch, weighted on the answer positions only.
        """
        if self.kind is SyntheticKind.COPY:
            return self._copy_batch(batch_size, rng)
        return self._induction_batch(batch_size, rng)

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def marker(self) -> int:
        """The separator for copy, the key for induction. Never drawn as payload."""
        return self.alphabet

    ################################################################################################
    # Private Methods
    ################################################################################################

    @model_validator(mode="after")
    def _check_sizes(self) -> "SyntheticTask":
        if self.length < 2:  # noqa: PLR2004
            raise ValueError(f"length must be at least 2, got {self.length}.")
        if not 2 <= self.alphabet < BYTE_COUNT:  # noqa: PLR2004
            raise ValueError(f"alphabet must lie in [2, {BYTE_COUNT}), got {self.alphabet}.")
        return self

    def _copy_batch(self, batch_size: int, rng: Rng) -> Batch:
        payload = rng.integers(0, self.alphabet, (batch_size, self.length))
        marker = np.full((batch_size, 1), self.marker, dtype=np.int64)
        batch = lead_with_bos(np.concatenate([payload, marker, payload], axis=-1))
        weights = np.zeros(batch.targets.shape, dtype=np.float64)
        weights[:, -self.length :] = 1.0
        return batch._replace(weights=weights)

    def _induction_batch(self, batch_size: int, rng: Rng) -> Batch:
        filler = rng.integers(0, self.alphabet, (batch_size, self.length))
        values = rng.integers(0, self.alphabet, (batch_size,))
        slots = rng.integers(0, self.length - 1, (batch_size,))
        rows = np.arange(batch_size)
        filler[rows, slots] = self.marker
        filler[rows, slots + 1] = values
        marker = np.full((batch_size, 1), self.marker, dtype=np.int64)
        batch = lead_with_bos(np.concatenate([filler, marker, values[:, None]], axis=-1))
        weights = np.zeros(batch.targets.shape, dtype=np.float64)
        weights[:, -1] = 1.0
        return batch._replace(weights=weights)


def task_accuracy(logits: Union[Tensor, NDArray[Any]], batch: Batch) -> float:
    """The exact-match rate of argmax predictions on the scored positions.

    Args:
        logits: The (batch, length, vocab) logits for ``batch.inputs``.
        batch: The batch the logits were computed on.

    Returns:
        The fraction of scored targets predicted exactly.
    """
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    scored = batch.weights > 0
    if not scored.any():
        raise ValueError("The batch has no scored positions.")
    hits = np.argmax(values, axis=-1) == batch.targets
    return float(hits[scored].mean())
