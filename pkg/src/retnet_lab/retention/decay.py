"""Causal exponential decay masks and the stabilizer switches that go with them."""

from typing import Any, NamedTuple

import numpy as np

from numpy.typing import NDArray
from pydantic.dataclasses import dataclass


@dataclass(frozen=True, kw_only=True)
class NormalizationConfig:
    """Numerical stabilizers for retention scores.

    None of them changes the layer output once a per-position GroupNorm follows, they only keep
    the raw values in range.
    """

    scale_qk: bool = True  # divide QK^T by sqrt(d_k)
    normalize_d: bool = True  # divide each decay row by sqrt of its sum
    clamp_row_sum: bool = True  # divide each score row by max(|row sum|, 1)

    @classmethod
    def disabled(cls) -> "NormalizationConfig":
        """All three stabilizers off, the raw retention operator."""
        return cls(scale_qk=False, normalize_d=False, clamp_row_sum=False)


class DecayMask(NamedTuple):
    """A lower triangular mask with entries gamma^(n - m)."""

    gamma: float
    length: int
    matrix: NDArray[Any]  # (length, length), row normalized when normalized is set
    row_scales: NDArray[Any]  # sqrt of the raw row sums, ones when not normalized
    normalized: bool


def decay_powers(gamma: float, length: int) -> NDArray[np.float64]:
    """The raw (length, length) mask gamma^(n - m) for n >= m, zero above the diagonal.

    Args:
        gamma: The decay rate in [0, 1].
        length: The number of positions.

    Returns:
        The mask in float64.
    """
    distance = np.subtract.outer(np.arange(length), np.arange(length))
    # clamp the exponent so gamma = 0 never sees a negative power
    powers = np.power(float(gamma), np.maximum(distance, 0))
    return np.where(distance >= 0, powers, 0.0)


def geometric_sums(gamma: float, count: int) -> NDArray[np.float64]:
    """Partial sums 1 + gamma + ... + gamma^j for j = 0 .. count - 1.

    Args:
        gamma: The decay rate in [0, 1].
        count: How many partial sums.

    Returns:
        The partial sums in float64.
    """
    return np.cumsum(np.power(float(gamma), np.arange(count)))


def decay_mask(gamma: float, length: int, cfg: NormalizationConfig) -> DecayMask:
    """Build the decay mask for one head.

    Args:
        gamma: The decay rate in (0, 1].
        length: The sequence length, at least one.
        cfg: Whether rows are divided by the square root of their sum.

    Returns:
        The mask.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}.")
    if length < 1:
        raise ValueError(f"The mask length must be at least 1, got {length}.")
    matrix = decay_powers(gamma, length)
    if cfg.normalize_d:
        row_scales = np.sqrt(matrix.sum(axis=1))
        matrix = matrix / row_scales[:, None]
    else:
        row_scales = np.ones(length)
    return DecayMask(gamma, length, matrix, row_scales, cfg.normalize_d)
