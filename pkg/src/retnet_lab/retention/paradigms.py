"""The parallel, recurrent and chunkwise forms of single head retention.

All three compute the same operator. For a causal decay gamma, output row n is
``sum_{m <= n} gamma^(n - m) (q_n . k_m) v_m`` up to the stabilizers in NormalizationConfig.
Inputs may carry any leading batch axes in front of (length, features).
"""

import math

from typing import Any, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from numpy.typing import NDArray

from retnet_lab.helpers.enums import Precision
from retnet_lab.numerics import ops
from retnet_lab.numerics.tensor import precision_dtype, Tensor
from retnet_lab.retention.decay import (
    DecayMask,
    decay_powers,
    geometric_sums,
    NormalizationConfig,
)


class RetentionState(NamedTuple):
    """The recurrent memory of one head.

    ``s`` is sum_m gamma^(n - m) k_m^T v_m, ``k_sum`` the matching decayed key sum and ``scale``
    the decayed count sum_i gamma^i. None of them grows with the position.
    """

    s: Tensor  # (..., d_k, d_v)
    k_sum: Tensor  # (..., d_k)
    scale: float
    position: int

    ################################################################################################
    # Public Methods
    ################################################################################################

    @classmethod
    def zeros(
        cls,
        d_k: int,
        d_v: int,
        precision: Precision = Precision.FP64,
        batch_shape: Sequence[int] = (),
    ) -> "RetentionState":
        """The state before any position was seen.

        Args:
            d_k: The query/key width.
            d_v: The value width.
            precision: The element precision.
            batch_shape: Leading batch axes.

        Returns:
            An all zero state at position 0.
        """
        dtype = precision_dtype(precision)
        return cls(
            s=Tensor(np.zeros((*batch_shape, d_k, d_v), dtype=dtype)),
            k_sum=Tensor(np.zeros((*batch_shape, d_k), dtype=dtype)),
            scale=0.0,
            position=0,
        )

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def element_count(self) -> int:
        """The exact number of floats held: d_k * d_v + d_k + 1 per batch entry."""
        batch = int(np.prod(self.s.shape[:-2], dtype=np.int64))
        return self.s.size + self.k_sum.size + batch


def _qk_scale(d_k: int, cfg: NormalizationConfig) -> float:
    return 1.0 / math.sqrt(d_k) if cfg.scale_qk else 1.0


def _value_decay(gamma: float, length: int) -> NDArray[np.float64]:
    """gamma^(length - 1 - j): how much value row j of a chunk has decayed by the chunk end."""
    return np.power(float(gamma), np.arange(length - 1, -1, -1))


def _cross_decay(gamma: float, length: int) -> NDArray[np.float64]:
    """gamma^(j + 1): how much the incoming state has decayed at chunk row j."""
    return np.power(float(gamma), np.arange(1, length + 1))


def _check_inputs(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.shape != k.shape:
        raise ValueError(f"Queries {q.shape} and keys {k.shape} must have the same shape.")
    if v.shape[:-1] != q.shape[:-1]:
        raise ValueError(f"Values {v.shape} do not line up with queries {q.shape}.")


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}.")


def _check_state(state: RetentionState, k: Tensor, v: Tensor) -> None:
    expected = (*k.shape[:-2], k.shape[-1], v.shape[-1]) if k.ndim >= 2 else ()  # noqa: PLR2004
    if expected and state.s.shape != expected:
        raise ValueError(
            f"State of shape {state.s.shape} does not fit inputs, expected {expected}."
        )


def _stabilize(
    out: Tensor,
    row_sum: Optional[Tensor],
    scale: NDArray[Any],
    cfg: NormalizationConfig,
) -> Tensor:
    """Apply the decay row normalization and the row sum clamp to finished output rows."""
    if cfg.normalize_d:
        inv_scale = 1.0 / np.sqrt(scale)
        out = out * inv_scale
        if row_sum is not None:
            row_sum = row_sum * inv_scale
    if cfg.clamp_row_sum and row_sum is not None:
        out = out / ops.maximum(ops.absolute(row_sum), 1.0)
    return out


def retention_parallel(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: DecayMask,
    cfg: NormalizationConfig,
) -> Tensor:
    """Retention over a whole sequence at once, (Q K^T * D) V.

    Args:
        q: Rotated queries, (..., length, d_k).
        k: Rotated keys, (..., length, d_k).
        v: Values, (..., length, d_v).
        mask: The decay mask for this head, normalized iff cfg.normalize_d.
        cfg: The stabilizers.

    Returns:
        The (..., length, d_v) output.
    """
    _check_inputs(q, k, v)
    length = q.shape[-2]
    if mask.length != length:
        raise ValueError(f"Mask length {mask.length} does not match sequence length {length}.")
    if mask.normalized != cfg.normalize_d:
        raise ValueError("The decay mask normalization does not match cfg.normalize_d.")
    scores = ops.matmul(q, ops.transpose(k)) * (_qk_scale(q.shape[-1], cfg) * mask.matrix)
    if cfg.clamp_row_sum:
        row_sum = ops.sum(scores, axis=-1, keepdims=True)
        scores = scores / ops.maximum(ops.absolute(row_sum), 1.0)
    return ops.matmul(scores, v)


def parallel_final_state(k: Tensor, v: Tensor, gamma: float) -> RetentionState:
    """The closed form recurrent state after a whole sequence, starting from zero.

    Args:
        k: Rotated keys, (..., length, d_k).
        v: Values, (..., length, d_v).
        gamma: The decay rate in [0, 1].

    Returns:
        The state the recurrent form would hold after the last position.
    """
    _check_gamma(gamma)
    length = k.shape[-2]
    weights = _value_decay(gamma, length)[:, None]
    return RetentionState(
        s=ops.matmul(ops.transpose(k), v * weights),
        k_sum=ops.sum(k * weights, axis=-2),
        scale=float(geometric_sums(gamma, length)[-1]),
        position=length,
    )


def retention_recurrent_step(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    state: RetentionState,
    gamma: float,
    cfg: NormalizationConfig,
) -> Tuple[Tensor, RetentionState]:
    """Advance the state by one position and read it with the query.

    Args:
        q: The rotated query, (..., d_k).
        k: The rotated key, (..., d_k).
        v: The value, (..., d_v).
        state: The state before this position.
        gamma: The decay rate in [0, 1].
        cfg: The stabilizers.

    Returns:
        The (..., d_v) output and the new state. The input state is left untouched.
    """
    _check_inputs(q, k, v)
    _check_gamma(gamma)
    d_k = q.shape[-1]
    if state.s.shape != (*k.shape, v.shape[-1]):
        raise ValueError(f"State of shape {state.s.shape} does not fit key {k.shape}.")
    column = ops.reshape(k, (*k.shape, 1))
    outer = ops.matmul(column, ops.reshape(v, (*v.shape[:-1], 1, v.shape[-1])))
    s = state.s * gamma + outer
    k_sum = state.k_sum * gamma + k
    scale = gamma * state.scale + 1.0

    qk = _qk_scale(d_k, cfg)
    row_query = ops.reshape(q, (*q.shape[:-1], 1, d_k))
    out = ops.reshape(ops.matmul(row_query, s), v.shape) * qk
    row_sum = ops.sum(q * k_sum, axis=-1, keepdims=True) * qk if cfg.clamp_row_sum else None
    out = _stabilize(out, row_sum, np.asarray(scale), cfg)
    return out, RetentionState(s, k_sum, scale, state.position + 1)


def retention_chunk(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    state: RetentionState,
    gamma: float,
    cfg: NormalizationConfig,
) -> Tuple[Tensor, RetentionState]:
    """Process one chunk: parallel inside it, the incoming state for everything before it.

    Args:
        q: Rotated queries of the chunk, (..., b, d_k).
        k: Rotated keys of the chunk, (..., b, d_k).
        v: Values of the chunk, (..., b, d_v).
        state: The state after the previous chunk.
        gamma: The decay rate in [0, 1].
        cfg: The stabilizers.

    Returns:
        The chunk output and the state after its last row.
    """
    _check_inputs(q, k, v)
    _check_gamma(gamma)
    _check_state(state, k, v)
    length, d_k = q.shape[-2], q.shape[-1]
    qk = _qk_scale(d_k, cfg)
    cross_decay = _cross_decay(gamma, length)[:, None]

    scores = ops.matmul(q, ops.transpose(k)) * (qk * decay_powers(gamma, length))
    out = ops.matmul(scores, v) + ops.matmul(q, state.s) * (qk * cross_decay)
    row_sum = None
    if cfg.clamp_row_sum:
        carried = ops.matmul(q, ops.reshape(state.k_sum, (*state.k_sum.shape, 1)))
        row_sum = ops.sum(scores, axis=-1, keepdims=True) + carried * (qk * cross_decay)
    partial_sums = geometric_sums(gamma, length)
    scale = cross_decay * state.scale + partial_sums[:, None]
    out = _stabilize(out, row_sum, scale, cfg)

    value_decay = _value_decay(gamma, length)[:, None]
    chunk_decay = float(gamma) ** length
    s = state.s * chunk_decay + ops.matmul(ops.transpose(k), v * value_decay)
    k_sum = state.k_sum * chunk_decay + ops.sum(k * value_decay, axis=-2)
    new_scale = chunk_decay * state.scale + float(partial_sums[-1])
    return out, RetentionState(s, k_sum, new_scale, state.position + length)


def retention_chunkwise(  # noqa: PLR0913
    q: Tensor,
    k: Tensor,
    v: Tensor,
    state: Optional[RetentionState],
    gamma: float,
    chunk_size: int,
    cfg: NormalizationConfig,
) -> Tuple[Tensor, RetentionState]:
    """Split a sequence into chunks of ``chunk_size`` rows and run them in order.

    The last chunk may be shorter. A sequence no longer than ``chunk_size`` is a single chunk.

    Args:
        q: Rotated queries, (..., length, d_k).
        k: Rotated keys, (..., length, d_k).
        v: Values, (..., length, d_v).
        state: The state before the first row, zero when None.
        gamma: The decay rate in [0, 1].
        chunk_size: The chunk length B, at least one.
        cfg: The stabilizers.

    Returns:
        The (..., length, d_v) output and the state after the last row.
    """
    if chunk_size < 1:
        raise ValueError(f"The chunk size must be at least 1, got {chunk_size}.")
    _check_inputs(q, k, v)
    if state is None:
        state = RetentionState.zeros(
            q.shape[-1], v.shape[-1], q.precision, batch_shape=q.shape[:-2]
        )
    outputs = []
    for start in range(0, q.shape[-2], chunk_size):
        rows = (Ellipsis, slice(start, start + chunk_size), slice(None))
        out, state = retention_chunk(q[rows], k[rows], v[rows], state, gamma, cfg)
        outputs.append(out)
    return ops.concat(outputs, axis=-2), state
