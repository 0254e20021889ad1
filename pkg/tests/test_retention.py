"""Tests for the three retention paradigms and their building blocks."""

import itertools

from typing import Tuple

import numpy as np
import pytest

from retnet_lab.helpers.enums import Precision
from retnet_lab.numerics import ops
from retnet_lab.numerics.tensor import Rng, Tensor
from retnet_lab.retention.decay import decay_mask, decay_powers, NormalizationConfig
from retnet_lab.retention.paradigms import (
    parallel_final_state,
    retention_chunkwise,
    retention_parallel,
    retention_recurrent_step,
    RetentionState,
)
from retnet_lab.retention.rotation import apply_xpos, rotation_angles

GAMMAS = (0.9, 0.96875, 0.999)


def _inputs(
    length: int,
    d_k: int = 16,
    d_v: int = 16,
    seed: int = 0,
    batch_shape: Tuple[int, ...] = (),
) -> Tuple[Tensor, Tensor, Tensor]:
    rng = Rng(seed)
    q = Tensor(rng.normal((*batch_shape, length, d_k), 0.5))
    k = Tensor(rng.normal((*batch_shape, length, d_k), 0.5))
    v = Tensor(rng.normal((*batch_shape, length, d_v)))
    return q, k, v


def _parallel(q: Tensor, k: Tensor, v: Tensor, gamma: float, cfg: NormalizationConfig) -> Tensor:
    return retention_parallel(q, k, v, decay_mask(gamma, q.shape[-2], cfg), cfg)


def _recurrent(
    q: Tensor, k: Tensor, v: Tensor, gamma: float, cfg: NormalizationConfig
) -> Tuple[Tensor, RetentionState]:
    state = RetentionState.zeros(q.shape[-1], v.shape[-1])
    rows = []
    for t in range(q.shape[-2]):
        out, state = retention_recurrent_step(q[t], k[t], v[t], state, gamma, cfg)
        rows.append(out.data)
    return Tensor(np.stack(rows)), state


def test_decay_mask_entries() -> None:
    """Check the lower triangular powers and the row normalization."""
    raw = decay_powers(0.5, 3)
    assert np.array_equal(raw, [[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.25, 0.5, 1.0]])

    mask = decay_mask(0.5, 3, NormalizationConfig())
    assert mask.normalized
    assert np.allclose(mask.row_scales, np.sqrt([1.0, 1.5, 1.75]))
    assert np.allclose(mask.matrix * mask.row_scales[:, None], raw)
    assert not decay_mask(0.5, 3, NormalizationConfig.disabled()).normalized


@pytest.mark.parametrize("gamma", [0.0, -0.1, 1.5])
def test_decay_mask_rejects_gamma(gamma: float) -> None:
    """Check that the mask needs gamma in (0, 1]."""
    with pytest.raises(ValueError, match="gamma must lie"):
        decay_mask(gamma, 4, NormalizationConfig())


def test_parallel_matches_direct_sum() -> None:
    """Check the parallel form against the term by term sum over earlier positions."""
    q, k, v = _inputs(16)
    gamma = 0.9
    out = _parallel(q, k, v, gamma, NormalizationConfig.disabled())

    expected = np.zeros((16, 16))
    for n in range(16):
        for m in range(n + 1):
            expected[n] += gamma ** (n - m) * float(q.data[n] @ k.data[m]) * v.data[m]
    assert np.max(np.abs(out.data - expected)) <= 1e-12


def test_recurrent_matches_parallel() -> None:
    """Check a 32 step rollout against the parallel rows."""
    q, k, v = _inputs(32, seed=1)
    cfg = NormalizationConfig()
    reference = _parallel(q, k, v, 0.96875, cfg)
    rolled, _ = _recurrent(q, k, v, 0.96875, cfg)

    assert np.max(np.abs(rolled.data - reference.data)) <= 1e-10


def test_recurrent_state_is_exact() -> None:
    """Check that the recurrent state equals the decayed sum of key/value outer products."""
    q, k, v = _inputs(20, d_k=8, d_v=12, seed=2)
    gamma = 0.9
    _, state = _recurrent(q, k, v, gamma, NormalizationConfig())

    expected = sum(
        gamma ** (19 - m) * np.outer(k.data[m], v.data[m]) for m in range(20)
    )
    assert np.max(np.abs(state.s.data - expected)) <= 1e-12
    assert state.position == 20
    assert state.element_count == 8 * 12 + 8 + 1


def test_parallel_final_state_matches_recurrent() -> None:
    """Check the closed form state of the parallel form against the rollout."""
    q, k, v = _inputs(25, seed=3)
    _, rolled = _recurrent(q, k, v, 0.999, NormalizationConfig())
    closed = parallel_final_state(k, v, 0.999)

    assert np.max(np.abs(closed.s.data - rolled.s.data)) <= 1e-12
    assert np.max(np.abs(closed.k_sum.data - rolled.k_sum.data)) <= 1e-12
    assert closed.scale == pytest.approx(rolled.scale, rel=1e-12)
    assert closed.position == rolled.position


@pytest.mark.parametrize("chunk_size", [4, 16, 32])
def test_chunkwise_matches_parallel(chunk_size: int) -> None:
    """Check chunked processing of 64 positions against the parallel form and the rollout."""
    q, k, v = _inputs(64, seed=4)
    cfg = NormalizationConfig()
    reference = _parallel(q, k, v, 0.96875, cfg)
    _, rolled = _recurrent(q, k, v, 0.96875, cfg)
    chunked, state = retention_chunkwise(q, k, v, None, 0.96875, chunk_size, cfg)

    assert np.max(np.abs(chunked.data - reference.data)) <= 1e-10
    assert np.max(np.abs(state.s.data - rolled.s.data)) <= 1e-10
    assert state.position == 64


def test_chunkwise_handles_a_partial_last_chunk() -> None:
    """Check a length that is not a multiple of the chunk size."""
    q, k, v = _inputs(37, seed=5)
    cfg = NormalizationConfig()
    chunked, _ = retention_chunkwise(q, k, v, None, 0.9, 16, cfg)

    assert np.max(np.abs(chunked.data - _parallel(q, k, v, 0.9, cfg).data)) <= 1e-10


def test_chunkwise_continues_from_a_state() -> None:
    """Check that two calls carrying the state equal one call over the whole sequence."""
    q, k, v = _inputs(40, seed=6)
    cfg = NormalizationConfig()
    whole, _ = retention_chunkwise(q, k, v, None, 0.96875, 8, cfg)
    head = (slice(0, 24), slice(None))
    tail = (slice(24, 40), slice(None))
    first, state = retention_chunkwise(q[head], k[head], v[head], None, 0.96875, 8, cfg)
    second, _ = retention_chunkwise(q[tail], k[tail], v[tail], state, 0.96875, 8, cfg)

    joined = np.concatenate([first.data, second.data])
    assert np.max(np.abs(joined - whole.data)) <= 1e-10


def test_paradigms_agree_over_a_sweep() -> None:
    """Check all three forms over lengths, widths, decay rates, chunk sizes and stabilizers."""
    configs = [
        NormalizationConfig(scale_qk=a, normalize_d=b, clamp_row_sum=c)
        for a, b, c in itertools.product((True, False), repeat=3)
    ]
    for length, (d_k, d_v), gamma, cfg in itertools.product(
        (1, 5, 33), ((16, 16), (16, 64)), GAMMAS, configs
    ):
        q, k, v = _inputs(length, d_k, d_v, seed=length)
        reference = _parallel(q, k, v, gamma, cfg)
        rolled, _ = _recurrent(q, k, v, gamma, cfg)
        assert np.max(np.abs(rolled.data - reference.data)) <= 1e-10
        for chunk_size in (1, 4, 16, length):
            chunked, _ = retention_chunkwise(q, k, v, None, gamma, chunk_size, cfg)
            assert np.max(np.abs(chunked.data - reference.data)) <= 1e-10


def test_paradigms_agree_in_fp32() -> None:
    """Check the fp32 tolerance of the chunkwise form."""
    rng = Rng(7)
    q, k, v = (Tensor(rng.normal((48, 16), 0.5, Precision.FP32)) for _ in range(3))
    cfg = NormalizationConfig()
    reference = _parallel(q, k, v, 0.96875, cfg)
    chunked, _ = retention_chunkwise(q, k, v, None, 0.96875, 16, cfg)

    assert chunked.dtype == np.float32
    assert np.max(np.abs(chunked.data - reference.data)) <= 1e-5


def test_batch_axes_are_carried() -> None:
    """Check that leading batch axes match a per-sequence evaluation."""
    q, k, v = _inputs(12, seed=8, batch_shape=(2, 3))
    cfg = NormalizationConfig()
    batched, state = retention_chunkwise(q, k, v, None, 0.9, 5, cfg)

    assert batched.shape == (2, 3, 12, 16)
    assert state.element_count == 6 * (16 * 16 + 16 + 1)
    single = _parallel(q[1, 2], k[1, 2], v[1, 2], 0.9, cfg)
    assert np.max(np.abs(batched.data[1, 2] - single.data)) <= 1e-10


def test_stabilizers_are_neutral_after_group_norm() -> None:
    """Check that toggling the stabilizers does not change per-position normalized outputs."""
    q, k, v = _inputs(24, seed=9)
    configs = [
        NormalizationConfig(scale_qk=a, normalize_d=b, clamp_row_sum=c)
        for a, b, c in itertools.product((True, False), repeat=3)
    ]
    normed = [ops.group_norm(_parallel(q, k, v, 0.96875, cfg), 1, 1e-12) for cfg in configs]

    for other in normed[1:]:
        assert np.max(np.abs(other.data - normed[0].data)) <= 1e-6


def test_no_decay_is_a_running_sum() -> None:
    """Check gamma = 1 against a cumulative sum without stabilizers."""
    q, k, v = _inputs(10, seed=10)
    cfg = NormalizationConfig.disabled()
    chunked, _ = retention_chunkwise(q, k, v, None, 1.0, 3, cfg)
    expected = np.stack(
        [sum(float(q.data[n] @ k.data[m]) * v.data[m] for m in range(n + 1)) for n in range(10)]
    )

    assert np.max(np.abs(chunked.data - expected)) <= 1e-10


def test_rotated_scores_depend_on_distance_only() -> None:
    """Check that rotated query/key products only depend on the position difference."""
    rng = Rng(11)
    q = Tensor(rng.normal((1, 8)))
    k = Tensor(rng.normal((1, 8)))
    angles = rotation_angles(8)

    def score(n: int, m: int) -> float:
        rotated_q = apply_xpos(q, [n], 1, angles)
        rotated_k = apply_xpos(k, [m], 1, angles)
        return float(rotated_q.data[0] @ rotated_k.data[0])

    for n, m in ((5, 2), (9, 3), (40, 1)):
        assert abs(score(n, m) - score(n + 17, m + 17)) <= 1e-12


def test_chunkwise_rejects_bad_arguments() -> None:
    """Check the chunk size, the input shapes and the incoming state shape."""
    q, k, v = _inputs(8)
    cfg = NormalizationConfig()
    with pytest.raises(ValueError, match="chunk size"):
        retention_chunkwise(q, k, v, None, 0.9, 0, cfg)
    with pytest.raises(ValueError, match="same shape"):
        retention_chunkwise(q, Tensor(np.ones((8, 4))), v, None, 0.9, 4, cfg)
    with pytest.raises(ValueError, match="does not fit"):
        retention_chunkwise(q, k, v, RetentionState.zeros(4, 4), 0.9, 4, cfg)
    with pytest.raises(ValueError, match="gamma must lie"):
        retention_chunkwise(q, k, v, None, 1.5, 4, cfg)


def test_parallel_rejects_a_mismatched_mask() -> None:
    """Check that the mask length and normalization must match."""
    q, k, v = _inputs(8)
    with pytest.raises(ValueError, match="Mask length"):
        retention_parallel(
            q, k, v, decay_mask(0.9, 4, NormalizationConfig()), NormalizationConfig()
        )
    with pytest.raises(ValueError, match="normalization"):
        retention_parallel(
            q, k, v, decay_mask(0.9, 8, NormalizationConfig.disabled()), NormalizationConfig()
        )


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.96875, 0.999])
def test_raw_mask_shrinks_with_distance(gamma: float) -> None:
    """Check that each row of the raw mask is non-increasing as n - m grows."""
    raw = decay_powers(gamma, 40)

    for n in range(40):
        assert np.all(np.diff(raw[n, : n + 1]) >= 0.0)
        assert raw[n, n] == 1.0
    assert np.all(np.triu(raw, 1) == 0.0)
    assert np.array_equal(decay_powers(1.0, 6), np.tril(np.ones((6, 6))))


def test_memoryless_recurrent_step() -> None:
    """Check that gamma = 0 forgets the carried state and returns (q . k) v."""
    q, k, v = _inputs(6, seed=12)
    cfg = NormalizationConfig.disabled()
    _, carried = _recurrent(q[:5], k[:5], v[:5], 0.9, cfg)

    out, state = retention_recurrent_step(q[5], k[5], v[5], carried, 0.0, cfg)

    expected = float(q.data[5] @ k.data[5]) * v.data[5]
    assert np.max(np.abs(out.data - expected)) <= 1e-12
    assert np.array_equal(state.s.data, np.outer(k.data[5], v.data[5]))
    assert state.scale == 1.0


@pytest.mark.parametrize("position", [0, 7, 19])
def test_outputs_before_a_change_are_untouched(position: int) -> None:
    """Check that editing the inputs from one position on leaves every earlier row alone."""
    q, k, v = _inputs(24, seed=13)

    def edited(tensor: Tensor) -> Tensor:
        data = tensor.data.copy()
        data[position:] += 3.0
        return Tensor(data)

    cfg = NormalizationConfig()
    runs = (
        lambda a, b, c: _parallel(a, b, c, 0.9, cfg),
        lambda a, b, c: _recurrent(a, b, c, 0.9, cfg)[0],
        lambda a, b, c: retention_chunkwise(a, b, c, None, 0.9, 5, cfg)[0],
    )
    for run in runs:
        base = run(q, k, v).data
        other = run(edited(q), edited(k), edited(v)).data
        assert np.array_equal(base[:position], other[:position])
        assert not np.allclose(base[position], other[position])
