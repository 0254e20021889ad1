"""Tests for the RetNet model, the transformer baseline and incremental decoding."""

import dataclasses
import itertools

from typing import Dict

import numpy as np
import pytest

from numpy.typing import NDArray
from pydantic import ValidationError

from retnet_lab.helpers.enums import Architecture, GammaVariant, Paradigm, Precision
from retnet_lab.helpers.vocabulary import BOS_ID, VOCAB_SIZE
from retnet_lab.model import (
    baseline_decode_step,
    baseline_forward,
    block_param_count,
    config_from_json,
    config_to_json,
    decode_step,
    DecodeSession,
    forward,
    generate,
    init_params,
    KVCache,
    model_param_count,
    ModelConfig,
    non_embedding_param_count,
    param_shapes,
    prefill,
)
from retnet_lab.model.params import init_std, INIT_STD
from retnet_lab.msr.layer import AblationFlags
from retnet_lab.numerics.tensor import Rng

ALL_FLAG_COMBINATIONS = [
    AblationFlags(
        no_gate=no_gate,
        no_groupnorm=no_groupnorm,
        no_decay=no_decay,
        single_scale=single_scale,
        head_dim_override=override,
    )
    for no_gate, no_groupnorm, no_decay, single_scale in itertools.product((False, True), repeat=4)
    for override in (None, 4)
]


def _tokens(length: int, seed: int = 0) -> NDArray[np.int64]:
    return np.concatenate([[BOS_ID], Rng(seed).integers(0, 256, (length - 1,))])


def _decode_trace(
    config: ModelConfig, params: Dict[str, NDArray[np.floating]], tokens: NDArray[np.int64]
) -> NDArray[np.floating]:
    session = DecodeSession.start(config)
    rows = []
    for token in tokens:
        logits, session = decode_step(session, int(token), params)
        rows.append(logits.data)
    return np.stack(rows)


@pytest.mark.parametrize("d_model", [16, 64, 96])
def test_block_parameter_parity(d_model: int) -> None:
    """Check 12 d^2 weights per block for both architectures."""
    retnet = ModelConfig(d_model=d_model, n_heads=2, n_layers=3)
    transformer = dataclasses.replace(retnet, architecture=Architecture.TRANSFORMER)

    assert block_param_count(retnet) == 12 * d_model * d_model
    assert block_param_count(transformer) == 12 * d_model * d_model
    assert non_embedding_param_count(retnet, include_norms=False) == non_embedding_param_count(
        transformer, include_norms=False
    )
    norm_gap = non_embedding_param_count(retnet) - non_embedding_param_count(transformer)
    assert norm_gap == 3 * 4 * d_model


def test_param_shapes_follow_the_flags() -> None:
    """Check that ablated ingredients allocate no weights and an untied head adds one."""
    full = param_shapes(ModelConfig(n_layers=1, d_model=16))
    ablated = param_shapes(
        ModelConfig(n_layers=1, d_model=16, flags=AblationFlags(no_gate=True, no_groupnorm=True))
    )
    untied = ModelConfig(n_layers=1, d_model=16, tie_embeddings=False)

    assert "blocks.0.msr.w_g" in full
    assert "blocks.0.msr.w_g" not in ablated
    assert "blocks.0.msr.norm.weight" not in ablated
    assert param_shapes(untied)["head.weight"] == (VOCAB_SIZE, 16)
    assert model_param_count(untied) == model_param_count(ModelConfig(n_layers=1, d_model=16)) + (
        VOCAB_SIZE * 16
    )


def test_init_is_deterministic(tiny_retnet: ModelConfig) -> None:
    """Check that the same seed gives identical parameters and another seed does not."""
    first = init_params(tiny_retnet)
    second = init_params(tiny_retnet)
    other = init_params(dataclasses.replace(tiny_retnet, seed=4))

    assert all(np.array_equal(first[name], second[name]) for name in first)
    assert not np.array_equal(first["embed.weight"], other["embed.weight"])
    assert np.all(first["blocks.0.ln_1.weight"] == 1.0)
    assert np.all(first["blocks.0.ln_1.bias"] == 0.0)
    assert first["embed.weight"].dtype == np.float64


def test_init_scales_output_projections() -> None:
    """Check the depth scaled standard deviation of output side weights."""
    config = ModelConfig(n_layers=8)

    assert init_std("blocks.3.msr.w_o", config) == pytest.approx(INIT_STD / 4.0)
    assert init_std("blocks.3.ffn.w_2", config) == pytest.approx(INIT_STD / 4.0)
    assert init_std("blocks.3.msr.w_q", config) == INIT_STD


def test_config_validation() -> None:
    """Check that inconsistent shapes are rejected when the config is built."""
    with pytest.raises(ValidationError, match="do not divide"):
        ModelConfig(d_model=30, n_heads=4)
    with pytest.raises(ValidationError, match="chunk_size"):
        ModelConfig(chunk_size=0)
    with pytest.raises(ValidationError, match="dropout"):
        ModelConfig(dropout=1.0)
    assert ModelConfig(d_model=32, n_heads=2, flags=AblationFlags(head_dim_override=8)).heads == 4
    assert ModelConfig(architecture=Architecture.TRANSFORMER, d_model=32).ffn_width == 128
    assert ModelConfig(d_model=32).ffn_width == 64


def test_config_json_keeps_every_field() -> None:
    """Check that a non-default config survives its JSON form."""
    config = ModelConfig(
        n_layers=3,
        d_model=32,
        n_heads=4,
        gamma_variant=GammaVariant.PAPER_EXPERIMENTS,
        flags=AblationFlags(single_scale=True),
        precision=Precision.FP64,
        chunk_size=9,
    )

    assert config_from_json(config_to_json(config)) == config


def test_forward_is_causal(tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]) -> None:
    """Check that logits at a position do not depend on later tokens."""
    tokens = _tokens(20)
    changed = tokens.copy()
    changed[12:] = (changed[12:] + 7) % 256
    base = forward(tokens, tiny_retnet, tiny_params).data
    other = forward(changed, tiny_retnet, tiny_params).data

    assert base.shape == (20, VOCAB_SIZE)
    assert np.max(np.abs(base[:12] - other[:12])) <= 1e-12
    assert np.max(np.abs(base[12:] - other[12:])) > 1e-6


def test_forward_paradigms_agree_in_fp32() -> None:
    """Check parallel against chunkwise logits on a 31 token input."""
    config = ModelConfig(n_layers=2, d_model=32, n_heads=2, chunk_size=7)
    params = init_params(config)
    tokens = _tokens(31, seed=1)
    parallel = forward(tokens, config, params, Paradigm.PARALLEL)
    chunked = forward(tokens, config, params, Paradigm.CHUNKWISE)

    assert parallel.dtype == np.float32
    assert np.max(np.abs(parallel.data - chunked.data)) <= 1e-4


def test_forward_paradigms_agree_in_fp64(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]
) -> None:
    """Check all three paradigms at fp64 on a batch."""
    tokens = np.stack([_tokens(23, seed=2), _tokens(23, seed=3)])
    parallel = forward(tokens, tiny_retnet, tiny_params, Paradigm.PARALLEL).data
    for paradigm in (Paradigm.CHUNKWISE, Paradigm.RECURRENT):
        other = forward(tokens, tiny_retnet, tiny_params, paradigm).data
        assert np.max(np.abs(parallel - other)) <= 1e-9


def test_forward_rejects_bad_tokens(tiny_retnet: ModelConfig, tiny_params: Dict) -> None:
    """Check the vocabulary and shape checks."""
    with pytest.raises(ValueError, match="outside the vocabulary"):
        forward([BOS_ID, VOCAB_SIZE], tiny_retnet, tiny_params)
    with pytest.raises(ValueError, match="non-empty"):
        forward(np.zeros((0,), dtype=np.int64), tiny_retnet, tiny_params)
    with pytest.raises(ValueError, match="non-empty"):
        forward(np.zeros((2, 2, 2), dtype=np.int64), tiny_retnet, tiny_params)


def test_recurrent_decode_matches_parallel(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]
) -> None:
    """Check a 64 step decode trace against the parallel forward pass."""
    tokens = _tokens(64, seed=4)
    reference = forward(tokens, tiny_retnet, tiny_params).data

    assert np.max(np.abs(_decode_trace(tiny_retnet, tiny_params, tokens) - reference)) <= 1e-9


def test_baseline_decode_matches_forward(tiny_transformer: ModelConfig) -> None:
    """Check the KV cached decode of the transformer against its full forward pass."""
    params = init_params(tiny_transformer)
    tokens = _tokens(40, seed=5)
    reference = baseline_forward(tokens, tiny_transformer, params).data

    session = DecodeSession.start(tiny_transformer)
    rows = []
    for token in tokens:
        logits, session = baseline_decode_step(session, int(token), params)
        rows.append(logits.data)
    assert np.max(np.abs(np.stack(rows) - reference)) <= 1e-9
    assert np.max(np.abs(forward(tokens, tiny_transformer, params).data - reference)) == 0.0


def test_baseline_entry_points_reject_retnet(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]
) -> None:
    """Check that the baseline functions refuse a RetNet config."""
    with pytest.raises(ValueError, match="transformer"):
        baseline_forward([BOS_ID], tiny_retnet, tiny_params)
    with pytest.raises(ValueError, match="transformer"):
        baseline_decode_step(DecodeSession.start(tiny_retnet), BOS_ID, tiny_params)


def test_state_is_constant_and_cache_grows(
    tiny_retnet: ModelConfig, tiny_transformer: ModelConfig
) -> None:
    """Check the exact memory of both sessions as positions accumulate."""
    retnet_params = init_params(tiny_retnet)
    transformer_params = init_params(tiny_transformer)
    retnet = DecodeSession.start(tiny_retnet)
    transformer = DecodeSession.start(tiny_transformer)
    d_k = 16 // 2
    per_layer = 2 * (d_k * 2 * d_k + d_k + 1)

    for position in range(1, 30):
        _, retnet = decode_step(retnet, BOS_ID, retnet_params)
        _, transformer = decode_step(transformer, BOS_ID, transformer_params)
        assert retnet.state_elements == 2 * per_layer
        assert transformer.state_elements == 2 * 2 * position * 16
        assert transformer.workspace_elements >= transformer.state_elements
    assert retnet.position == transformer.position == 29


def test_sessions_are_single_use(tiny_retnet: ModelConfig, tiny_params: Dict) -> None:
    """Check that a session cannot be advanced twice."""
    session = DecodeSession.start(tiny_retnet)
    _, advanced = decode_step(session, BOS_ID, tiny_params)

    with pytest.raises(ValueError, match="already advanced"):
        decode_step(session, BOS_ID, tiny_params)
    _, advanced = decode_step(advanced, 65, tiny_params)
    assert advanced.position == 2
    assert "position=2" in repr(advanced)


def test_prefill_then_decode(tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]) -> None:
    """Check that prefilling in pieces and decoding the rest reproduces the forward pass."""
    tokens = _tokens(30, seed=6)
    reference = forward(tokens, tiny_retnet, tiny_params).data

    first, session = prefill(DecodeSession.start(tiny_retnet), tokens[:10], tiny_params)
    second, session = prefill(session, tokens[10:21], tiny_params)
    rows = [first.data, second.data]
    for token in tokens[21:]:
        logits, session = decode_step(session, int(token), tiny_params)
        rows.append(logits.data[None, :])
    assert np.max(np.abs(np.concatenate(rows) - reference)) <= 1e-9
    assert session.position == 30


def test_batched_decode_matches_single(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]
) -> None:
    """Check that a batched session advances every sequence independently."""
    batch = np.stack([_tokens(12, seed=7), _tokens(12, seed=8)])
    session = DecodeSession.start(tiny_retnet, batch_size=2)
    rows = []
    for column in batch.T:
        logits, session = decode_step(session, column, tiny_params)
        rows.append(logits.data)
    traced = np.stack(rows, axis=1)

    assert traced.shape == (2, 12, VOCAB_SIZE)
    for index in range(2):
        single = _decode_trace(tiny_retnet, tiny_params, batch[index])
        assert np.max(np.abs(traced[index] - single)) <= 1e-12


def test_greedy_generation_matches_argmax(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]
) -> None:
    """Check that greedy decoding reproduces the argmax of the parallel forward pass."""
    prompt = [BOS_ID, 72, 105]
    produced, session = generate(DecodeSession.start(tiny_retnet), prompt, 48, tiny_params)
    full = np.array([*prompt, *produced[:-1]])
    argmax = np.argmax(forward(full, tiny_retnet, tiny_params).data, axis=-1)

    assert produced == argmax[len(prompt) - 1 :].tolist()
    assert session.position == len(full)


@pytest.mark.slow
def test_long_greedy_generation_matches_argmax() -> None:
    """Check a 256 step greedy decode of a two layer d=64 model."""
    config = ModelConfig(n_layers=2, d_model=64, n_heads=4, precision=Precision.FP64)
    params = init_params(config)
    produced, _ = generate(DecodeSession.start(config), [BOS_ID], 256, params)
    full = np.array([BOS_ID, *produced[:-1]])

    assert produced == np.argmax(forward(full, config, params).data, axis=-1).tolist()


def test_sampled_generation_needs_rng(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray]
) -> None:
    """Check temperature sampling: an Rng is required and seeded draws repeat."""
    with pytest.raises(ValueError, match="needs an Rng"):
        generate(DecodeSession.start(tiny_retnet), [BOS_ID], 3, tiny_params, temperature=1.0)
    first, _ = generate(
        DecodeSession.start(tiny_retnet), [BOS_ID], 8, tiny_params, 1.0, Rng(9)
    )
    second, _ = generate(
        DecodeSession.start(tiny_retnet), [BOS_ID], 8, tiny_params, 1.0, Rng(9)
    )
    assert first == second
    assert all(0 <= token < VOCAB_SIZE for token in first)


def test_kv_cache_doubles() -> None:
    """Check the capacity plan and that only filled positions count."""
    assert KVCache.planned_capacity(1) == 16
    assert KVCache.planned_capacity(17) == 32
    assert KVCache.planned_capacity(100, capacity=3) == 192

    cache = KVCache(1, 4, (), np.dtype(np.float64), capacity=2)
    cache.append(0, np.ones((3, 4)), np.ones((3, 4)) * 2.0)
    keys, values = cache.get(0)
    assert keys.shape == (3, 4)
    assert np.all(values == 2.0)
    assert cache.element_count == 2 * 3 * 4
    assert cache.capacity_elements == 2 * 4 * 4


def test_zero_layer_model_maps_each_token_alone() -> None:
    """Check that without blocks the logits of a token do not depend on its position."""
    config = ModelConfig(n_layers=0, d_model=16, n_heads=2, precision=Precision.FP64)
    params = init_params(config)
    tokens = np.array([BOS_ID, 5, 9, 5, 5, 9])

    logits = forward(tokens, config, params).data
    alone = forward([5], config, params).data

    assert not any(name.startswith("blocks.") for name in params)
    assert np.max(np.abs(logits[3] - logits[1])) <= 1e-12
    assert np.max(np.abs(logits[4] - logits[1])) <= 1e-12
    assert np.max(np.abs(logits[5] - logits[2])) <= 1e-12
    assert np.max(np.abs(alone[0] - logits[1])) <= 1e-12


def test_init_matches_the_target_scale() -> None:
    """Check the sample deviation of every matrix with at least 4096 entries."""
    config = ModelConfig(n_layers=2, d_model=64, n_heads=2, precision=Precision.FP64)
    params = init_params(config)

    checked = 0
    for name, value in params.items():
        if value.ndim == 2 and value.size >= 4096:
            assert abs(float(np.std(value)) / init_std(name, config) - 1.0) <= 0.2, name
            checked += 1
    assert checked == 1 + 2 * 7


@pytest.mark.parametrize("flags", ALL_FLAG_COMBINATIONS)
def test_long_fp32_logits_are_finite(flags: AblationFlags) -> None:
    """Check 512 token logits at init in single precision."""
    config = ModelConfig(n_layers=2, d_model=16, n_heads=2, flags=flags)
    logits = forward(_tokens(512, seed=10), config, init_params(config))

    assert logits.dtype == np.float32
    assert np.all(np.isfinite(logits.data))


def test_retnet_state_is_flat_over_long_decodes() -> None:
    """Check the state size after 8, 64 and 512 decode steps."""
    config = ModelConfig(n_layers=1, d_model=16, n_heads=2)
    params = init_params(config)
    tokens = _tokens(512, seed=11)
    session = DecodeSession.start(config)

    counts: Dict[int, int] = {}
    for step, token in enumerate(tokens, start=1):
        _, session = decode_step(session, int(token), params)
        if step in (8, 64, 512):
            counts[step] = session.state_elements
    assert counts == {step: 2 * (8 * 16 + 8 + 1) for step in (8, 64, 512)}
