"""The autoregressive inference cost benchmark: exact state sizes and decode latency."""

import logging
import time

from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from numpy.typing import NDArray
from pydantic import model_validator
from pydantic.dataclasses import dataclass
from scipy import stats

from retnet_lab.bench.records import BenchRecord
from retnet_lab.helpers.enums import Architecture, Precision
from retnet_lab.helpers.vocabulary import BOS_ID, BYTE_COUNT
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.decode import decode_step, DecodeSession, prefill
from retnet_lab.model.layers import as_param_tensors
from retnet_lab.model.params import init_params
from retnet_lab.model.transformer import KVCache
from retnet_lab.numerics.tensor import Rng, Tensor

_logger = logging.getLogger(__name__)

FILL_BLOCK = 256


@dataclass(frozen=True, kw_only=True)
class BenchConfig:  # pylint: disable=too-many-instance-attributes
    """The cells of the inference benchmark and the model they run on."""

    architectures: Tuple[Architecture, ...] = (Architecture.RETNET, Architecture.TRANSFORMER)
    lengths: Tuple[int, ...] = (128, 256, 512, 1024)
    batches: Tuple[int, ...] = (1,)
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    warmup: int = 3
    repeats: int = 5
    element_budget: int = 2**27
    include_prefill: bool = False
    workers: int = 1  # processes for the equivalence suites

    @model_validator(mode="after")
    def _check_cells(self) -> "BenchConfig":
        if not self.lengths or min(self.lengths) < 1:
            raise ValueError(f"Bench lengths must be positive, got {self.lengths}.")
        if not self.batches or min(self.batches) < 1:
            raise ValueError(f"Bench batches must be positive, got {self.batches}.")
        if self.warmup < 0 or self.repeats < 1:
            raise ValueError("warmup must be >= 0 and repeats >= 1.")
        return self


class TrendFit(NamedTuple):
    """A least squares line of per-token latency against sequence length."""

    arch: Architecture
    slope_ms_per_token: float
    intercept_ms: float
    p_value: float
    r_value: float


def bench_model_config(
    arch: Architecture,
    cfg: BenchConfig,
    precision: Precision = Precision.FP32,
    seed: int = 0,
) -> ModelConfig:
    """The model one architecture is benchmarked with.

    Args:
        arch: The architecture.
        cfg: The bench config.
        precision: The element precision.
        seed: The initialization seed.

    Returns:
        The model config.
    """
    return ModelConfig(
        architecture=arch,
        n_layers=cfg.n_layers,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        precision=precision,
        seed=seed,
    )


def planned_workspace(config: ModelConfig, positions: int, batch: int) -> int:
    """The floats a session holds after ``positions`` tokens, computed without running it.

    Args:
        config: The model config.
        positions: The number of absorbed tokens.
        batch: The batch size.

    Returns:
        The element count, including unused cache capacity for the transformer.
    """
    if config.architecture is Architecture.RETNET:
        d_k = config.d_model // config.heads
        return config.n_layers * config.heads * (d_k * 2 * d_k + d_k + 1) * batch
    capacity = KVCache.planned_capacity(positions)
    return 2 * config.n_layers * capacity * config.d_model * batch


def check_budget(cfg: BenchConfig, precision: Precision = Precision.FP32) -> None:
    """Refuse a benchmark whose largest cell would exceed the element budget.

    Args:
        cfg: The bench config.
        precision: The element precision.
    """
    steps = cfg.warmup + cfg.repeats
    for arch in cfg.architectures:
        config = bench_model_config(arch, cfg, precision)
        for length in cfg.lengths:
            for batch in cfg.batches:
                required = planned_workspace(config, length + steps, batch)
                if required > cfg.element_budget:
                    raise ValueError(
                        f"The {arch.value} cell length={length} batch={batch} needs {required} "
                        f"state elements, over the budget of {cfg.element_budget}."
                    )


def _fill(
    session: DecodeSession,
    tokens: NDArray[np.int64],
    params: Dict[str, Tensor],
) -> DecodeSession:
    for start in range(0, tokens.shape[-1], FILL_BLOCK):
        _, session = prefill(session, tokens[..., start : start + FILL_BLOCK], params)
    return session


def _decode_latencies(
    session: DecodeSession,
    params: Dict[str, Tensor],
    rng: Rng,
    count: int,
) -> Tuple[List[float], DecodeSession]:
    latencies: List[float] = []
    for _ in range(count):
        token = rng.integers(0, BYTE_COUNT, session.batch_shape)
        start = time.perf_counter()
        _, session = decode_step(session, token, params)
        latencies.append((time.perf_counter() - start) * 1e3)
    return latencies, session


def _prefill_record(
    config: ModelConfig,
    params: Dict[str, Tensor],
    tokens: NDArray[np.int64],
) -> BenchRecord:
    batch, length = tokens.shape
    session = DecodeSession.start(config, batch)
    start = time.perf_counter()
    session = _fill(session, tokens, params)
    elapsed = time.perf_counter() - start
    per_token_ms = elapsed * 1e3 / length
    return BenchRecord(
        arch=config.architecture,
        mode="prefill",
        seq_len=length,
        batch=batch,
        tokens_per_sec=batch * length / elapsed if elapsed > 0 else float("inf"),
        latency_mean_ms=per_token_ms,
        latency_p99_ms=per_token_ms,
        latency_median_ms=per_token_ms,
        state_elements=session.state_elements,
        state_bytes=session.state_elements * config.dtype.itemsize,
        peak_workspace_elements=session.workspace_elements,
    )


def bench_cell(  # noqa: PLR0913
    config: ModelConfig,
    params: Dict[str, Tensor],
    seq_len: int,
    batch: int,
    warmup: int = 3,
    repeats: int = 5,
    seed: int = 0,
) -> BenchRecord:
    """Decode up to ``seq_len`` positions, then time single token steps from there.

    Args:
        config: The model config.
        params: The parameter tensors.
        seq_len: The position the timed steps start from.
        batch: The batch size.
        warmup: Untimed steps before measuring.
        repeats: Timed steps.
        seed: The token stream seed.

    Returns:
        The decode record. State counts are taken at ``seq_len``.
    """
    rng = Rng(seed)
    tokens = rng.integers(0, BYTE_COUNT, (batch, seq_len))
    tokens[:, 0] = BOS_ID
    session = _fill(DecodeSession.start(config, batch), tokens, params)
    state_elements = session.state_elements
    _, session = _decode_latencies(session, params, rng, warmup)
    latencies, session = _decode_latencies(session, params, rng, repeats)
    mean_ms = float(np.mean(latencies))
    return BenchRecord(
        arch=config.architecture,
        mode="decode",
        seq_len=seq_len,
        batch=batch,
        tokens_per_sec=batch * 1e3 / mean_ms if mean_ms > 0 else float("inf"),
        latency_mean_ms=mean_ms,
        latency_p99_ms=float(np.percentile(latencies, 99)),
        latency_median_ms=float(np.median(latencies)),
        state_elements=state_elements,
        state_bytes=state_elements * config.dtype.itemsize,
        peak_workspace_elements=session.workspace_elements,
    )


def latency_trend(records: Sequence[BenchRecord], arch: Architecture) -> TrendFit:
    """Fit median decode latency against sequence length for one architecture.

    Args:
        records: Bench records, only decode rows of ``arch`` are used.
        arch: The architecture.

    Returns:
        The fitted line with the p-value of a zero slope.
    """
    rows = [record for record in records if record.arch is arch and record.mode == "decode"]
    if len({record.seq_len for record in rows}) < 3:  # noqa: PLR2004
        raise ValueError(f"A latency trend needs at least three lengths, {arch.value} has fewer.")
    fit = stats.linregress(
        [record.seq_len for record in rows], [record.latency_median_ms for record in rows]
    )
    return TrendFit(
        arch, float(fit.slope), float(fit.intercept), float(fit.pvalue), float(fit.rvalue)
    )


def cmd_infer_bench(
    cfg: BenchConfig,
    precision: Precision = Precision.FP32,
    seed: int = 0,
) -> List[BenchRecord]:
    """Run every (architecture, length, batch) cell, one at a time.

    Args:
        cfg: The bench config.
        precision: The element precision.
        seed: Seeds both the weights and the token streams.

    Returns:
        One decode record per cell, plus a prefill record per cell when requested.
    """
    check_budget(cfg, precision)
    records: List[BenchRecord] = []
    for arch in cfg.architectures:
        config = bench_model_config(arch, cfg, precision, seed)
        params = as_param_tensors(init_params(config))
        for length in cfg.lengths:
            for batch in cfg.batches:
                record = bench_cell(config, params, length, batch, cfg.warmup, cfg.repeats, seed)
                records.append(record)
                _logger.info(
                    "%s length=%d batch=%d: %.3f ms/token, %d state elements",
                    arch.value,
                    length,
                    batch,
                    record.latency_median_ms,
                    record.state_elements,
                )
                if cfg.include_prefill:
                    tokens = Rng(seed).integers(0, BYTE_COUNT, (batch, length))
                    records.append(_prefill_record(config, params, tokens))
    return records
