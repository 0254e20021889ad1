"""Cross-paradigm equivalence suites for retention, MSR layers and whole models."""

import dataclasses
import itertools
import logging
import math
import multiprocessing

from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from numpy.typing import NDArray

from retnet_lab.bench.records import SuiteReport
from retnet_lab.helpers.enums import (
    Architecture,
    EquivalenceSuite,
    GammaVariant,
    Paradigm,
    Precision,
)
from retnet_lab.helpers.vocabulary import BOS_ID, BYTE_COUNT
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.decode import decode_step, DecodeSession
from retnet_lab.model.layers import as_param_tensors
from retnet_lab.model.params import init_params
from retnet_lab.model.retnet import forward
from retnet_lab.msr.layer import (
    AblationFlags,
    gamma_schedule,
    layer_gammas,
    msr_forward,
    msr_heads,
    MSRLayerParams,
    MSRState,
)
from retnet_lab.numerics.tensor import Rng, Tensor
from retnet_lab.retention.decay import decay_mask, NormalizationConfig
from retnet_lab.retention.paradigms import (
    parallel_final_state,
    retention_chunkwise,
    retention_parallel,
    retention_recurrent_step,
    RetentionState,
)

_logger = logging.getLogger(__name__)

TOLERANCES: Dict[Tuple[EquivalenceSuite, Precision], float] = {
    (EquivalenceSuite.RETENTION, Precision.FP64): 1e-10,
    (EquivalenceSuite.RETENTION, Precision.FP32): 1e-5,
    (EquivalenceSuite.MSR, Precision.FP64): 1e-9,
    (EquivalenceSuite.MSR, Precision.FP32): 1e-4,
    (EquivalenceSuite.MODEL, Precision.FP64): 1e-9,
    (EquivalenceSuite.MODEL, Precision.FP32): 1e-4,
}

DEFAULT_RETENTION_LENGTHS = (1, 2, 5, 16, 33, 64, 128)
DEFAULT_RETENTION_WIDTHS = ((16, 16), (16, 64), (64, 16), (64, 64))
DEFAULT_MSR_LENGTHS = (1, 6, 19)
DEFAULT_MSR_SHAPES = ((16, 2), (32, 4))
DEFAULT_MODEL_LENGTH = 96
DEFAULT_MODEL_CHUNKS = (7, 32)
INPUT_SCALE = 0.1


class EquivalenceCase(NamedTuple):
    """One configuration to run through every paradigm.

    Retention cases use ``d_k`` and ``d_v``, the other suites ``d_model`` and ``n_heads``.
    """

    suite: EquivalenceSuite
    length: int
    chunk_sizes: Tuple[int, ...]
    precision: Precision = Precision.FP64
    seed: int = 0
    d_k: int = 16
    d_v: int = 16
    gamma: float = 0.96875
    normalization: NormalizationConfig = NormalizationConfig()
    d_model: int = 16
    n_heads: int = 2
    flags: AblationFlags = AblationFlags()
    architecture: Architecture = Architecture.RETNET

    @property
    def label(self) -> str:
        """A readable identification of the case."""
        norm = self.normalization
        stabilizers = (
            f"scale_qk={norm.scale_qk},normalize_d={norm.normalize_d},clamp={norm.clamp_row_sum}"
        )
        chunks = ",".join(str(size) for size in self.chunk_sizes)
        if self.suite is EquivalenceSuite.RETENTION:
            return (
                f"retention len={self.length} d_k={self.d_k} d_v={self.d_v} gamma={self.gamma!r} "
                f"B={chunks} {stabilizers} {self.precision.value} seed={self.seed}"
            )
        if self.suite is EquivalenceSuite.MSR:
            flags = ",".join(
                name for name, value in dataclasses.asdict(self.flags).items() if value
            )
            return (
                f"msr len={self.length} d={self.d_model} h={self.n_heads} flags={flags or 'none'} "
                f"B={chunks} {stabilizers} {self.precision.value} seed={self.seed}"
            )
        return (
            f"model {self.architecture.value} len={self.length} d={self.d_model} h={self.n_heads} "
            f"B={chunks} {self.precision.value} seed={self.seed}"
        )


def _normalization_grid() -> List[NormalizationConfig]:
    return [
        NormalizationConfig(scale_qk=scale_qk, normalize_d=normalize_d, clamp_row_sum=clamp)
        for scale_qk, normalize_d, clamp in itertools.product((True, False), repeat=3)
    ]


def _gamma_pool() -> List[float]:
    pool = [float(gamma) for gamma in gamma_schedule(8, GammaVariant.DEFAULT)]
    pool += [float(gamma) for gamma in gamma_schedule(8, GammaVariant.PAPER_EXPERIMENTS)]
    return [*pool, 1.0]


def default_cases(
    suite: EquivalenceSuite,
    precision: Precision = Precision.FP64,
    lengths: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> List[EquivalenceCase]:
    """The seeded default sweep of a suite.

    Retention cases cover every width pair and stabilizer setting per length and walk through both
    gamma schedules. MSR cases cover every ablation switch. Model cases compare chunkwise forwards
    and a full decode trace against the parallel forward for both architectures.

    Args:
        suite: Which suite.
        precision: The element precision.
        lengths: Overrides the sequence lengths.
        seed: The base seed, each case derives its own.

    Returns:
        The cases.
    """
    suite = EquivalenceSuite(suite)
    cases: List[EquivalenceCase] = []
    if suite is EquivalenceSuite.RETENTION:
        gammas = _gamma_pool()
        grid = itertools.product(
            lengths or DEFAULT_RETENTION_LENGTHS, DEFAULT_RETENTION_WIDTHS, _normalization_grid()
        )
        for index, (length, (d_k, d_v), normalization) in enumerate(grid):
            cases.append(
                EquivalenceCase(
                    suite=suite,
                    length=length,
                    chunk_sizes=tuple(sorted({1, 4, 16, length})),
                    precision=precision,
                    seed=seed + index,
                    d_k=d_k,
                    d_v=d_v,
                    gamma=gammas[index % len(gammas)],
                    normalization=normalization,
                )
            )
    elif suite is EquivalenceSuite.MSR:
        variants = [
            AblationFlags(),
            AblationFlags(no_gate=True),
            AblationFlags(no_groupnorm=True),
            AblationFlags(no_decay=True),
            AblationFlags(single_scale=True),
            AblationFlags(head_dim_override=4),
        ]
        normalizations = _normalization_grid()
        grid = itertools.product(lengths or DEFAULT_MSR_LENGTHS, DEFAULT_MSR_SHAPES, variants)
        for index, (length, (d_model, n_heads), flags) in enumerate(grid):
            cases.append(
                EquivalenceCase(
                    suite=suite,
                    length=length,
                    chunk_sizes=tuple(sorted({1, 4, length})),
                    precision=precision,
                    seed=seed + index,
                    normalization=normalizations[index % len(normalizations)],
                    d_model=d_model,
                    n_heads=n_heads,
                    flags=flags,
                )
            )
    else:
        for index, length in enumerate(lengths or (DEFAULT_MODEL_LENGTH,)):
            for architecture in Architecture:
                cases.append(
                    EquivalenceCase(
                        suite=suite,
                        length=length,
                        chunk_sizes=DEFAULT_MODEL_CHUNKS,
                        precision=precision,
                        seed=seed + index,
                        d_model=64,
                        n_heads=2,
                        architecture=architecture,
                    )
                )
    return cases


def _max_abs(a: Tensor, b: Tensor) -> float:
    diff = np.abs(a.data.astype(np.float64) - b.data.astype(np.float64))
    return float(diff.max()) if diff.size else 0.0


def _retention_deviation(case: EquivalenceCase) -> float:
    rng = Rng(case.seed)
    q, k = (
        Tensor(rng.normal((case.length, case.d_k), INPUT_SCALE, case.precision)) for _ in range(2)
    )
    v = Tensor(rng.normal((case.length, case.d_v), INPUT_SCALE, case.precision))
    cfg = case.normalization
    reference = retention_parallel(q, k, v, decay_mask(case.gamma, case.length, cfg), cfg)
    closed_form = parallel_final_state(k, v, case.gamma)

    state = RetentionState.zeros(case.d_k, case.d_v, case.precision)
    rows = []
    for t in range(case.length):
        out, state = retention_recurrent_step(q[t], k[t], v[t], state, case.gamma, cfg)
        rows.append(out.data)
    deviations = [
        _max_abs(reference, Tensor(np.stack(rows))),
        _max_abs(closed_form.s, state.s),
        _max_abs(closed_form.k_sum, state.k_sum),
    ]
    for chunk_size in case.chunk_sizes:
        out, chunk_state = retention_chunkwise(q, k, v, None, case.gamma, chunk_size, cfg)
        deviations.extend((_max_abs(reference, out), _max_abs(state.s, chunk_state.s)))
    return max(deviations)


def _msr_params(case: EquivalenceCase, rng: Rng) -> MSRLayerParams:
    d = case.d_model
    h = msr_heads(d, case.n_heads, case.flags)

    def matrix(rows: int, cols: int) -> Tensor:
        return Tensor(rng.normal((rows, cols), 1.0 / math.sqrt(rows), case.precision))

    norm = not case.flags.no_groupnorm
    return MSRLayerParams(
        w_q=matrix(d, d),
        w_k=matrix(d, d),
        w_v=matrix(d, 2 * d),
        w_g=None if case.flags.no_gate else matrix(d, 2 * d),
        w_o=matrix(2 * d, d),
        gammas=layer_gammas(h, case.flags),
        norm_weight=Tensor(1.0 + rng.normal((2 * d,), 0.1, case.precision)) if norm else None,
        norm_bias=Tensor(rng.normal((2 * d,), 0.1, case.precision)) if norm else None,
    )


def _msr_deviation(case: EquivalenceCase) -> float:
    rng = Rng(case.seed)
    params = _msr_params(case, rng)
    x = Tensor(rng.normal((case.length, case.d_model), 1.0, case.precision))
    cfg = case.normalization
    reference, _ = msr_forward(x, params, case.flags, Paradigm.PARALLEL, cfg=cfg)
    state = MSRState.zeros(params.n_heads, case.d_model, case.precision)
    recurrent, _ = msr_forward(x, params, case.flags, Paradigm.RECURRENT, state=state, cfg=cfg)
    deviations = [_max_abs(reference, recurrent)]
    for chunk_size in case.chunk_sizes:
        chunked, _ = msr_forward(x, params, case.flags, Paradigm.CHUNKWISE, chunk_size, cfg=cfg)
        deviations.append(_max_abs(reference, chunked))
    return max(deviations)


def _model_deviation(case: EquivalenceCase) -> float:
    config = ModelConfig(
        architecture=case.architecture,
        n_layers=2,
        d_model=case.d_model,
        n_heads=case.n_heads,
        precision=case.precision,
        seed=case.seed,
    )
    params = as_param_tensors(init_params(config))
    rng = Rng(case.seed).spawn(1)
    tokens = np.concatenate([[BOS_ID], rng.integers(0, BYTE_COUNT, (case.length - 1,))])
    reference = forward(tokens, config, params, Paradigm.PARALLEL)
    deviations: List[float] = []
    if case.architecture is Architecture.RETNET:
        for chunk_size in case.chunk_sizes:
            chunked_config = dataclasses.replace(config, chunk_size=chunk_size)
            chunked = forward(tokens, chunked_config, params, Paradigm.CHUNKWISE)
            deviations.append(_max_abs(reference, chunked))
    session = DecodeSession.start(config)
    steps: List[NDArray[np.floating]] = []
    for token in tokens:
        logits, session = decode_step(session, int(token), params)
        steps.append(logits.data)
    deviations.append(_max_abs(reference, Tensor(np.stack(steps))))
    return max(deviations)


def run_case(case: EquivalenceCase) -> float:
    """The largest elementwise deviation between paradigms for one case, inf for non-finite.

    Args:
        case: The case.

    Returns:
        The deviation.
    """
    runners = {
        EquivalenceSuite.RETENTION: _retention_deviation,
        EquivalenceSuite.MSR: _msr_deviation,
        EquivalenceSuite.MODEL: _model_deviation,
    }
    deviation = runners[case.suite](case)
    return deviation if math.isfinite(deviation) else math.inf


def _run_cases(cases: Sequence[EquivalenceCase]) -> List[float]:
    return [run_case(case) for case in cases]


def run_cases(cases: Sequence[EquivalenceCase], workers: int = 1) -> List[float]:
    """Run cases in order, optionally spread over a process pool.

    Args:
        cases: The cases.
        workers: The number of processes, one runs everything in this process.

    Returns:
        One deviation per case, in case order.
    """
    if workers <= 1 or len(cases) < 2:  # noqa: PLR2004
        return _run_cases(cases)
    process_count = min(workers, len(cases))
    with multiprocessing.Pool(process_count) as process_pool:
        results = []
        previous_index = 0
        for index in range(process_count):
            end_index = round((index + 1) * len(cases) / process_count)
            results.append(
                process_pool.apply_async(_run_cases, args=(cases[previous_index:end_index],))
            )
            previous_index = end_index

        deviations: List[float] = []
        for index, result in enumerate(results):
            try:
                deviations.extend(result.get())
            except Exception as e:  # noqa: PERF203
                raise ChildProcessError(f"Error on process {index}, view process stack.") from e
    return deviations


def run_suite(
    suite: EquivalenceSuite,
    cases: Iterable[EquivalenceCase],
    workers: int = 1,
) -> SuiteReport:
    """Run a suite and report its worst case.

    Args:
        suite: The suite the cases belong to.
        cases: The cases, all of one precision.
        workers: The number of processes.

    Returns:
        The report, naming the worst case when it fails.
    """
    suite = EquivalenceSuite(suite)
    cases = list(cases)
    if not cases:
        raise ValueError(f"The {suite.value} suite has no cases.")
    precisions = {case.precision for case in cases}
    if len(precisions) != 1:
        raise ValueError("A suite runs at a single precision.")
    tolerance = TOLERANCES[(suite, precisions.pop())]
    deviations = run_cases(cases, workers)
    worst = int(np.argmax(deviations))
    report = SuiteReport(
        suite=suite.value,
        cases=len(cases),
        max_deviation=deviations[worst],
        tolerance=tolerance,
        violating_case=cases[worst].label if deviations[worst] > tolerance else "",
    )
    _logger.info(
        "%s suite: %d cases, max deviation %.3g (tolerance %.1g)",
        suite.value,
        report.cases,
        report.max_deviation,
        tolerance,
    )
    return report


def cmd_equivalence(
    suites: Sequence[EquivalenceSuite] = tuple(EquivalenceSuite),
    precision: Precision = Precision.FP64,
    lengths: Optional[Sequence[int]] = None,
    seed: int = 0,
    workers: int = 1,
) -> List[SuiteReport]:
    """Run the default sweep of every requested suite.

    Args:
        suites: The suites to run.
        precision: The element precision.
        lengths: Overrides the default sequence lengths of every suite.
        seed: The base seed.
        workers: The number of processes per suite.

    Returns:
        One report per suite.
    """
    return [
        run_suite(suite, default_cases(suite, precision, lengths, seed), workers)
        for suite in suites
    ]
