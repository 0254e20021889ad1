"""The ``retnet-lab`` command line: equivalence, gradcheck, train, eval, infer-bench, ablate."""

import argparse
import dataclasses
import logging
import sys

from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from numpy.typing import NDArray

from retnet_lab.bench.ablation import cmd_ablate
from retnet_lab.bench.equivalence import cmd_equivalence
from retnet_lab.bench.inference import cmd_infer_bench, latency_trend
from retnet_lab.bench.records import SuiteReport
from retnet_lab.config_file import load_config, RunConfig
from retnet_lab.files_and_formats.csv_records import (
    ABLATION,
    BENCH_RECORDS,
    EVAL_PERPLEXITY,
    SUITE_REPORT,
    TRAIN_METRICS,
)
from retnet_lab.helpers.enums import (
    AblationRow,
    Architecture,
    EquivalenceSuite,
    Paradigm,
    Precision,
    SyntheticKind,
)
from retnet_lab.io_factory_methods import load_checkpoint, save_checkpoint, write_records
from retnet_lab.model.checkpoint import Checkpoint
from retnet_lab.model.retnet import forward
from retnet_lab.numerics.tensor import Rng
from retnet_lab.train.data import Batch, Corpus, SyntheticTask, task_accuracy
from retnet_lab.train.evaluate import eval_perplexity, validation_loss
from retnet_lab.train.gradcheck import gradcheck
from retnet_lab.train.optim import AdamWState
from retnet_lab.train.trainer import train

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _int_list(text: str) -> List[int]:
    try:
        values = [int(item) for item in text.replace(" ", ",").split(",") if item]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma separated integer list.") from e
    if not values:
        raise argparse.ArgumentTypeError("The list is empty.")
    return values


def _choice_list(choices: Sequence[str]) -> Callable[[str], List[str]]:
    def parse(text: str) -> List[str]:
        values = [item for item in text.split(",") if item]
        unknown = [value for value in values if value not in choices]
        if unknown or not values:
            raise argparse.ArgumentTypeError(f"Choose from {', '.join(choices)}, got {text!r}.")
        return values

    return parse


def build_parser() -> argparse.ArgumentParser:
    """The argument parser with every subcommand."""
    parser = argparse.ArgumentParser(
        prog="retnet-lab",
        description="Retention networks at desk scale: equivalence, training and inference cost.",
    )
    parser.add_argument("--config", type=Path, help="A TOML run config.")
    parser.add_argument("--seed", type=int, help="Overrides the model and training seeds.")
    parser.add_argument("--precision", choices=Precision.list_values(), help="Model precision.")
    parser.add_argument("--out", type=Path, default=Path("results"), help="Output directory.")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
    )
    commands = parser.add_subparsers(dest="command", required=True)

    equivalence = commands.add_parser("equivalence", help="Cross-paradigm equivalence suites.")
    equivalence.add_argument(
        "--suites",
        type=_choice_list(EquivalenceSuite.list_values()),
        default=EquivalenceSuite.list_values(),
    )
    equivalence.add_argument("--lengths", type=_int_list, help="Overrides the swept lengths.")
    equivalence.add_argument("--workers", type=int, help="Processes per suite.")

    check = commands.add_parser("gradcheck", help="Reverse mode against finite differences.")
    check.add_argument(
        "--architectures",
        type=_choice_list(Architecture.list_values()),
        default=Architecture.list_values(),
    )
    check.add_argument(
        "--paradigms",
        type=_choice_list([Paradigm.PARALLEL.value, Paradigm.CHUNKWISE.value]),
        default=[Paradigm.PARALLEL.value, Paradigm.CHUNKWISE.value],
    )
    check.add_argument("--tolerance", type=float, default=1e-5)
    check.add_argument("--d-model", type=int, default=16)
    check.add_argument("--layers", type=int, default=1)
    check.add_argument("--heads", type=int, default=2)
    check.add_argument("--chunk-size", type=int, default=4)
    check.add_argument("--samples", type=int, default=4, help="Coordinates per parameter.")

    train_command = commands.add_parser("train", help="Train on a corpus or a synthetic task.")
    source = train_command.add_mutually_exclusive_group(required=True)
    source.add_argument("--corpus", type=Path, help="Any file, read as bytes.")
    source.add_argument("--task", choices=SyntheticKind.list_values())
    train_command.add_argument("--task-length", type=int, default=16)
    train_command.add_argument("--resume", type=Path, help="A checkpoint to continue from.")

    evaluate = commands.add_parser("eval", help="Last-K perplexity per context length.")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--corpus", type=Path, required=True)
    evaluate.add_argument("--context-lengths", type=_int_list)
    evaluate.add_argument("--score-last", type=int)
    evaluate.add_argument("--split", choices=["valid", "all"], default="valid")

    bench = commands.add_parser("infer-bench", help="Decode cost per length and batch.")
    bench.add_argument("--architectures", type=_choice_list(Architecture.list_values()))
    bench.add_argument("--lengths", type=_int_list)
    bench.add_argument("--batches", type=_int_list)
    bench.add_argument("--d-model", type=int)
    bench.add_argument("--layers", type=int)
    bench.add_argument("--heads", type=int)
    bench.add_argument("--budget", type=int, help="The state element budget.")
    bench.add_argument("--prefill", action="store_true", help="Also time prompt prefill.")

    ablate = commands.add_parser("ablate", help="Train each ablation variant on one budget.")
    ablate.add_argument("--corpus", type=Path, required=True)
    ablate.add_argument(
        "--rows",
        type=_choice_list(AblationRow.list_values()),
        default=AblationRow.list_values(),
    )
    return parser


def _report_suites(reports: List[SuiteReport], out: Path) -> int:
    write_records(out / "suite_report.csv", SUITE_REPORT, [report.to_row() for report in reports])
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(
            f"{status} {report.suite}: {report.cases} cases, "
            f"max deviation {report.max_deviation:.3g} (tolerance {report.tolerance:.1g})"
        )
        if not report.passed:
            print(f"    violating case: {report.violating_case}")
    return EXIT_OK if all(report.passed for report in reports) else EXIT_FAILED


def _run_equivalence(args: argparse.Namespace, run: RunConfig) -> int:
    precision = Precision(args.precision) if args.precision else Precision.FP64
    reports = cmd_equivalence(
        [EquivalenceSuite(suite) for suite in args.suites],
        precision,
        args.lengths,
        run.model.seed,
        args.workers or run.bench.workers,
    )
    return _report_suites(reports, args.out)


def _run_gradcheck(args: argparse.Namespace, run: RunConfig) -> int:
    reports: List[SuiteReport] = []
    for arch in args.architectures:
        paradigms = args.paradigms
        if arch != Architecture.RETNET.value:
            paradigms = [Paradigm.PARALLEL.value]
        for paradigm in paradigms:
            config = dataclasses.replace(
                run.model,
                architecture=Architecture(arch),
                n_layers=args.layers,
                d_model=args.d_model,
                n_heads=args.heads,
                ffn_dim=None,
                chunk_size=args.chunk_size,
                precision=Precision.FP64,
                paradigm=Paradigm(paradigm),
            )
            report = gradcheck(config, args.tolerance, samples_per_param=args.samples)
            print(f"{arch}/{paradigm}: max relative error {report.max_rel_error:.3g}")
            reports.append(
                SuiteReport(
                    suite=f"gradcheck/{arch}/{paradigm}",
                    cases=report.coordinates_checked,
                    max_deviation=report.max_rel_error,
                    tolerance=report.tolerance,
                    violating_case="" if report.passed else report.worst_param,
                )
            )
    return _report_suites(reports, args.out)


def _train_source(
    args: argparse.Namespace, run: RunConfig
) -> Tuple[Callable[[Rng], Batch], Optional[Corpus], Optional[SyntheticTask]]:
    train_cfg = run.train
    if args.corpus is not None:
        corpus = Corpus.from_file(args.corpus)

        def sample_corpus(rng: Rng) -> Batch:
            return corpus.sample(train_cfg.batch_size, train_cfg.seq_len, rng)

        return sample_corpus, corpus, None
    task = SyntheticTask(
        kind=SyntheticKind(args.task), length=args.task_length, seed=train_cfg.seed
    )

    def sample_task(rng: Rng) -> Batch:
        return task.sample(train_cfg.batch_size, rng)

    return sample_task, None, task


def _run_train(args: argparse.Namespace, run: RunConfig) -> int:
    model_cfg, train_cfg = run.model, run.train
    sampler, corpus, task = _train_source(args, run)

    params, opt_state = None, None
    if args.resume is not None:
        checkpoint = load_checkpoint(args.resume, model_cfg)
        params = checkpoint.params
        if checkpoint.optimizer is not None:
            opt_state = AdamWState.from_arrays(checkpoint.step, checkpoint.optimizer)

    evaluate: Optional[Callable[[Dict[str, NDArray[Any]]], float]] = None
    if corpus is not None and len(corpus.valid_ids) >= train_cfg.seq_len:
        valid = corpus.valid_ids

        def evaluate(current: Dict[str, NDArray[Any]]) -> float:
            return validation_loss(current, model_cfg, valid, train_cfg.seq_len)

    metrics_path = args.out / "train_metrics.csv"
    result = train(model_cfg, train_cfg, sampler, params, opt_state, metrics_path, evaluate)
    save_checkpoint(
        args.out / "model.rnck",
        Checkpoint(model_cfg, result.params, result.opt_state.step, result.opt_state.to_arrays()),
    )
    if result.history:
        print(f"step {result.history[-1].step}: loss {result.history[-1].loss:.4f}")
    if task is not None:
        probe = task.sample(64, Rng(train_cfg.seed).spawn(2))
        accuracy = task_accuracy(forward(probe.inputs, model_cfg, result.params), probe)
        print(f"{task.kind.value} accuracy {accuracy:.3f}")
    print(f"metrics: {metrics_path} ({TRAIN_METRICS.schema_id})")
    return EXIT_OK


def _run_eval(args: argparse.Namespace, run: RunConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    corpus = Corpus.from_file(args.corpus)
    data = corpus.valid_ids if args.split == "valid" else corpus.ids
    eval_cfg = run.evaluation
    context_lengths = args.context_lengths or list(eval_cfg.context_lengths)
    score_last = args.score_last or eval_cfg.score_last
    rows = eval_perplexity(
        checkpoint.params,
        checkpoint.config,
        data,
        context_lengths,
        score_last,
        eval_cfg.max_windows,
        eval_cfg.paradigm,
    )
    write_records(
        args.out / "eval_perplexity.csv", EVAL_PERPLEXITY, [row._asdict() for row in rows]
    )
    for row in rows:
        print(f"context {row.context_length}: perplexity {row.perplexity:.3f}")
    return EXIT_OK


def _run_infer_bench(args: argparse.Namespace, run: RunConfig) -> int:
    overrides = {
        "architectures": args.architectures,
        "lengths": args.lengths,
        "batches": args.batches,
        "d_model": args.d_model,
        "n_layers": args.layers,
        "n_heads": args.heads,
        "element_budget": args.budget,
    }
    cfg = dataclasses.replace(
        run.bench, **{key: value for key, value in overrides.items() if value is not None}
    )
    if args.prefill:
        cfg = dataclasses.replace(cfg, include_prefill=True)
    records = cmd_infer_bench(cfg, run.model.precision, run.model.seed)
    write_records(args.out / "bench_records.csv", BENCH_RECORDS, [rec.to_row() for rec in records])
    for record in records:
        print(
            f"{record.arch.value} {record.mode} len={record.seq_len} batch={record.batch}: "
            f"{record.latency_median_ms:.3f} ms, {record.state_elements} state elements"
        )
    if len(set(cfg.lengths)) >= 3:  # noqa: PLR2004
        for arch in cfg.architectures:
            fit = latency_trend(records, arch)
            print(
                f"{arch.value} latency slope {fit.slope_ms_per_token:.3g} ms/token "
                f"(p={fit.p_value:.3g})"
            )
    return EXIT_OK


def _run_ablate(args: argparse.Namespace, run: RunConfig) -> int:
    corpus = Corpus.from_file(args.corpus)
    results = cmd_ablate(
        run.model, run.train, corpus, [AblationRow(row) for row in args.rows], args.out
    )
    write_records(args.out / "ablation.csv", ABLATION, [result.to_row() for result in results])
    for result in results:
        print(
            f"{result.variant.value}: {result.params} params, loss {result.final_loss:.4f}, "
            f"perplexity {result.final_perplexity:.3f}"
        )
    return EXIT_OK


_COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "equivalence": _run_equivalence,
    "gradcheck": _run_gradcheck,
    "train": _run_train,
    "eval": _run_eval,
    "infer-bench": _run_infer_bench,
    "ablate": _run_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command.

    Args:
        argv: The arguments, ``sys.argv[1:]`` when None.

    Returns:
        0 when everything passed, 1 when a suite failed, 2 for a bad config.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gradcheck" and args.precision == Precision.FP32.value:
        parser.error("gradcheck runs in fp64, --precision fp32 cannot be combined with it.")
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = load_config(args.config) if args.config is not None else RunConfig()
        precision = Precision(args.precision) if args.precision else None
        run = run.with_overrides(args.seed, precision)
    except (OSError, ValueError) as e:
        print(f"retnet-lab: {e}", file=sys.stderr)
        return EXIT_USAGE
    args.out.mkdir(parents=True, exist_ok=True)
    return _COMMANDS[args.command](args, run)


if __name__ == "__main__":
    sys.exit(main())
