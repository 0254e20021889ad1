"""Ablation sweeps: each variant removes one ingredient and trains on the same budget."""

import dataclasses
import logging

from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Union

from retnet_lab.helpers.enums import AblationRow, Architecture
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.params import model_param_count
from retnet_lab.msr.layer import AblationFlags
from retnet_lab.train.config import TrainConfig
from retnet_lab.train.data import Corpus
from retnet_lab.train.evaluate import validation_loss
from retnet_lab.train.loss import perplexity
from retnet_lab.train.trainer import train

_logger = logging.getLogger(__name__)


class AblationResult(NamedTuple):
    """One row of the ablation table."""

    variant: AblationRow
    params: int
    final_loss: float
    final_perplexity: float

    def to_row(self) -> Dict[str, Any]:
        """The result keyed by CSV column."""
        return {**self._asdict(), "variant": self.variant.value}


def reduced_head_dim(d_model: int, heads: int) -> int:
    """The largest even width at most half the current head width that still tiles d_model.

    Args:
        d_model: The layer width.
        heads: The current head count.

    Returns:
        The reduced query/key head width.
    """
    head_dim = d_model // heads
    for width in range(head_dim // 2 - (head_dim // 2) % 2, 1, -2):
        if d_model % width == 0:
            return width
    raise ValueError(
        f"The reduced head width row needs a head width of at least 4, got {head_dim}."
    )


def ablation_config(row: AblationRow, base: ModelConfig) -> ModelConfig:
    """The model a row trains, derived from the full RetNet config.

    Args:
        row: The ablation row.
        base: The full model config, its own flags are ignored.

    Returns:
        The variant config.
    """
    row = AblationRow(row)
    full = dataclasses.replace(base, architecture=Architecture.RETNET, flags=AblationFlags())
    if row is AblationRow.TRANSFORMER:
        return dataclasses.replace(full, architecture=Architecture.TRANSFORMER)
    if row is AblationRow.REDUCED_HEAD_DIM:
        flags = AblationFlags(head_dim_override=reduced_head_dim(full.d_model, full.heads))
    else:
        flags = {
            AblationRow.FULL: AblationFlags(),
            AblationRow.NO_SWISH_GATE: AblationFlags(no_gate=True),
            AblationRow.NO_GROUPNORM: AblationFlags(no_groupnorm=True),
            AblationRow.NO_DECAY: AblationFlags(no_decay=True),
            AblationRow.SINGLE_SCALE: AblationFlags(single_scale=True),
        }[row]
    return dataclasses.replace(full, flags=flags)


def cmd_ablate(  # noqa: PLR0913
    base: ModelConfig,
    train_cfg: TrainConfig,
    corpus: Corpus,
    rows: Sequence[AblationRow] = tuple(AblationRow),
    metrics_dir: Optional[Union[str, Path]] = None,
) -> List[AblationResult]:
    """Train every requested variant from the same seed on the same batches.

    Args:
        base: The full model config.
        train_cfg: The shared training budget.
        corpus: The corpus, scored on its validation region when it can fill a window.
        rows: The variants to run.
        metrics_dir: When given, each variant's metrics go to ``<variant>_metrics.csv`` in it.

    Returns:
        One result per row, in the order given.
    """
    results: List[AblationResult] = []
    for row in rows:
        row = AblationRow(row)
        config = ablation_config(row, base)
        metrics_path = None
        if metrics_dir is not None:
            metrics_path = Path(metrics_dir) / f"{row.value}_metrics.csv"
        outcome = train(
            config,
            train_cfg,
            lambda rng: corpus.sample(train_cfg.batch_size, train_cfg.seq_len, rng),
            metrics_path=metrics_path,
        )
        if len(corpus.valid_ids) >= train_cfg.seq_len:
            final_loss = validation_loss(
                outcome.params, config, corpus.valid_ids, train_cfg.seq_len
            )
        else:
            final_loss = outcome.history[-1].loss
        result = AblationResult(row, model_param_count(config), final_loss, perplexity(final_loss))
        _logger.info("ablation %s: loss %.4f", row.value, final_loss)
        results.append(result)
    return results
