"""Training steps and the training loop."""

import dataclasses
import logging
import math
import time

from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Tuple, Union

from numpy.typing import NDArray

from retnet_lab.files_and_formats.csv_records import append_rows, TRAIN_METRICS
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.params import init_params
from retnet_lab.model.retnet import forward
from retnet_lab.numerics.autodiff import value_and_grad
from retnet_lab.numerics.tensor import Rng, Tensor
from retnet_lab.train.config import TrainConfig
from retnet_lab.train.data import Batch
from retnet_lab.train.loss import cross_entropy
from retnet_lab.train.optim import adamw_init, adamw_update, AdamWState, clip_by_global_norm

_logger = logging.getLogger(__name__)

Arrays = Dict[str, NDArray[Any]]


class StepResult(NamedTuple):
    """Everything one optimizer step produces."""

    params: Arrays
    opt_state: AdamWState
    loss: float
    grad_norm: float  # before clipping
    lr: float


class MetricsRow(NamedTuple):
    """One row of the training metrics file."""

    step: int
    loss: float
    lr: float
    tokens_per_sec: float
    grad_norm: float


class TrainResult(NamedTuple):
    """The state at the end of a run and its per-step metrics."""

    params: Arrays
    opt_state: AdamWState
    history: List[MetricsRow]


def training_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> ModelConfig:
    """The model config with the training paradigm and chunk size applied.

    Args:
        model_cfg: The model config.
        train_cfg: The training config.

    Returns:
        The config the training forward pass runs with.
    """
    return dataclasses.replace(
        model_cfg, paradigm=train_cfg.paradigm, chunk_size=train_cfg.chunk_size
    )


def batch_loss(
    params: Mapping[str, Tensor],
    batch: Batch,
    config: ModelConfig,
    rng: Optional[Rng] = None,
) -> Tensor:
    """The weighted cross-entropy of a batch.

    Args:
        params: The parameter tensors.
        batch: Inputs, targets and weights.
        config: The model config, its paradigm is used.
        rng: Dropout stream, None to run without dropout.

    Returns:
        A scalar tensor.
    """
    logits = forward(batch.inputs, config, params, rng=rng)
    return cross_entropy(logits, batch.targets, batch.weights)


def loss_and_grads(
    params: Mapping[str, NDArray[Any]],
    batch: Batch,
    config: ModelConfig,
    rng: Optional[Rng] = None,
) -> Tuple[float, Arrays]:
    """The batch loss and its gradient with respect to every parameter.

    Args:
        params: The parameters.
        batch: Inputs, targets and weights.
        config: The model config, its paradigm is used.
        rng: Dropout stream, None to run without dropout.

    Returns:
        The loss value and the gradients.
    """
    return value_and_grad(lambda tensors: batch_loss(tensors, batch, config, rng), params)


def train_step(  # noqa: PLR0913
    params: Mapping[str, NDArray[Any]],
    batch: Batch,
    opt_state: AdamWState,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    rng: Optional[Rng] = None,
) -> StepResult:
    """One clipped AdamW step on a batch.

    Args:
        params: The parameters before the step.
        batch: Inputs, targets and weights.
        opt_state: The optimizer state before the step.
        train_cfg: The training config, which selects the paradigm.
        model_cfg: The model config.
        rng: Dropout stream, only drawn from when the model has dropout.

    Returns:
        The new parameters and optimizer state with the loss, gradient norm and learning rate.
    """
    config = training_config(model_cfg, train_cfg)
    loss, grads = loss_and_grads(params, batch, config, rng if config.dropout > 0.0 else None)
    if not math.isfinite(loss):
        raise FloatingPointError(f"Loss became {loss} at step {opt_state.step + 1}.")
    clipped, norm = clip_by_global_norm(grads, train_cfg.grad_clip)
    new_params, new_state, lr = adamw_update(params, clipped, opt_state, train_cfg)
    return StepResult(new_params, new_state, loss, norm, lr)


def train(  # noqa: PLR0913
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sampler: Callable[[Rng], Batch],
    params: Optional[Mapping[str, NDArray[Any]]] = None,
    opt_state: Optional[AdamWState] = None,
    metrics_path: Optional[Union[str, Path]] = None,
    evaluate: Optional[Callable[[Arrays], float]] = None,
) -> TrainResult:
    """Run training up to ``train_cfg.steps`` updates.

    A run resumed from a saved optimizer state skips the batches already consumed, so it sees the
    same data as an uninterrupted run.

    Args:
        model_cfg: The model config.
        train_cfg: The training config.
        sampler: Draws one batch from the data stream it is given.
        params: Starting parameters, freshly initialized when None.
        opt_state: Starting optimizer state, zero moments when None.
        metrics_path: A CSV file the per-step metrics are appended to.
        evaluate: Called with the parameters every ``eval_interval`` steps, returns a loss to log.

    Returns:
        The final parameters, optimizer state and the metrics of the steps run here.
    """
    root = Rng(train_cfg.seed)
    data_rng, dropout_rng = root.spawn(0), root.spawn(1)
    current = init_params(model_cfg) if params is None else dict(params)
    state = adamw_init(current) if opt_state is None else opt_state
    for _ in range(state.step):
        sampler(data_rng)

    history: List[MetricsRow] = []
    for _ in range(state.step, train_cfg.steps):
        batch = sampler(data_rng)
        start = time.perf_counter()
        result = train_step(current, batch, state, train_cfg, model_cfg, dropout_rng)
        elapsed = time.perf_counter() - start
        current, state = result.params, result.opt_state
        row = MetricsRow(
            state.step,
            result.loss,
            result.lr,
            batch.token_count / elapsed if elapsed > 0 else math.inf,
            result.grad_norm,
        )
        history.append(row)
        if metrics_path is not None:
            append_rows(metrics_path, TRAIN_METRICS, [row._asdict()])
        if row.step % train_cfg.eval_interval == 0 or row.step == train_cfg.steps:
            _logger.info(
                "step %d loss %.4f lr %.3g grad_norm %.3g",
                row.step,
                row.loss,
                row.lr,
                row.grad_norm,
            )
            if evaluate is not None:
                _logger.info("step %d validation loss %.4f", row.step, evaluate(current))
    return TrainResult(current, state, history)
