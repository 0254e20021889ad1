"""Reverse-mode gradients of the full model loss checked against central differences."""

import dataclasses
import logging

from typing import Any, Dict, NamedTuple, Optional

import numpy as np

from numpy.typing import NDArray

from retnet_lab.helpers.enums import Paradigm, Precision
from retnet_lab.helpers.vocabulary import BYTE_COUNT
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.params import init_params
from retnet_lab.numerics.autodiff import finite_diff, value_and_grad
from retnet_lab.numerics.tensor import Rng
from retnet_lab.train.data import lead_with_bos
from retnet_lab.train.trainer import batch_loss

_logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-4


class GradcheckReport(NamedTuple):
    """The worst disagreement between the two gradient estimates."""

    max_rel_error: float
    worst_param: str
    coordinates_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        """Whether the worst error is within tolerance."""
        return self.max_rel_error <= self.tolerance


def relative_error(
    exact: NDArray[Any],
    estimate: NDArray[Any],
    floor: float = RELATIVE_FLOOR,
) -> NDArray[np.float64]:
    """|a - b| / max(|a|, |b|, floor), elementwise.

    Args:
        exact: The reverse-mode gradient entries.
        estimate: The finite-difference entries.
        floor: Keeps near-zero entries from dividing by roughly nothing.

    Returns:
        The errors.
    """
    exact = np.asarray(exact, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(exact), np.abs(estimate)), floor)
    return np.abs(exact - estimate) / scale


def gradcheck(  # noqa: PLR0913
    config: ModelConfig,
    tolerance: float = 1e-5,
    seq_len: int = 8,
    samples_per_param: Optional[int] = 4,
    step: float = 1e-5,
    paradigm: Optional[Paradigm] = None,
) -> GradcheckReport:
    """Compare both gradient estimates of the next-token loss on a random sequence.

    Args:
        config: A float64 model config, small enough to evaluate many times.
        tolerance: The largest accepted relative error.
        seq_len: The length of the random byte sequence.
        samples_per_param: Coordinates drawn per parameter, None checks every coordinate.
        step: The finite-difference step.
        paradigm: Overrides ``config.paradigm``.

    Returns:
        The report.
    """
    if config.precision is not Precision.FP64:
        raise ValueError("Gradient checks need a float64 model config.")
    if paradigm is not None:
        config = dataclasses.replace(config, paradigm=paradigm)
    rng = Rng(config.seed)
    params = init_params(config, rng.spawn(0))
    data_rng = rng.spawn(1)
    batch = lead_with_bos(data_rng.integers(0, BYTE_COUNT, (1, seq_len)))

    def loss_fn(tensors: Dict[str, Any]) -> Any:
        return batch_loss(tensors, batch, config)

    _, exact = value_and_grad(loss_fn, params)
    coordinates: Optional[Dict[str, NDArray[np.int64]]] = None
    if samples_per_param is not None:
        coordinates = {
            name: data_rng.choice(value.size, min(samples_per_param, value.size))
            for name, value in params.items()
        }
    estimates = finite_diff(loss_fn, params, step, coordinates)

    worst, worst_name, checked = 0.0, "", 0
    for name, value in params.items():
        indices = np.arange(value.size) if coordinates is None else coordinates[name]
        errors = relative_error(
            exact[name].reshape(-1)[indices], estimates[name].reshape(-1)[indices]
        )
        checked += len(indices)
        if errors.size and float(errors.max()) > worst:
            worst, worst_name = float(errors.max()), name
    report = GradcheckReport(worst, worst_name, checked, tolerance)
    _logger.info(
        "gradcheck %s/%s: max relative error %.3g on %s",
        config.architecture.value,
        config.paradigm.value,
        worst,
        worst_name or "-",
    )
    return report
