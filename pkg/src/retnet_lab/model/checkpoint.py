"""The in-memory checkpoint record and the checks run when one is loaded."""

from typing import Any, Dict, Mapping, NamedTuple, Optional

import numpy as np

from numpy.typing import NDArray

from retnet_lab.model.config import ModelConfig
from retnet_lab.model.params import param_shapes

CHECKPOINT_VERSION = 1


class Checkpoint(NamedTuple):
    """A config snapshot, its parameters and optionally the optimizer moments."""

    config: ModelConfig
    params: Dict[str, NDArray[Any]]
    step: int = 0
    optimizer: Optional[Dict[str, NDArray[Any]]] = None  # flat arrays, see AdamWState.to_arrays
    version: int = CHECKPOINT_VERSION

    ################################################################################################
    # Public Methods
    ################################################################################################

    def check_compatible(self, config: ModelConfig) -> None:
        """Reject a checkpoint written for a different model.

        Args:
            config: The config the caller is about to run with.
        """
        if config != self.config:
            raise ValueError(
                f"The checkpoint was written for {self.config}, which does not match {config}."
            )


def verify_params(config: ModelConfig, params: Mapping[str, NDArray[Any]]) -> None:
    """Check that a parameter set has exactly the names and shapes a config implies.

    Args:
        config: The model config.
        params: Arrays keyed by name.
    """
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(params))
    unexpected = sorted(set(params) - set(expected))
    if missing or unexpected:
        raise KeyError(f"Parameter names differ, missing {missing}, unexpected {unexpected}.")
    for name, shape in expected.items():
        found = np.shape(params[name])
        if found != shape:
            raise ValueError(f"Parameter {name} has shape {found}, the config implies {shape}.")
