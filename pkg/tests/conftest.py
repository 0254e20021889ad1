"""Pytest configuration file."""

from pathlib import Path
from typing import Dict

import numpy as np
import pytest

from numpy.typing import NDArray

from retnet_lab.helpers.enums import Architecture, Precision
from retnet_lab.model.config import ModelConfig
from retnet_lab.model.params import init_params

PROJECT_ROOT_DIR = Path(__file__).parent.parent
CORPUS_PATH = Path(__file__).parent / "data" / "corpus.txt"


@pytest.fixture(name="corpus_path")
def fixture_corpus_path() -> Path:
    """The small text corpus shipped with the tests."""
    return CORPUS_PATH


@pytest.fixture(name="tiny_retnet")
def fixture_tiny_retnet() -> ModelConfig:
    """A two layer float64 RetNet small enough for exact comparisons."""
    return ModelConfig(n_layers=2, d_model=16, n_heads=2, precision=Precision.FP64, seed=3)


@pytest.fixture(name="tiny_transformer")
def fixture_tiny_transformer() -> ModelConfig:
    """The transformer twin of ``tiny_retnet``."""
    return ModelConfig(
        architecture=Architecture.TRANSFORMER,
        n_layers=2,
        d_model=16,
        n_heads=2,
        precision=Precision.FP64,
        seed=3,
    )


@pytest.fixture(name="tiny_params")
def fixture_tiny_params(tiny_retnet: ModelConfig) -> Dict[str, NDArray[np.floating]]:
    """Freshly initialized parameters of ``tiny_retnet``."""
    return init_params(tiny_retnet)
