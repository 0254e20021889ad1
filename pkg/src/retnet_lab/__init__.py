"""retnet_lab.

Retention networks and a matched transformer baseline, trained and benchmarked on a laptop.
"""

from importlib.metadata import version

from retnet_lab.config_file import load_config, RunConfig
from retnet_lab.helpers.enums import Architecture, Paradigm, Precision
from retnet_lab.io_factory_methods import (
    load_checkpoint,
    read_records,
    save_checkpoint,
    write_records,
)
from retnet_lab.model import (
    Checkpoint,
    DecodeSession,
    forward,
    generate,
    init_params,
    ModelConfig,
    prefill,
)
from retnet_lab.train import Corpus, EvalConfig, TrainConfig

# Read version from installed package.
__version__ = version("retnet_lab")

__all__ = [
    "Architecture",
    "Checkpoint",
    "Corpus",
    "DecodeSession",
    "EvalConfig",
    "ModelConfig",
    "Paradigm",
    "Precision",
    "RunConfig",
    "TrainConfig",
    "forward",
    "generate",
    "init_params",
    "load_checkpoint",
    "load_config",
    "prefill",
    "read_records",
    "save_checkpoint",
    "write_records",
]
