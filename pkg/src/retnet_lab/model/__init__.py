"""The RetNet language model, its transformer baseline and their decoding sessions."""

from retnet_lab.model.checkpoint import Checkpoint, CHECKPOINT_VERSION, verify_params
from retnet_lab.model.config import config_from_json, config_to_json, ModelConfig
from retnet_lab.model.decode import (
    baseline_decode_step,
    decode_step,
    DecodeSession,
    generate,
    prefill,
)
from retnet_lab.model.params import (
    block_param_count,
    init_params,
    model_param_count,
    non_embedding_param_count,
    param_shapes,
)
from retnet_lab.model.retnet import forward
from retnet_lab.model.transformer import baseline_forward, KVCache

__all__ = [
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "DecodeSession",
    "KVCache",
    "ModelConfig",
    "baseline_decode_step",
    "baseline_forward",
    "block_param_count",
    "config_from_json",
    "config_to_json",
    "decode_step",
    "forward",
    "generate",
    "init_params",
    "model_param_count",
    "non_embedding_param_count",
    "param_shapes",
    "prefill",
    "verify_params",
]
