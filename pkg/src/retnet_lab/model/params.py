"""Parameter layout, initialization and counting for both architectures."""

import math

from typing import Dict, Optional, Tuple

import numpy as np

from numpy.typing import NDArray

from retnet_lab.helpers.enums import Architecture
from retnet_lab.model.config import ModelConfig
from retnet_lab.numerics.tensor import Rng

INIT_STD = 0.02
# output side projections are scaled down with depth
_DEPTH_SCALED_SUFFIXES = (".msr.w_o", ".attn.w_o", ".ffn.w_2")


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """The name and shape of every parameter, in a fixed order.

    Args:
        config: The model config.

    Returns:
        Shapes keyed by dotted parameter names.
    """
    d = config.d_model
    shapes: Dict[str, Tuple[int, ...]] = {"embed.weight": (config.vocab_size, d)}
    for layer in range(config.n_layers):
        prefix = f"blocks.{layer}"
        shapes[f"{prefix}.ln_1.weight"] = (d,)
        shapes[f"{prefix}.ln_1.bias"] = (d,)
        if config.architecture is Architecture.RETNET:
            shapes[f"{prefix}.msr.w_q"] = (d, d)
            shapes[f"{prefix}.msr.w_k"] = (d, d)
            shapes[f"{prefix}.msr.w_v"] = (d, 2 * d)
            if not config.flags.no_gate:
                shapes[f"{prefix}.msr.w_g"] = (d, 2 * d)
            shapes[f"{prefix}.msr.w_o"] = (2 * d, d)
            if not config.flags.no_groupnorm:
                shapes[f"{prefix}.msr.norm.weight"] = (2 * d,)
                shapes[f"{prefix}.msr.norm.bias"] = (2 * d,)
        else:
            for name in ("w_q", "w_k", "w_v", "w_o"):
                shapes[f"{prefix}.attn.{name}"] = (d, d)
        shapes[f"{prefix}.ln_2.weight"] = (d,)
        shapes[f"{prefix}.ln_2.bias"] = (d,)
        shapes[f"{prefix}.ffn.w_1"] = (d, config.ffn_width)
        shapes[f"{prefix}.ffn.w_2"] = (config.ffn_width, d)
    shapes["final_norm.weight"] = (d,)
    shapes["final_norm.bias"] = (d,)
    if not config.tie_embeddings:
        shapes["head.weight"] = (config.vocab_size, d)
    return shapes


def init_std(name: str, config: ModelConfig) -> float:
    """The initialization standard deviation of a weight matrix.

    Args:
        name: The parameter name.
        config: The model config.

    Returns:
        0.02 / sqrt(2 L) for output side projections, 0.02 otherwise.
    """
    if name.endswith(_DEPTH_SCALED_SUFFIXES):
        return INIT_STD / math.sqrt(2 * max(config.n_layers, 1))
    return INIT_STD


def init_params(config: ModelConfig, rng: Optional[Rng] = None) -> Dict[str, NDArray[np.floating]]:
    """Draw a fresh parameter set.

    Matrices come from a normal truncated at two deviations and rescaled to ``init_std``.
    Normalization gains start at one and biases at zero.

    Args:
        config: The model config.
        rng: The random stream, ``Rng(config.seed)`` when not given.

    Returns:
        Arrays keyed by dotted parameter names, in ``param_shapes`` order.
    """
    rng = Rng(config.seed) if rng is None else rng
    params: Dict[str, NDArray[np.floating]] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".weight") and len(shape) == 1:
            params[name] = np.ones(shape, dtype=config.dtype)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=config.dtype)
        else:
            params[name] = rng.truncated_normal(shape, init_std(name, config), config.precision)
    return params


def model_param_count(config: ModelConfig) -> int:
    """Every trainable float in the model.

    Args:
        config: The model config.

    Returns:
        The count.
    """
    return sum(int(np.prod(shape)) for shape in param_shapes(config).values())


def non_embedding_param_count(config: ModelConfig, include_norms: bool = True) -> int:
    """Trainable floats outside the embedding table and output head.

    Args:
        config: The model config.
        include_norms: Whether LayerNorm and GroupNorm affine terms are counted.

    Returns:
        The count.
    """
    total = 0
    for name, shape in param_shapes(config).items():
        if name in {"embed.weight", "head.weight"}:
            continue
        if not include_norms and len(shape) == 1:
            continue
        total += int(np.prod(shape))
    return total


def block_param_count(config: ModelConfig, include_norms: bool = False) -> int:
    """Trainable floats in one block, 12 d^2 for both architectures without norms.

    Args:
        config: The model config.
        include_norms: Whether the block's norm affine terms are counted.

    Returns:
        The count for ``blocks.0``.
    """
    one_block = ModelConfig(
        architecture=config.architecture,
        n_layers=1,
        d_model=config.d_model,
        n_heads=config.n_heads,
        vocab_size=config.vocab_size,
        ffn_dim=config.ffn_dim,
        flags=config.flags,
    )
    total = 0
    for name, shape in param_shapes(one_block).items():
        if not name.startswith("blocks.0."):
            continue
        if not include_norms and len(shape) == 1:
            continue
        total += int(np.prod(shape))
    return total
