"""The model configuration record."""

from typing import Any, Optional

import numpy as np

from numpy.typing import NDArray
from pydantic import Field, model_validator, TypeAdapter
from pydantic.dataclasses import dataclass

from retnet_lab.helpers.enums import Architecture, GammaVariant, Paradigm, Precision
from retnet_lab.helpers.vocabulary import VOCAB_SIZE
from retnet_lab.msr.layer import AblationFlags, layer_gammas, msr_heads
from retnet_lab.numerics.tensor import default_eps, precision_dtype
from retnet_lab.retention.decay import NormalizationConfig


@dataclass(frozen=True, kw_only=True)
class ModelConfig:  # pylint: disable=too-many-instance-attributes
    """Everything needed to rebuild a model's parameters and forward pass."""

    architecture: Architecture = Architecture.RETNET
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 2
    vocab_size: int = VOCAB_SIZE
    ffn_dim: Optional[int] = None  # 2 * d_model for RetNet, 4 * d_model for the transformer
    paradigm: Paradigm = Paradigm.PARALLEL
    chunk_size: int = 64
    flags: AblationFlags = Field(default_factory=AblationFlags)
    gamma_variant: GammaVariant = GammaVariant.DEFAULT
    normalization: NormalizationConfig = Field(default_factory=NormalizationConfig)
    precision: Precision = Precision.FP32
    seed: int = 0
    dropout: float = 0.0
    tie_embeddings: bool = True

    ################################################################################################
    # Private Methods
    ################################################################################################

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.n_layers < 0:
            raise ValueError(f"n_layers must not be negative, got {self.n_layers}.")
        if self.d_model < 2:  # noqa: PLR2004
            raise ValueError(f"d_model must be at least 2, got {self.d_model}.")
        if self.vocab_size < 2:  # noqa: PLR2004
            raise ValueError(f"vocab_size must be at least 2, got {self.vocab_size}.")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be at least 1, got {self.chunk_size}.")
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ValueError(f"ffn_dim must be positive, got {self.ffn_dim}.")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}.")
        # raises when the heads do not tile d_model
        _ = self.heads
        return self

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def heads(self) -> int:
        """The resolved head count, after any head width override."""
        if self.architecture is Architecture.RETNET:
            return msr_heads(self.d_model, self.n_heads, self.flags)
        return msr_heads(self.d_model, self.n_heads, AblationFlags())

    @property
    def ffn_width(self) -> int:
        """The FFN intermediate width."""
        if self.ffn_dim is not None:
            return self.ffn_dim
        multiplier = 2 if self.architecture is Architecture.RETNET else 4
        return multiplier * self.d_model

    @property
    def gammas(self) -> NDArray[np.float64]:
        """The per-head decay rates shared by every RetNet layer."""
        return layer_gammas(self.heads, self.flags, self.gamma_variant)

    @property
    def dtype(self) -> "np.dtype[Any]":
        """The numpy element type of every parameter."""
        return precision_dtype(self.precision)

    @property
    def eps(self) -> float:
        """The normalization epsilon at this precision."""
        return default_eps(self.precision)


_CONFIG_ADAPTER = TypeAdapter(ModelConfig)


def config_to_json(config: ModelConfig) -> str:
    """Serialize a config, the form stored inside checkpoints.

    Args:
        config: The config.

    Returns:
        A JSON document.
    """
    return _CONFIG_ADAPTER.dump_json(config).decode()


def config_from_json(text: str) -> ModelConfig:
    """Parse and validate a config written by ``config_to_json``.

    Args:
        text: The JSON document.

    Returns:
        The config.
    """
    return _CONFIG_ADAPTER.validate_json(text)
