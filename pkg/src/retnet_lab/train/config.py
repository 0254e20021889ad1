"""Training and evaluation settings."""

from typing import Optional, Tuple

from pydantic import field_validator, model_validator
from pydantic.dataclasses import dataclass

from retnet_lab.helpers.enums import Paradigm


@dataclass(frozen=True, kw_only=True)
class TrainConfig:  # pylint: disable=too-many-instance-attributes
    """The optimizer, schedule and batching of one training run.

    ``weight_decay`` defaults to 0.05. Some published hyperparameter tables list 0.01 for the
    same setup, set it here to reproduce those. ``grad_clip`` defaults to 1.0 at desk scale,
    2.0 is the large-scale value.
    """

    steps: int = 200
    batch_size: int = 8
    seq_len: int = 64
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-8
    weight_decay: float = 0.05
    warmup_steps: int = 20
    grad_clip: float = 1.0
    paradigm: Paradigm = Paradigm.PARALLEL
    chunk_size: int = 16
    eval_interval: int = 50
    seed: int = 0

    ################################################################################################
    # Private Methods
    ################################################################################################

    @field_validator("paradigm")
    @classmethod
    def _check_paradigm(cls, value: Paradigm) -> Paradigm:
        if value is Paradigm.RECURRENT:
            raise ValueError("Training runs in the parallel or chunkwise paradigm, not recurrent.")
        return value

    @field_validator("betas")
    @classmethod
    def _check_betas(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= beta < 1.0 for beta in value):
            raise ValueError(f"Adam betas must lie in [0, 1), got {value}.")
        return value

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}.")
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}.")
        if not 0 <= self.warmup_steps <= self.steps:
            raise ValueError(
                f"warmup_steps must lie in [0, steps={self.steps}], got {self.warmup_steps}."
            )
        if self.batch_size < 1 or self.seq_len < 1 or self.chunk_size < 1:
            raise ValueError("batch_size, seq_len and chunk_size must all be at least 1.")
        if self.grad_clip <= 0.0:
            raise ValueError(f"grad_clip must be positive, got {self.grad_clip}.")
        return self


@dataclass(frozen=True, kw_only=True)
class EvalConfig:
    """Last-K perplexity scoring: every window ends at a shared position and only its final
    ``score_last`` targets count, so each context length scores the same tokens.
    """

    context_lengths: Tuple[int, ...] = (64, 128, 256)
    score_last: int = 32
    max_windows: Optional[int] = 16
    paradigm: Paradigm = Paradigm.PARALLEL

    ################################################################################################
    # Private Methods
    ################################################################################################

    @model_validator(mode="after")
    def _check_lengths(self) -> "EvalConfig":
        if not self.context_lengths:
            raise ValueError("At least one context length is needed.")
        if self.score_last < 1:
            raise ValueError(f"score_last must be at least 1, got {self.score_last}.")
        if self.score_last > min(self.context_lengths):
            raise ValueError(
                f"score_last={self.score_last} exceeds the shortest context "
                f"{min(self.context_lengths)}."
            )
        if self.max_windows is not None and self.max_windows < 1:
            raise ValueError(f"max_windows must be at least 1, got {self.max_windows}.")
        return self
