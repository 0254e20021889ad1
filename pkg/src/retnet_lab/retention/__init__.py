"""Single head retention: decay masks, rotations and the three computation paradigms."""

from retnet_lab.retention.decay import decay_mask, DecayMask, NormalizationConfig
from retnet_lab.retention.paradigms import (
    parallel_final_state,
    retention_chunk,
    retention_chunkwise,
    retention_parallel,
    retention_recurrent_step,
    RetentionState,
)
from retnet_lab.retention.rotation import apply_xpos, rotation_angles

__all__ = [
    "DecayMask",
    "NormalizationConfig",
    "RetentionState",
    "apply_xpos",
    "decay_mask",
    "parallel_final_state",
    "retention_chunk",
    "retention_chunkwise",
    "retention_parallel",
    "retention_recurrent_step",
    "rotation_angles",
]
