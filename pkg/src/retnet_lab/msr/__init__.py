"""Gated multi-scale retention layers."""

from retnet_lab.msr.layer import (
    AblationFlags,
    gamma_schedule,
    layer_gammas,
    msr_forward,
    msr_heads,
    msr_param_count,
    MSRLayerParams,
    MSRState,
    retention_heads,
)

__all__ = [
    "AblationFlags",
    "MSRLayerParams",
    "MSRState",
    "gamma_schedule",
    "layer_gammas",
    "msr_forward",
    "msr_heads",
    "msr_param_count",
    "retention_heads",
]
