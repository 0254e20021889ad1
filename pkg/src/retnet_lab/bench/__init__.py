"""Equivalence suites, inference benchmarks and ablations behind the ``retnet-lab`` command."""

from retnet_lab.bench.ablation import AblationResult, cmd_ablate
from retnet_lab.bench.equivalence import cmd_equivalence, default_cases, EquivalenceCase
from retnet_lab.bench.inference import BenchConfig, cmd_infer_bench, latency_trend, TrendFit
from retnet_lab.bench.records import BenchRecord, SuiteReport

__all__ = [
    "AblationResult",
    "BenchConfig",
    "BenchRecord",
    "EquivalenceCase",
    "SuiteReport",
    "TrendFit",
    "cmd_ablate",
    "cmd_equivalence",
    "cmd_infer_bench",
    "default_cases",
    "latency_trend",
]
