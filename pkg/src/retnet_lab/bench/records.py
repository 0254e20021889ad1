"""Result records emitted by the bench commands."""

import dataclasses

from typing import Any, Dict, Iterable

from pydantic.dataclasses import dataclass

from retnet_lab.helpers.enums import Architecture


@dataclass(frozen=True, kw_only=True)
class BenchRecord:  # pylint: disable=too-many-instance-attributes
    """One inference cost measurement. Every field but the timings is exact and reproducible."""

    arch: Architecture
    mode: str  # decode or prefill
    seq_len: int
    batch: int
    tokens_per_sec: float
    latency_mean_ms: float
    latency_p99_ms: float
    latency_median_ms: float
    state_elements: int  # floats carried between steps
    state_bytes: int  # state_elements at the declared precision
    peak_workspace_elements: int  # floats allocated for the carried memory

    def to_row(self) -> Dict[str, Any]:
        """The record keyed by CSV column."""
        row = dataclasses.asdict(self)
        row["arch"] = self.arch.value
        return row


@dataclass(frozen=True, kw_only=True)
class SuiteReport:
    """The outcome of one suite: it fails exactly when the worst deviation exceeds tolerance."""

    suite: str
    cases: int
    max_deviation: float
    tolerance: float
    violating_case: str = ""  # the case with the worst deviation when the suite fails

    ################################################################################################
    # Public Methods
    ################################################################################################

    def to_row(self) -> Dict[str, Any]:
        """The report keyed by CSV column."""
        row = dataclasses.asdict(self)
        row["passed"] = self.passed
        return row

    @classmethod
    def combine(cls, suite: str, reports: Iterable["SuiteReport"]) -> "SuiteReport":
        """Merge reports, keeping the worst deviation relative to its own tolerance.

        Args:
            suite: The name of the merged report.
            reports: The reports, at least one.

        Returns:
            A report that passes only when every input passes.
        """
        reports = list(reports)
        if not reports:
            raise ValueError("Nothing to combine.")
        failing = [report for report in reports if not report.passed]
        worst = max(failing or reports, key=lambda report: report.max_deviation / report.tolerance)
        return cls(
            suite=suite,
            cases=sum(report.cases for report in reports),
            max_deviation=worst.max_deviation,
            tolerance=worst.tolerance,
            violating_case=worst.violating_case if failing else "",
        )

    ################################################################################################
    # Properties
    ################################################################################################

    @property
    def passed(self) -> bool:
        """Whether the worst deviation is within tolerance, NaN never passes."""
        return self.max_deviation <= self.tolerance
