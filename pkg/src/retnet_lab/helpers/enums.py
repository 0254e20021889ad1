"""Enumerators used to enforce typing."""

from enum import Enum
from typing import cast, List


class CustomStrEnum(Enum):
    """A custom base class for string Enums.

    This class provides better type hinting for the value property.
    """

    # pylint: disable=function-redefined,invalid-overridden-method
    @property
    def name(
        self,
    ) -> str:
        """Return the name of the Enum member."""
        return self._name_  # pylint: disable=no-member

    @property
    def value(self) -> str:  # pylint: disable=invalid-overridden-method
        """Return the value of the Enum member."""
        return cast(str, self._value_)  # pylint: disable=no-member

    @classmethod
    def list_values(cls) -> List[str]:
        """Return a list of all the values of the enum."""
        return [enum_entry.value for enum_entry in cls]


class Precision(CustomStrEnum):
    """The element precision of every tensor in a run."""

    FP32 = "fp32"
    FP64 = "fp64"


class Paradigm(CustomStrEnum):
    """How the retention operator walks the sequence."""

    PARALLEL = "parallel"  # full decay mask, training
    RECURRENT = "recurrent"  # one position at a time, O(1) state
    CHUNKWISE = "chunkwise"  # parallel inside a chunk, recurrent across chunks


class Architecture(CustomStrEnum):
    """The sequence mixing block used by a model."""

    RETNET = "retnet"
    TRANSFORMER = "transformer"


class GammaVariant(CustomStrEnum):
    """Which per-head decay schedule a multi-scale retention layer uses."""

    DEFAULT = "default"  # 1 - 2^(-5 - i)
    PAPER_EXPERIMENTS = "paper_experiments"  # geometric spacing from 1/32 to 1/512


class SyntheticKind(CustomStrEnum):
    """Synthetic capability probes."""

    COPY = "copy"
    INDUCTION = "induction"


class AblationRow(CustomStrEnum):
    """One row of the ablation sweep."""

    FULL = "retnet"
    NO_SWISH_GATE = "no_swish_gate"
    NO_GROUPNORM = "no_groupnorm"
    NO_DECAY = "no_decay"
    SINGLE_SCALE = "single_scale"
    REDUCED_HEAD_DIM = "reduced_head_dim"
    TRANSFORMER = "transformer"


class EquivalenceSuite(CustomStrEnum):
    """The cross-paradigm suites the equivalence command can run."""

    RETENTION = "retention"
    MSR = "msr"
    MODEL = "model"


class FileExtensions(CustomStrEnum):
    """The different file extensions that can be read from/written to."""

    CSV = "csv"  # Comma Separated Values
    RNCK = "rnck"  # binary model checkpoint


class DTypeCode(Enum):
    """The element type of an array record in a checkpoint."""

    FP32 = 0  # 4 Byte Floating Point
    FP64 = 1  # 8 Byte Floating Point
    INT64 = 2  # 8 Byte Integer
