"""The TOML run configuration: ``[model]``, ``[train]``, ``[eval]`` and ``[bench]`` tables."""

import dataclasses
import sys

from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from bidict import bidict
from pydantic import Field, TypeAdapter
from pydantic.dataclasses import dataclass

from retnet_lab.bench.inference import BenchConfig
from retnet_lab.helpers.enums import Precision
from retnet_lab.model.config import ModelConfig
from retnet_lab.train.config import EvalConfig, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# TOML table name <-> RunConfig field name
_SECTION_LOOKUP = bidict(
    {
        "model": "model",
        "train": "train",
        "eval": "evaluation",
        "bench": "bench",
    }
)


@dataclass(frozen=True, kw_only=True)
class RunConfig:
    """Every setting a command can read, each table falling back to its defaults."""

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)

    ################################################################################################
    # Public Methods
    ################################################################################################

    def with_overrides(
        self,
        seed: Optional[int] = None,
        precision: Optional[Precision] = None,
    ) -> "RunConfig":
        """Apply command line overrides.

        Args:
            seed: Replaces the model and training seeds.
            precision: Replaces the model precision.

        Returns:
            The updated config.
        """
        model, train = self.model, self.train
        if seed is not None:
            model = dataclasses.replace(model, seed=seed)
            train = dataclasses.replace(train, seed=seed)
        if precision is not None:
            model = dataclasses.replace(model, precision=Precision(precision))
        return dataclasses.replace(self, model=model, train=train)

    def to_toml_dict(self) -> Dict[str, Any]:
        """The config as nested tables keyed like the TOML file, JSON compatible."""
        dumped = TypeAdapter(RunConfig).dump_python(self, mode="json")
        return {section: dumped[field] for section, field in _SECTION_LOOKUP.items()}


def _check_keys(cls: Any, table: Mapping[str, Any], where: str) -> None:
    """Reject keys a dataclass does not declare, descending into nested dataclass tables."""
    fields = {field.name: field for field in dataclasses.fields(cls)}
    for key, value in table.items():
        if key not in fields:
            raise ValueError(f"Unknown key {where}.{key}, expected one of {sorted(fields)}.")
        nested = fields[key].type
        if isinstance(value, Mapping) and dataclasses.is_dataclass(nested):
            _check_keys(nested, value, f"{where}.{key}")


def parse_config(document: Mapping[str, Any]) -> RunConfig:
    """Validate already parsed TOML tables.

    Args:
        document: The tables keyed by section name.

    Returns:
        The run config.
    """
    types = {field.name: field.type for field in dataclasses.fields(RunConfig)}
    sections: Dict[str, Any] = {}
    for section, table in document.items():
        if section not in _SECTION_LOOKUP:
            raise ValueError(
                f"Unknown section [{section}], expected one of {list(_SECTION_LOOKUP)}."
            )
        if not isinstance(table, Mapping):
            raise ValueError(f"[{section}] must be a table.")
        field = _SECTION_LOOKUP[section]
        _check_keys(types[field], table, section)
        sections[field] = types[field](**table)
    return RunConfig(**sections)


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a TOML run config, every key optional.

    Args:
        path: The TOML file.

    Returns:
        The run config.
    """
    with open(path, "rb") as file:
        try:
            document = tomllib.load(file)
        except tomllib.TOMLDecodeError as e:
            raise ValueError(f"{path} is not valid TOML.") from e
    return parse_config(document)
