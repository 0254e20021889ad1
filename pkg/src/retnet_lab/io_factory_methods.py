"""Factory methods to save and load checkpoints and CSV result files by extension."""

import logging

from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

from retnet_lab.files_and_formats.checkpoint_file import CheckpointFile
from retnet_lab.files_and_formats.csv_records import (
    append_rows,
    CSVSchema,
    RecordsCSVFile,
    RecordTable,
)
from retnet_lab.helpers.class_lookup import access_type, extension_of, find_class_format
from retnet_lab.helpers.enums import FileExtensions
from retnet_lab.model.checkpoint import Checkpoint
from retnet_lab.model.config import ModelConfig

_logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _checked_extension(path: PathLike, expected: FileExtensions) -> FileExtensions:
    extension = extension_of(str(path))
    if extension is not expected:
        raise IOError(f"{path} is a .{extension.value} file, expected .{expected.value}.")
    return extension


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> None:
    """Write a checkpoint to a ``.rnck`` file.

    Args:
        path: The file path.
        checkpoint: The checkpoint.
    """
    extension = _checked_extension(path, FileExtensions.RNCK)
    with CheckpointFile(str(path), access_type(extension, write=True)) as file:
        file.write_record(checkpoint)
    _logger.info("saved checkpoint at step %d to %s", checkpoint.step, path)


def load_checkpoint(path: PathLike, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a ``.rnck`` checkpoint, optionally checking it belongs to a config.

    Args:
        path: The file path.
        expected_config: When given, a checkpoint written for any other config is rejected.

    Returns:
        The checkpoint.
    """
    extension = _checked_extension(path, FileExtensions.RNCK)
    with CheckpointFile(str(path), access_type(extension, write=False)) as file:
        if not file.check_style():
            raise IOError(f"{path} is not a checkpoint.")
        checkpoint = file.read_record()
    if expected_config is not None:
        checkpoint.check_compatible(expected_config)
    return checkpoint


def write_records(
    path: PathLike,
    schema: CSVSchema,
    rows: Iterable[Mapping[str, Any]],
    append: bool = False,
) -> None:
    """Write result rows to a CSV file.

    Args:
        path: The file path.
        schema: The schema of the rows.
        rows: Records keyed by column name.
        append: Add to an existing file of the same schema instead of replacing it.
    """
    extension = _checked_extension(path, FileExtensions.CSV)
    if append:
        append_rows(path, schema, rows)
        return
    with RecordsCSVFile(str(path), access_type(extension, write=True)) as file:
        file.write_record(RecordTable(schema, [dict(row) for row in rows]))


def read_records(path: PathLike) -> RecordTable:
    """Read a CSV result file in any known schema.

    Args:
        path: The file path.

    Returns:
        The typed table.
    """
    extension = _checked_extension(path, FileExtensions.CSV)
    format_class = find_class_format(extension)
    with format_class(str(path), access_type(extension, write=False)) as file:
        if not file.check_style():
            raise IOError(f"{path} is not a versioned result file.")
        return file.read_record()
