"""Helpers used to find which file format reads or writes a path."""

from typing import Any, Dict, Type

from retnet_lab.files_and_formats.abstracted_file import AbstractedFile
from retnet_lab.files_and_formats.checkpoint_file import CheckpointFile
from retnet_lab.files_and_formats.csv_records import RecordsCSVFile
from retnet_lab.helpers.enums import FileExtensions

_FORMAT_LOOKUP: Dict[FileExtensions, Type[AbstractedFile[Any]]] = {
    FileExtensions.CSV: RecordsCSVFile,
    FileExtensions.RNCK: CheckpointFile,
}


def extension_of(path: str) -> FileExtensions:
    """The known extension of a path.

    Args:
        path: The file path.

    Returns:
        The extension.
    """
    suffix = path.rsplit(".", 1)[-1].lower() if "." in path else ""
    try:
        return FileExtensions(suffix)
    except ValueError as e:
        raise IOError(f"The .{suffix} extension cannot be read or written.") from e


def find_class_format(extension: FileExtensions) -> Type[AbstractedFile[Any]]:
    """The file class handling an extension.

    Args:
        extension: The file extension.

    Returns:
        The class.
    """
    return _FORMAT_LOOKUP[extension]


def access_type(extension: FileExtensions, write: bool, append: bool = False) -> str:
    """How the file should be opened.

    Args:
        extension: The file extension.
        write: Whether the file is being written.
        append: Whether writes go to the end of an existing file.

    Returns:
        The mode string for ``open``.
    """
    base_access = ("a" if append else "w") if write else "r"
    # checkpoints are binary, csv files are text
    access_type_lookup = {
        FileExtensions.CSV: base_access,
        FileExtensions.RNCK: base_access + "b",
    }
    return access_type_lookup[extension]
