"""The base file type which abstracts all file formats."""

from abc import ABC, abstractmethod
from typing import Any, Generic, IO, TypeVar

RECORD_TYPE_VAR = TypeVar("RECORD_TYPE_VAR")
FileT = TypeVar("FileT", bound="AbstractedFile[Any]")


class AbstractedFile(Generic[RECORD_TYPE_VAR], ABC):
    """An abstracted base class containing basic filestream functionality."""

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    def __init__(self, file_path: str, io_type: str) -> None:
        """Initialize the file like class.

        Args:
            file_path: The path for the file to read/write from.
            io_type: The mode the file is opened with.
        """
        self.file_path = file_path
        self.io_type = io_type
        self.fd: IO[Any]

    def __enter__(self: FileT) -> FileT:
        """Open a filestream for the file when entering a with statement.

        Returns:
            The instance where the filestream has been created.
        """
        if "b" in self.io_type:
            self.fd = open(self.file_path, self.io_type)  # noqa: SIM115
        else:
            self.fd = open(  # noqa: SIM115
                self.file_path, self.io_type, encoding="utf-8", newline=""
            )
        return self

    def __exit__(self, *args: object) -> None:
        """Close the filestream when exiting a with statement."""
        self.fd.close()

    ################################################################################################
    # Public Methods
    ################################################################################################

    @abstractmethod
    def check_style(self) -> bool:
        """Check whether the open file is in this class's format.

        Returns:
            A boolean indicating that this format can read the file.
        """
        raise NotImplementedError

    # Reading
    @abstractmethod
    def read_record(self) -> RECORD_TYPE_VAR:
        """Read the whole record from the file."""
        raise NotImplementedError

    # Writing
    @abstractmethod
    def write_record(self, record: RECORD_TYPE_VAR) -> None:
        """Write a record to the file.

        Args:
            record: The record to write.
        """
        raise NotImplementedError
