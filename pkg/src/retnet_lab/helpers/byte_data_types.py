"""Fixed width binary fields used by the checkpoint container."""

import struct

from abc import ABC
from typing import Any, BinaryIO, Type, TypeVar

from pydantic import GetCoreSchemaHandler
from pydantic_core import core_schema, CoreSchema

LITTLE_ENDIAN = "<"

ByteDataT = TypeVar("ByteDataT", bound="ByteData")


class ByteData(ABC):  # noqa: B024
    """A single field that knows its own struct code and byte width."""

    ################################################################################################
    # Class Variables
    ################################################################################################

    struct_repr: str = ""  # the struct pack representation for the field
    length: int = 0  # the byte length of the field

    ################################################################################################
    # Public Methods
    ################################################################################################

    # Writing
    def pack(self, filestream: BinaryIO, endian: str = LITTLE_ENDIAN) -> None:
        """Pack the field into the stream.

        Args:
            filestream: The binary stream being written to.
            endian: The struct byte order prefix.
        """
        filestream.write(struct.pack(endian + self.struct_repr, self))

    # Reading
    @classmethod
    def unpack(
        cls: Type[ByteDataT],
        filestream: BinaryIO,
        endian: str = LITTLE_ENDIAN,
    ) -> ByteDataT:
        """Unpack one field from the stream.

        Args:
            filestream: The binary stream being read from.
            endian: The struct byte order prefix.

        Returns:
            The field holding the unpacked value.
        """
        raw = filestream.read(cls.length)
        if len(raw) != cls.length:
            raise IOError(f"Expected {cls.length} bytes for {cls.__name__}, found {len(raw)}.")
        (info,) = struct.unpack(endian + cls.struct_repr, raw)
        return cls(info)  # pyright: ignore[reportCallIssue]


class String8(ByteData, bytes):
    """An eight byte, null padded string."""

    ################################################################################################
    # Class Variables
    ################################################################################################

    struct_repr: str = "8s"
    length: int = 8

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    # pylint: disable=unused-argument
    @classmethod
    def __get_pydantic_core_schema__(  # pylint: disable=bad-dunder-name
        cls,
        source_type: Any,
        handler: GetCoreSchemaHandler,
    ) -> CoreSchema:
        """Get the core schema for the class."""
        return core_schema.no_info_after_validator_function(cls, handler(bytes))

    def __new__(cls, x: Any):
        """Pad the value with nulls up to the field length.

        Args:
            x: The value of the field.
        """
        if isinstance(x, str):
            x = x.encode()
        if len(x) > cls.length:
            raise ValueError(f"{x!r} does not fit in {cls.length} bytes.")
        return bytes.__new__(cls, bytes(x).ljust(cls.length, b"\x00"))

    def __str__(self) -> str:
        """Remove the null terminations and return it."""
        return self.decode("utf_8").rstrip("\x00")


class UnsignedChar(ByteData, int):
    """Single byte of an unsigned numeric value."""

    ################################################################################################
    # Class Variables
    ################################################################################################

    struct_repr: str = "B"
    length: int = 1

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    # pylint: disable=unused-argument
    @classmethod
    def __get_pydantic_core_schema__(  # pylint: disable=bad-dunder-name
        cls,
        source_type: Any,
        handler: GetCoreSchemaHandler,
    ) -> CoreSchema:
        """Get the core schema for the class."""
        return core_schema.no_info_after_validator_function(cls, handler(int))


class UnsignedShort(UnsignedChar):
    """Two bytes of an unsigned numeric value."""

    struct_repr: str = "H"
    length: int = 2


class UnsignedInt(UnsignedChar):
    """Four bytes of an unsigned numeric value."""

    struct_repr: str = "I"
    length: int = 4


class UnsignedLongLong(UnsignedChar):
    """Eight bytes of an unsigned numeric value."""

    struct_repr: str = "Q"
    length: int = 8
