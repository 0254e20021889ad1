"""Records whose fields are packed back to back as binary data."""

import dataclasses
import struct

from typing import Any, BinaryIO, Dict, List, Type, TypeVar

from retnet_lab.helpers.byte_data_types import ByteData, LITTLE_ENDIAN

T = TypeVar("T", bound="StructuredInfo")


class StructuredInfo:
    """A mixin for pydantic dataclasses whose every field is a ByteData type.

    Fields are packed in declaration order, the order dataclasses preserve.
    """

    ################################################################################################
    # Dunder Methods
    ################################################################################################

    def __len__(self) -> int:
        """Sum the number of bytes for all fields in this record."""
        return self.get_cls_length()

    ################################################################################################
    # Public Methods
    ################################################################################################

    # Reading
    @classmethod
    def unpack(cls: Type[T], filestream: BinaryIO, endian: str = LITTLE_ENDIAN) -> T:
        """Read one record from the stream.

        Args:
            filestream: The binary stream being read from.
            endian: The order in which the bytes should be read.

        Returns:
            The record built from the unpacked fields.
        """
        field_types = cls._field_types()
        struct_repr_str = endian + "".join(field.struct_repr for field in field_types.values())
        length = cls.get_cls_length()
        raw = filestream.read(length)
        if len(raw) != length:
            raise IOError(f"Truncated {cls.__name__}: expected {length} bytes, found {len(raw)}.")
        info = struct.unpack(struct_repr_str, raw)
        return cls(**dict(zip(field_types, info)))

    # Writing
    def pack(self, filestream: BinaryIO, endian: str = LITTLE_ENDIAN) -> None:
        """Write the record to the stream.

        Args:
            filestream: The binary stream being written to.
            endian: The order in which the byte sequence should be written.
        """
        values: List[Any] = []
        struct_repr_str = endian
        for key, field in self._field_types().items():
            values.append(getattr(self, key))
            struct_repr_str += field.struct_repr
        filestream.write(struct.pack(struct_repr_str, *values))

    @classmethod
    def get_cls_length(cls) -> int:
        """Sum the number of bytes for all fields in this record."""
        return sum(field.length for field in cls._field_types().values())

    ################################################################################################
    # Private Methods
    ################################################################################################

    @classmethod
    def _field_types(cls) -> Dict[str, Type[ByteData]]:
        """Map each field name to its binary type, in declaration order."""
        return {
            field.name: field.type  # pyright: ignore[reportReturnType]
            for field in dataclasses.fields(cls)  # pyright: ignore[reportArgumentType]
        }
