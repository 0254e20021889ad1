"""The binary ``.rnck`` checkpoint container.

Layout, all little-endian:
    header: magic, format version, precision code, training step, array count, config length
    the model config as UTF-8 JSON
    per array: name length, dtype code and ndim, then the UTF-8 name, one u64 per dim, the payload
    trailer: u64 sum of every preceding byte
"""

import io
import logging

from typing import Any, Dict, Tuple

import numpy as np

from bidict import bidict
from numba import njit
from numpy.typing import NDArray
from pydantic.dataclasses import dataclass

from retnet_lab.files_and_formats.abstracted_file import AbstractedFile
from retnet_lab.helpers.byte_data_class import StructuredInfo
from retnet_lab.helpers.byte_data_types import (
    LITTLE_ENDIAN,
    String8,
    UnsignedChar,
    UnsignedInt,
    UnsignedLongLong,
    UnsignedShort,
)
from retnet_lab.helpers.enums import DTypeCode, Precision
from retnet_lab.model.checkpoint import Checkpoint, CHECKPOINT_VERSION, verify_params
from retnet_lab.model.config import config_from_json, config_to_json

_logger = logging.getLogger(__name__)

MAGIC = b"RNCKPT\x00\x00"
OPTIMIZER_PREFIX = "optim."


@njit(cache=True)
def calculate_checksum(value) -> int:  # noqa: ANN001
    """Sum every byte of a contiguous array.

    Returns:
        The sum as an integer.
    """
    return int(np.sum(value.view(np.uint8), dtype=np.uint64))


@dataclass(kw_only=True)
class CheckpointHeader(StructuredInfo):
    """The fixed size record at the start of the file."""

    magic: String8
    version: UnsignedShort
    precision: UnsignedChar
    step: UnsignedLongLong
    array_count: UnsignedInt
    config_length: UnsignedInt


@dataclass(kw_only=True)
class ArrayHeader(StructuredInfo):
    """The fixed size record leading every array."""

    name_length: UnsignedShort
    dtype: UnsignedChar
    ndim: UnsignedChar


class CheckpointFile(AbstractedFile[Checkpoint]):
    """A model checkpoint, optionally with optimizer moments."""

    ################################################################################################
    # Class Variables
    ################################################################################################

    _PRECISION_CODES = bidict({Precision.FP32: 0, Precision.FP64: 1})
    _DTYPE_CODES = bidict(
        {
            DTypeCode.FP32: np.dtype("<f4"),
            DTypeCode.FP64: np.dtype("<f8"),
            DTypeCode.INT64: np.dtype("<i8"),
        }
    )

    ################################################################################################
    # Public Methods
    ################################################################################################

    # Reading
    def check_style(self) -> bool:
        """Check for the checkpoint magic.

        Returns:
            Whether the file starts with it.
        """
        self.fd.seek(0)
        return self.fd.read(len(MAGIC)) == MAGIC

    # Reading
    def read_record(self) -> Checkpoint:
        """Verify the checksum and read every array.

        Returns:
            The checkpoint.
        """
        self.fd.seek(0)
        blob = self.fd.read()
        trailer_length = UnsignedLongLong.length
        if len(blob) < CheckpointHeader.get_cls_length() + trailer_length:
            raise IOError(f"{self.file_path} is too short to be a checkpoint.")
        body = blob[:-trailer_length]
        stored = UnsignedLongLong.unpack(io.BytesIO(blob[-trailer_length:]), LITTLE_ENDIAN)
        if calculate_checksum(np.frombuffer(body, dtype=np.uint8)) != stored:
            raise IOError(f"{self.file_path} failed its checksum, the file is corrupt.")

        stream = io.BytesIO(body)
        header = CheckpointHeader.unpack(stream, LITTLE_ENDIAN)
        if header.magic != MAGIC:
            raise IOError(f"{self.file_path} is not a checkpoint.")
        if header.version > CHECKPOINT_VERSION:
            raise IOError(
                f"{self.file_path} has format version {header.version}, "
                f"this reader knows up to {CHECKPOINT_VERSION}."
            )
        try:
            config = config_from_json(stream.read(header.config_length).decode("utf-8"))
        except ValueError as e:
            raise IOError(f"{self.file_path} holds an unreadable config.") from e
        if self._PRECISION_CODES[config.precision] != header.precision:
            raise IOError(f"{self.file_path} has a precision code that disagrees with its config.")

        params: Dict[str, NDArray[Any]] = {}
        optimizer: Dict[str, NDArray[Any]] = {}
        for _ in range(header.array_count):
            name, value = self._read_array(stream)
            if name.startswith(OPTIMIZER_PREFIX):
                optimizer[name[len(OPTIMIZER_PREFIX) :]] = value
            else:
                params[name] = value
        verify_params(config, params)
        _logger.debug("read %d arrays from %s", header.array_count, self.file_path)
        return Checkpoint(config, params, int(header.step), optimizer or None, int(header.version))

    # Writing
    def write_record(self, record: Checkpoint) -> None:
        """Write the checkpoint with its checksum trailer.

        Args:
            record: The checkpoint to write.
        """
        verify_params(record.config, record.params)
        arrays = dict(record.params)
        optimizer = {} if record.optimizer is None else record.optimizer
        arrays.update({OPTIMIZER_PREFIX + name: value for name, value in optimizer.items()})
        config_bytes = config_to_json(record.config).encode("utf-8")

        buffer = io.BytesIO()
        CheckpointHeader(
            magic=MAGIC,
            version=CHECKPOINT_VERSION,
            precision=self._PRECISION_CODES[record.config.precision],
            step=record.step,
            array_count=len(arrays),
            config_length=len(config_bytes),
        ).pack(buffer, LITTLE_ENDIAN)
        buffer.write(config_bytes)
        for name, value in arrays.items():
            self._write_array(buffer, name, value)
        body = buffer.getvalue()
        self.fd.write(body)
        UnsignedLongLong(calculate_checksum(np.frombuffer(body, dtype=np.uint8))).pack(
            self.fd, LITTLE_ENDIAN
        )
        _logger.debug("wrote %d arrays to %s", len(arrays), self.file_path)

    ################################################################################################
    # Private Methods
    ################################################################################################

    # Reading
    def _read_array(self, stream: io.BytesIO) -> Tuple[str, NDArray[Any]]:
        header = ArrayHeader.unpack(stream, LITTLE_ENDIAN)
        name = stream.read(header.name_length).decode("utf-8")
        dims = tuple(
            int(UnsignedLongLong.unpack(stream, LITTLE_ENDIAN)) for _ in range(header.ndim)
        )
        try:
            dtype = self._DTYPE_CODES[DTypeCode(header.dtype)]
        except ValueError as e:
            raise IOError(f"Array {name} has the unknown dtype code {header.dtype}.") from e
        count = int(np.prod(dims, dtype=np.int64))
        raw = stream.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise IOError(f"Array {name} is truncated.")
        return name, np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))

    # Writing
    def _write_array(self, stream: io.BytesIO, name: str, value: NDArray[Any]) -> None:
        value = np.asarray(value)
        try:
            code = self._DTYPE_CODES.inverse[value.dtype.newbyteorder("<")]
        except KeyError as e:
            raise TypeError(
                f"Array {name} has dtype {value.dtype}, which checkpoints cannot hold."
            ) from e
        encoded = name.encode("utf-8")
        ArrayHeader(name_length=len(encoded), dtype=code.value, ndim=value.ndim).pack(
            stream, LITTLE_ENDIAN
        )
        stream.write(encoded)
        for dim in value.shape:
            UnsignedLongLong(dim).pack(stream, LITTLE_ENDIAN)
        stream.write(np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<")).tobytes())

