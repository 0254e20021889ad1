"""Versioned CSV result files.

Every file starts with ``Schema Version,<id>`` and ``Created,<timestamp>`` rows, then the column
header, then one row per record.
"""

import csv
import datetime

from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, NamedTuple, Tuple, Union

from dateutil.tz import tzlocal

from retnet_lab.files_and_formats.abstracted_file import AbstractedFile


def _parse_bool(text: str) -> bool:
    if text.lower() in {"true", "1"}:
        return True
    if text.lower() in {"false", "0"}:
        return False
    raise ValueError(f"{text!r} is not a boolean.")


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


class CSVSchema(NamedTuple):
    """A schema id and its typed columns, in file order."""

    schema_id: str
    columns: Tuple[Tuple[str, Callable[[str], Any]], ...]

    @property
    def column_names(self) -> List[str]:
        """The header row."""
        return [name for name, _ in self.columns]


TRAIN_METRICS = CSVSchema(
    "train_metrics.v1",
    (
        ("step", int),
        ("loss", float),
        ("lr", float),
        ("tokens_per_sec", float),
        ("grad_norm", float),
    ),
)
BENCH_RECORDS = CSVSchema(
    "bench_records.v1",
    (
        ("arch", str),
        ("mode", str),
        ("seq_len", int),
        ("batch", int),
        ("tokens_per_sec", float),
        ("latency_mean_ms", float),
        ("latency_p99_ms", float),
        ("latency_median_ms", float),
        ("state_elements", int),
        ("state_bytes", int),
        ("peak_workspace_elements", int),
    ),
)
EVAL_PERPLEXITY = CSVSchema(
    "eval_perplexity.v1",
    (("context_length", int), ("tokens_scored", int), ("loss", float), ("perplexity", float)),
)
ABLATION = CSVSchema(
    "ablation.v1",
    (("variant", str), ("params", int), ("final_loss", float), ("final_perplexity", float)),
)
SUITE_REPORT = CSVSchema(
    "suite_report.v1",
    (
        ("suite", str),
        ("cases", int),
        ("max_deviation", float),
        ("tolerance", float),
        ("passed", _parse_bool),
        ("violating_case", str),
    ),
)

SCHEMAS: Dict[str, CSVSchema] = {
    schema.schema_id: schema
    for schema in (TRAIN_METRICS, BENCH_RECORDS, EVAL_PERPLEXITY, ABLATION, SUITE_REPORT)
}


class RecordTable(NamedTuple):
    """The parsed content of one CSV result file."""

    schema: CSVSchema
    rows: List[Dict[str, Any]]
    created: str = ""


class RecordsCSVFile(AbstractedFile[RecordTable]):
    """A CSV result file in one of the known schemas."""

    ################################################################################################
    # Class Variables
    ################################################################################################

    SCHEMA_LABEL = "Schema Version"
    CREATED_LABEL = "Created"

    ################################################################################################
    # Public Methods
    ################################################################################################

    # Reading
    def check_style(self) -> bool:
        """Check that the file opens with a known schema row.

        Returns:
            Whether this format can read the file.
        """
        self.fd.seek(0)
        first = next(self.csv_reader, [])
        if len(first) != 2:  # noqa: PLR2004
            return False
        return first[0] == self.SCHEMA_LABEL and first[1] in SCHEMAS

    # Reading
    def read_record(self) -> RecordTable:
        """Parse every row with its column type.

        Returns:
            The schema, the creation stamp and the typed rows.
        """
        if not self.check_style():
            raise IOError(f"{self.file_path} does not start with a known schema row.")
        self.fd.seek(0)
        lines = [row for row in self.csv_reader if row]
        schema = SCHEMAS[lines[0][1]]
        created = ""
        body = lines[1:]
        if body and body[0][0] == self.CREATED_LABEL:
            created = body[0][1] if len(body[0]) > 1 else ""
            body = body[1:]
        if not body or body[0] != schema.column_names:
            raise IOError(
                f"{self.file_path} has header {body[0] if body else []}, "
                f"expected {schema.column_names}."
            )
        rows: List[Dict[str, Any]] = []
        for number, line in enumerate(body[1:], start=1):
            if len(line) != len(schema.columns):
                raise IOError(f"Row {number} of {self.file_path} has {len(line)} fields.")
            try:
                rows.append(
                    {name: parse(text) for (name, parse), text in zip(schema.columns, line)}
                )
            except ValueError as e:
                raise IOError(f"Row {number} of {self.file_path} does not parse.") from e
        return RecordTable(schema, rows, created)

    # Writing
    def write_record(self, record: RecordTable) -> None:
        """Write the header rows and every data row.

        Args:
            record: The table to write.
        """
        self.write_header(record.schema)
        self.write_rows(record.schema, record.rows)

    # Writing
    def write_header(self, schema: CSVSchema) -> None:
        """Write the schema, creation and column rows.

        Args:
            schema: The schema of the file.
        """
        writer = self.csv_writer
        writer.writerow([self.SCHEMA_LABEL, schema.schema_id])
        writer.writerow(
            [self.CREATED_LABEL, datetime.datetime.now(tz=tzlocal()).isoformat(timespec="seconds")]
        )
        writer.writerow(schema.column_names)

    # Writing
    def write_rows(self, schema: CSVSchema, rows: Iterable[Mapping[str, Any]]) -> None:
        """Write data rows in column order.

        Args:
            schema: The schema of the file.
            rows: Records keyed by column name.
        """
        writer = self.csv_writer
        for row in rows:
            missing = [name for name in schema.column_names if name not in row]
            if missing:
                raise KeyError(f"Row is missing the {schema.schema_id} columns {missing}.")
            writer.writerow([_format_value(row[name]) for name in schema.column_names])

    ################################################################################################
    # Properties
    ################################################################################################

    # Reading
    @property
    def csv_reader(self) -> Any:
        """A reader over the open file."""
        return csv.reader(self.fd)

    # Writing
    @property
    def csv_writer(self) -> Any:
        """A writer over the open file."""
        return csv.writer(self.fd)


def append_rows(
    path: Union[str, Path],
    schema: CSVSchema,
    rows: Iterable[Mapping[str, Any]],
) -> None:
    """Append rows, writing the header first when the file is new or empty.

    Args:
        path: The CSV file.
        schema: The schema the file uses.
        rows: Records keyed by column name.
    """
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    if not fresh:
        existing = read_schema_id(path)
        if existing != schema.schema_id:
            raise IOError(f"{path} holds {existing} records, cannot append {schema.schema_id}.")
    with RecordsCSVFile(str(path), "a") as file:
        if fresh:
            file.write_header(schema)
        file.write_rows(schema, rows)


def read_schema_id(path: Union[str, Path]) -> str:
    """The schema id a CSV result file declares.

    Args:
        path: The CSV file.

    Returns:
        The id.
    """
    with RecordsCSVFile(str(path), "r") as file:
        if not file.check_style():
            raise IOError(f"{path} does not start with a known schema row.")
        file.fd.seek(0)
        return next(csv.reader(file.fd))[1]
