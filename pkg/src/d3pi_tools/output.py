"""
Result Files
^^^^^^^^^^^^

CSV emission with a fixed 17 significant digit number format, so repeated
runs produce byte-identical, round-trippable files.
"""

import csv
from pathlib import Path
from typing import Iterable, List, Sequence

Cell = object


def format_cell(value: Cell) -> str:
    """
    Render integers and strings as is, and floats with `%.17g`.
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


class CsvTable:
    """
    Rows collected in memory and written in one go.
    """

    header: List[str]
    rows: List[List[str]]

    def __init__(self, header: Sequence[str]) -> None:
        self.header = list(header)
        self.rows = []

    def append(self, row: Sequence[Cell]) -> None:
        """
        Add a row; its length must match the header.
        """
        if len(row) != len(self.header):
            raise ValueError(
                f"row of length {len(row)} for {len(self.header)} columns"
            )
        self.rows.append([format_cell(value) for value in row])

    def extend(self, rows: Iterable[Sequence[Cell]]) -> None:
        """
        Add several rows.
        """
        for row in rows:
            self.append(row)

    def write(self, path: Path) -> None:
        """
        Write the table to `path`, creating parent directories.
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.header)
            writer.writerows(self.rows)
