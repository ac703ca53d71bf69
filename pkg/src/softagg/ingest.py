"""Turn transition-event CSV files into transition counts.

Trips are treated as independent transitions pooled into one count
matrix (they are not a single trajectory; the estimator only consumes
the counts, so this matches how real origin/destination data is used).
Labeled ingestion maps arbitrary string labels to state indices in
first-seen order; coordinate ingestion snaps lat/lon pairs onto a
rectangular grid first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyFileError, MissingColumnError
from .markov import TransitionCounts


@dataclass(frozen=True)
class StateDictionary:
    """Bijection between state labels and contiguous indices, in first-seen
    order."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @property
    def p(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self._index[label]

    def __contains__(self, label: str) -> bool:
        return label in self._index


@dataclass(frozen=True)
class GridSpec:
    """Rectangular lat/lon grid. Cells are half-open except at the upper
    edges, which are closed so every in-bounds point lands in exactly one
    cell. Cell ids are row-major: id = row * cols + col, rows counted from
    lat_min."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    rows: int
    cols: int

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("grid bounds must satisfy min < max")
        if self.rows * self.cols < 1:
            raise ValueError("grid needs at least one cell")

    def cell_of(self, lat: float, lon: float) -> int | None:
        """Row-major cell id, or None when the point is out of bounds."""
        if not (self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max):
            return None
        row = int((lat - self.lat_min) / (self.lat_max - self.lat_min) * self.rows)
        col = int((lon - self.lon_min) / (self.lon_max - self.lon_min) * self.cols)
        row = min(row, self.rows - 1)
        col = min(col, self.cols - 1)
        return row * self.cols + col


@dataclass(frozen=True)
class IngestSummary:
    """Bookkeeping for one ingestion run (written as summary.json)."""

    rows_read: int
    rows_used: int
    rows_dropped: int
    malformed_lines: tuple[int, ...]
    p: int
    n: int

    def as_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_used": self.rows_used,
            "rows_dropped": self.rows_dropped,
            "malformed_lines": list(self.malformed_lines),
            "p": self.p,
            "n": self.n,
        }


def _counts_from_pairs(pairs: list[tuple[int, int]], p: int) -> TransitionCounts:
    N = np.zeros((p, p), dtype=np.int64)
    for i, j in pairs:
        N[i, j] += 1
    return TransitionCounts.from_matrix(N)


def ingest_labeled_trips(
    csv_path, origin_col: str, dest_col: str
) -> tuple[TransitionCounts, StateDictionary, IngestSummary]:
    """Count one transition per CSV row from the origin label to the
    destination label.

    Rows with a missing or empty value in either column are collected as
    malformed (1-based data line numbers in the summary), not fatal.
    Raises MissingColumnError / EmptyFileError for structural problems.
    """
    path = Path(csv_path)
    labels: list[str] = []
    index: dict[str, int] = {}
    pairs: list[tuple[int, int]] = []
    malformed: list[int] = []
    rows_read = 0

    def intern(label: str) -> int:
        if label not in index:
            index[label] = len(labels)
            labels.append(label)
        return index[label]

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFileError(path)
        for col in (origin_col, dest_col):
            if col not in reader.fieldnames:
                raise MissingColumnError(col, tuple(reader.fieldnames))
        for line_no, row in enumerate(reader, start=1):
            rows_read += 1
            origin = row.get(origin_col)
            dest = row.get(dest_col)
            if not origin or not dest:
                malformed.append(line_no)
                continue
            pairs.append((intern(origin), intern(dest)))
    if rows_read == 0:
        raise EmptyFileError(path)

    counts = _counts_from_pairs(pairs, len(labels))
    summary = IngestSummary(
        rows_read=rows_read,
        rows_used=len(pairs),
        rows_dropped=rows_read - len(pairs),
        malformed_lines=tuple(malformed),
        p=len(labels),
        n=len(pairs),
    )
    return counts, StateDictionary(tuple(labels)), summary


def ingest_coordinate_trips(
    csv_path,
    grid: GridSpec,
    origin_lat_col: str,
    origin_lon_col: str,
    dest_lat_col: str,
    dest_lon_col: str,
) -> tuple[TransitionCounts, StateDictionary, IngestSummary]:
    """Snap trip endpoints onto the grid and count cell-to-cell transitions.

    Out-of-bounds trips are dropped and counted; rows whose coordinates do
    not parse are collected as malformed. Only cells actually touched by a
    kept trip enter the dictionary (labels are the row-major cell ids as
    strings, in first-seen order).
    """
    path = Path(csv_path)
    labels: list[str] = []
    index: dict[str, int] = {}
    pairs: list[tuple[int, int]] = []
    malformed: list[int] = []
    rows_read = 0
    out_of_bounds = 0

    def intern(cell: int) -> int:
        key = str(cell)
        if key not in index:
            index[key] = len(labels)
            labels.append(key)
        return index[key]

    columns = (origin_lat_col, origin_lon_col, dest_lat_col, dest_lon_col)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFileError(path)
        for col in columns:
            if col not in reader.fieldnames:
                raise MissingColumnError(col, tuple(reader.fieldnames))
        for line_no, row in enumerate(reader, start=1):
            rows_read += 1
            try:
                olat, olon, dlat, dlon = (float(row[c]) for c in columns)
            except (TypeError, ValueError):
                malformed.append(line_no)
                continue
            origin = grid.cell_of(olat, olon)
            dest = grid.cell_of(dlat, dlon)
            if origin is None or dest is None:
                out_of_bounds += 1
                continue
            pairs.append((intern(origin), intern(dest)))
    if rows_read == 0:
        raise EmptyFileError(path)

    counts = _counts_from_pairs(pairs, len(labels))
    summary = IngestSummary(
        rows_read=rows_read,
        rows_used=len(pairs),
        rows_dropped=rows_read - len(pairs),
        malformed_lines=tuple(malformed),
        p=len(labels),
        n=len(pairs),
    )
    return counts, StateDictionary(tuple(labels)), summary
