"""Canonical in-memory panel of observations plus CSV ingestion.

A panel is an ``n x p`` array whose rows are time points (in order) and whose
columns are the observed series.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._errors import ValidationError

__all__ = [
    "TimeSeriesPanel",
    "as_panel",
    "load_csv",
    "save_csv",
    "difference",
    "center",
]


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Validated, immutable ``n x p`` panel.

    Parameters
    ----------
    values : array_like, shape (n, p)
        Observations, row ``t`` precedes row ``t + 1``.
    column_names : sequence of str, optional
        Defaults to ``V1 .. Vp``.
    time_index : sequence, optional
        One label per row. Metadata only.
    """

    values: np.ndarray
    column_names: tuple = field(default=())
    time_index: Optional[tuple] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValidationError(f"panel must be 2-D, got shape {values.shape}")
        n, p = values.shape
        if n < 2 or p < 1:
            raise ValidationError(f"panel needs n >= 2 rows and p >= 1 columns, got shape {values.shape}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            i, j = bad[0]
            raise ValidationError(
                f"non-finite value {values[i, j]!r} at row {i + 1}, column {j + 1}"
            )
        values.setflags(write=False)
        names = tuple(self.column_names) if self.column_names else _default_names(p)
        if len(names) != p:
            raise ValidationError(f"{len(names)} column names for {p} columns")
        index = None
        if self.time_index is not None:
            index = tuple(self.time_index)
            if len(index) != n:
                raise ValidationError(f"time_index has {len(index)} labels for {n} rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", tuple(str(c) for c in names))
        object.__setattr__(self, "time_index", index)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def rows(self, start: int, stop: int) -> "TimeSeriesPanel":
        """Sub-panel of rows ``start:stop`` (0-based, half open)."""
        index = None if self.time_index is None else self.time_index[start:stop]
        return TimeSeriesPanel(self.values[start:stop], self.column_names, index)

    def with_values(self, values) -> "TimeSeriesPanel":
        return TimeSeriesPanel(values, self.column_names, self.time_index)


def _default_names(p):
    return tuple(f"V{j + 1}" for j in range(p))


def as_panel(data) -> TimeSeriesPanel:
    """Wrap an array (or pass through a panel)."""
    if isinstance(data, TimeSeriesPanel):
        return data
    return TimeSeriesPanel(np.asarray(data, dtype=float))


def as_array(data) -> np.ndarray:
    """Return the raw ``n x p`` float array behind ``data``."""
    if isinstance(data, TimeSeriesPanel):
        return data.values
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def load_csv(path, has_header: bool = True) -> TimeSeriesPanel:
    """Read a comma-separated panel.

    Parameters
    ----------
    path : str or os.PathLike
    has_header : bool
        Whether the first row holds column names. Without a header the names
        ``V1 .. Vp`` are synthesized.

    Raises
    ------
    ValidationError
        Empty file, ragged rows, or a cell that is not a finite real number.
        The message gives the 1-based row/column of the offending cell.
    """
    if not os.path.exists(path):
        raise ValidationError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"empty file: {path}")
    names = None
    first_data_line = 1
    if has_header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_data_line = 2
        if not rows:
            raise ValidationError(f"no data rows in {path}")
    width = len(names) if names is not None else len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first_data_line
        if len(row) != width:
            raise ValidationError(
                f"ragged row at line {line}: expected {width} fields, got {len(row)}"
            )
        for j, cell in enumerate(row):
            try:
                x = float(cell)
            except ValueError:
                raise ValidationError(
                    f"cannot parse {cell.strip()!r} at line {line}, column {j + 1}"
                ) from None
            if not np.isfinite(x):
                raise ValidationError(
                    f"non-finite value {cell.strip()!r} at line {line}, column {j + 1}"
                )
            values[i, j] = x
    return TimeSeriesPanel(values, tuple(names) if names else ())


def save_csv(panel: TimeSeriesPanel, path, header: bool = True) -> None:
    """Write ``panel`` with 17 significant digits (exact float round-trip)."""
    panel = as_panel(panel)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(panel.column_names)
        for row in panel.values:
            w.writerow([format(x, ".17g") for x in row])


def difference(panel) -> TimeSeriesPanel:
    """First differences ``y_t - y_{t-1}``; drops the first row."""
    panel = as_panel(panel)
    if panel.n < 2:
        raise ValidationError(f"differencing needs n >= 2, got n={panel.n}")
    index = None if panel.time_index is None else panel.time_index[1:]
    return TimeSeriesPanel(np.diff(panel.values, axis=0), panel.column_names, index)


def center(panel) -> TimeSeriesPanel:
    """Subtract the full-sample column means."""
    panel = as_panel(panel)
    return panel.with_values(panel.values - panel.values.mean(axis=0))

