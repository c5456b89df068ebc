"""Daily series container and its CSV representation.

Missing days are stored as NaN in memory and as an empty ``value`` cell on
disk, so a gap in the data is never confused with a genuine zero.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import EpimobError, MissingDataError, RecordError

KINDS = ("mobility", "cases", "rt_mean")


@dataclass(frozen=True)
class DailySeries:
    """One real value per calendar day for one spatial unit.

    Attributes
    ----------
    unit_id : str
    start_date : datetime.date
        Date of ``values[0]``.
    values : numpy.ndarray
        Float vector, NaN marks a missing day.
    kind : str
        One of ``mobility``, ``cases`` or ``rt_mean``.
    notes : tuple of str
        Free-form diagnostics collected while building the series.
    """

    unit_id: str
    start_date: dt.date
    values: np.ndarray
    kind: str = "mobility"
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise EpimobError("series values must be one-dimensional")
        if self.kind not in KINDS:
            raise EpimobError(f"unknown series kind {self.kind!r}")
        if self.kind in ("mobility", "cases") and np.any(values[~np.isnan(values)] < 0):
            raise EpimobError(f"{self.kind} values must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self.values) - 1)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self.values))]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def index_of(self, date: dt.date) -> int:
        return (date - self.start_date).days

    def window(self, start: dt.date, end: dt.date) -> np.ndarray:
        """Values for the inclusive date range, raising if it leaves the series."""
        i, j = self.index_of(start), self.index_of(end)
        if i < 0 or j >= len(self.values) or j < i:
            raise MissingDataError(
                f"window {start}..{end} not covered by {self.unit_id} "
                f"({self.start_date}..{self.end_date})"
            )
        return self.values[i : j + 1]

    def shifted(self, days: int) -> "DailySeries":
        return DailySeries(
            self.unit_id,
            self.start_date + dt.timedelta(days=days),
            self.values,
            self.kind,
            self.notes,
        )

    def with_values(self, values, kind=None) -> "DailySeries":
        return DailySeries(self.unit_id, self.start_date, values, kind or self.kind, self.notes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["date", "value"])
        for d, v in zip(self.dates, self.values):
            writer.writerow([d.isoformat(), "" if np.isnan(v) else format_float(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, unit_id: str, kind: str = "mobility") -> "DailySeries":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0][:2]] != ["date", "value"]:
            raise RecordError(1, "expected header 'date,value'")
        dates, values = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) < 2:
                raise RecordError(lineno, f"expected 2 fields, got {len(row)}")
            try:
                dates.append(dt.date.fromisoformat(row[0].strip()))
                cell = row[1].strip()
                values.append(float(cell) if cell else np.nan)
            except ValueError as exc:
                raise RecordError(lineno, str(exc)) from None
        return from_dated_values(unit_id, dates, values, kind)


def from_dated_values(unit_id, dates, values, kind="mobility") -> DailySeries:
    """Build a gap-free series from (date, value) pairs; absent days become NaN."""
    if not dates:
        raise EpimobError(f"series for {unit_id} is empty")
    start, end = min(dates), max(dates)
    out = np.full((end - start).days + 1, np.nan)
    seen = set()
    for d, v in zip(dates, values):
        if d in seen:
            raise EpimobError(f"duplicate date {d} in series {unit_id}")
        seen.add(d)
        out[(d - start).days] = v
    return DailySeries(unit_id, start, out, kind)


def format_float(v: float) -> str:
    # repr round-trips exactly, which keeps re-parsed CSVs bit-identical
    return repr(float(v))


def centered_moving_average(values, window: int) -> np.ndarray:
    """Centered moving average with windows truncated at the edges.

    NaN entries are ignored; a window with no finite value yields NaN.
    """
    if window < 1 or window % 2 == 0:
        raise EpimobError("moving-average window must be odd and >= 1")
    x = np.asarray(values, dtype=float)
    h = window // 2
    finite = ~np.isnan(x)
    padded = np.concatenate([np.zeros(h), np.where(finite, x, 0.0), np.zeros(h)])
    counts = np.concatenate([np.zeros(h), finite.astype(float), np.zeros(h)])
    kernel = np.ones(window)
    sums = np.convolve(padded, kernel, mode="valid")
    n = np.convolve(counts, kernel, mode="valid")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / n
    out[n == 0] = np.nan
    return out
