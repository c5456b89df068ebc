"""Origin-destination flow ingestion, aggregation and daily mobility series.

Flows arrive as one CSV row per ``(date, origin, destination, trips)``. Rows
below the privacy threshold are dropped at municipality level only; coarser
tables are built by summing children and are never re-suppressed.

The 30-minute dwell filter is a property of the upstream flow export and is
not applied here.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import (
    DuplicateRecordError,
    EpimobError,
    MissingDataError,
    RecordError,
    UnknownUnitError,
)
from .series import DailySeries

LEVELS = ("municipality", "province", "region")
_RANK = {name: i for i, name in enumerate(LEVELS)}
FLOW_COLUMNS = ["date", "origin", "destination", "trips"]
HIERARCHY_COLUMNS = ["unit_id", "name", "parent_id", "level", "population"]


@dataclass(frozen=True)
class Unit:
    unit_id: str
    name: str
    parent_id: str | None
    level: str
    population: float


class SpatialHierarchy:
    """Municipality -> province -> region tree with populations."""

    def __init__(self, units: Iterable[Unit]):
        self.units: dict[str, Unit] = {}
        for u in units:
            if u.unit_id in self.units:
                raise EpimobError(f"duplicate unit id {u.unit_id!r} in hierarchy")
            if u.level not in _RANK:
                raise EpimobError(f"unit {u.unit_id!r} has unknown level {u.level!r}")
            if not u.population > 0:
                raise EpimobError(f"unit {u.unit_id!r} must have a positive population")
            self.units[u.unit_id] = u
        for u in self.units.values():
            if u.level == "region":
                continue
            parent = self.units.get(u.parent_id) if u.parent_id else None
            if parent is None:
                raise EpimobError(f"{u.level} {u.unit_id!r} has no parent in the hierarchy")
            if _RANK[parent.level] != _RANK[u.level] + 1:
                raise EpimobError(
                    f"{u.level} {u.unit_id!r} has parent {parent.unit_id!r} at level {parent.level}"
                )

    def __contains__(self, unit_id):
        return unit_id in self.units

    def __getitem__(self, unit_id) -> Unit:
        return self.units[unit_id]

    def at_level(self, level: str) -> list[str]:
        return sorted(uid for uid, u in self.units.items() if u.level == level)

    def ancestor(self, unit_id: str, level: str) -> str:
        u = self.units[unit_id]
        while _RANK[u.level] < _RANK[level]:
            u = self.units[u.parent_id]
        if u.level != level:
            raise EpimobError(f"{unit_id!r} is coarser than {level}")
        return u.unit_id

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping[str, str]]) -> "SpatialHierarchy":
        units = []
        for lineno, row in enumerate(rows, start=2):
            try:
                parent = (row.get("parent_id") or "").strip() or None
                units.append(
                    Unit(
                        unit_id=row["unit_id"].strip(),
                        name=(row.get("name") or "").strip(),
                        parent_id=parent,
                        level=row["level"].strip(),
                        population=float(row["population"]),
                    )
                )
            except (KeyError, ValueError, AttributeError) as exc:
                raise RecordError(lineno, f"bad hierarchy row: {exc}") from None
        return cls(units)

    @classmethod
    def from_csv(cls, path) -> "SpatialHierarchy":
        with open(path, newline="") as fh:
            return cls.from_rows(csv.DictReader(fh))


@dataclass(frozen=True)
class FlowTable:
    """Dated origin -> destination trip counts at one spatial level.

    ``frame`` has columns ``date`` (datetime.date), ``origin``, ``destination``
    and ``trips`` (int64) and is sorted by key.
    """

    level: str
    frame: pd.DataFrame
    suppression_threshold: int = 0
    suppressed_count: int = 0
    provenance: str = ""
    notes: tuple = field(default=(), compare=False)

    def __len__(self):
        return len(self.frame)

    @property
    def dates(self) -> list[dt.date]:
        return sorted(set(self.frame["date"]))

    @property
    def units(self) -> set[str]:
        return set(self.frame["origin"]) | set(self.frame["destination"])

    def daily_totals(self) -> dict[dt.date, int]:
        return {d: int(v) for d, v in self.frame.groupby("date")["trips"].sum().items()}

    def manifest(self) -> dict:
        return {
            "level": self.level,
            "suppression_threshold": self.suppression_threshold,
            "suppressed_records": self.suppressed_count,
            "records": len(self.frame),
            "provenance": self.provenance,
        }


def _sorted_frame(records) -> pd.DataFrame:
    frame = pd.DataFrame(records, columns=FLOW_COLUMNS)
    frame["trips"] = frame["trips"].astype(np.int64)
    return frame.sort_values(["date", "origin", "destination"], kind="mergesort").reset_index(drop=True)


def _parse_row(lineno, row):
    try:
        date_s, origin, dest, trips_s = (row[c] for c in FLOW_COLUMNS)
    except (KeyError, TypeError):
        raise RecordError(lineno, f"expected columns {','.join(FLOW_COLUMNS)}") from None
    if any(v is None for v in (date_s, origin, dest, trips_s)):
        raise RecordError(lineno, "missing field")
    try:
        date = dt.date.fromisoformat(str(date_s).strip())
    except ValueError:
        raise RecordError(lineno, f"invalid ISO date {date_s!r}") from None
    origin, dest = str(origin).strip(), str(dest).strip()
    if not origin or not dest:
        raise RecordError(lineno, "empty origin or destination")
    try:
        trips = int(str(trips_s).strip())
    except ValueError:
        raise RecordError(lineno, f"trips must be a non-negative integer, got {trips_s!r}") from None
    if trips < 0:
        raise RecordError(lineno, f"trips must be non-negative, got {trips}")
    return date, origin, dest, trips


def ingest_flows(
    records: Iterable[Mapping[str, str]],
    threshold: int = 15,
    level: str = "municipality",
    hierarchy: SpatialHierarchy | None = None,
    window: tuple[dt.date, dt.date] | None = None,
    provenance: str = "",
) -> FlowTable:
    """Parse raw flow rows and apply threshold suppression.

    Parameters
    ----------
    records : iterable of mapping
        Rows with keys ``date, origin, destination, trips`` (e.g. from
        ``csv.DictReader``). Line numbers in errors assume a header line.
    threshold : int
        Records with ``trips < threshold`` are dropped when ``level`` is
        ``municipality``. A record with exactly ``threshold`` trips is kept.
    level : str
        Spatial level of the input records.
    hierarchy : SpatialHierarchy, optional
        When given, every origin and destination must be a unit of ``level``.
    window : (date, date), optional
        Inclusive study window; rows outside it are rejected.

    Returns
    -------
    FlowTable
    """
    if threshold < 0:
        raise EpimobError("threshold must be >= 0")
    if level not in _RANK:
        raise EpimobError(f"unknown level {level!r}")
    suppress = level == "municipality"
    kept = []
    seen = set()
    suppressed = 0
    offenders = set()
    for lineno, row in enumerate(records, start=2):
        date, origin, dest, trips = _parse_row(lineno, row)
        if window is not None and not window[0] <= date <= window[1]:
            raise RecordError(lineno, f"date {date} outside study window {window[0]}..{window[1]}")
        key = (date, origin, dest)
        if key in seen:
            raise DuplicateRecordError(f"line {lineno}: duplicate record {date} {origin}->{dest}")
        seen.add(key)
        if hierarchy is not None:
            for uid in (origin, dest):
                if uid not in hierarchy or hierarchy[uid].level != level:
                    offenders.add(uid)
        if suppress and trips < threshold:
            suppressed += 1
            continue
        kept.append(key + (trips,))
    if offenders:
        raise UnknownUnitError(offenders, f"units not found at level {level}")
    return FlowTable(
        level=level,
        frame=_sorted_frame(kept),
        suppression_threshold=threshold if suppress else 0,
        suppressed_count=suppressed,
        provenance=provenance,
    )


def read_flows_csv(source, threshold=15, **kwargs) -> FlowTable:
    """Stream a flows CSV (path, or text buffer) through :func:`ingest_flows`."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        with open(source, newline="") as fh:
            return _ingest_reader(fh, threshold, provenance=kwargs.pop("provenance", str(source)), **kwargs)
    if isinstance(source, str):
        source = io.StringIO(source)
    return _ingest_reader(source, threshold, **kwargs)


def _ingest_reader(fh, threshold, **kwargs):
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != FLOW_COLUMNS:
        raise RecordError(1, f"expected header {','.join(FLOW_COLUMNS)}, got {reader.fieldnames}")
    return ingest_flows(reader, threshold, **kwargs)


def aggregate(flows: FlowTable, hierarchy: SpatialHierarchy, target_level: str) -> FlowTable:
    """Sum child flows into a coarser level; trips per day are conserved exactly."""
    if target_level not in _RANK:
        raise EpimobError(f"unknown level {target_level!r}")
    if _RANK[flows.level] >= _RANK[target_level]:
        raise EpimobError(f"cannot aggregate {flows.level} flows to {target_level}")
    offenders = {
        uid for uid in flows.units if uid not in hierarchy or hierarchy[uid].level != flows.level
    }
    if offenders:
        raise UnknownUnitError(offenders)
    mapping = {uid: hierarchy.ancestor(uid, target_level) for uid in flows.units}
    frame = flows.frame.assign(
        origin=flows.frame["origin"].map(mapping),
        destination=flows.frame["destination"].map(mapping),
    )
    grouped = frame.groupby(["date", "origin", "destination"], sort=True, as_index=False)["trips"].sum()
    return FlowTable(
        level=target_level,
        frame=_sorted_frame(grouped.itertuples(index=False, name=None)),
        suppression_threshold=flows.suppression_threshold,
        suppressed_count=flows.suppressed_count,
        provenance=flows.provenance,
    )


def mobility_series(
    flows: FlowTable,
    unit: str,
    start: dt.date | None = None,
    end: dt.date | None = None,
    hierarchy: SpatialHierarchy | None = None,
) -> DailySeries:
    """Daily in-flows plus self-flows into ``unit``.

    A day with no records at all in ``flows`` is missing (NaN). A day where
    the unit only sends trips gives 0 and a diagnostics note.
    """
    if hierarchy is not None:
        if unit not in hierarchy or hierarchy[unit].level != flows.level:
            raise UnknownUnitError([unit], f"unit not at level {flows.level}")
    elif unit not in flows.units:
        raise UnknownUnitError([unit])
    all_dates = flows.dates
    if start is None or end is None:
        if not all_dates:
            raise MissingDataError("flow table is empty")
        start = start or all_dates[0]
        end = end or all_dates[-1]
    n = (end - start).days + 1
    if n <= 0:
        raise EpimobError("end date precedes start date")
    values = np.full(n, np.nan)
    frame = flows.frame
    observed = {(d - start).days for d in all_dates if start <= d <= end}
    for i in observed:
        values[i] = 0.0
    inflow = frame[frame["destination"] == unit].groupby("date")["trips"].sum()
    for d, v in inflow.items():
        if start <= d <= end:
            values[(d - start).days] = float(v)
    outflow_days = set(frame.loc[frame["origin"] == unit, "date"]) - set(inflow.index)
    notes = tuple(
        f"{d.isoformat()}: only out-flows recorded for {unit}; M_t = 0"
        for d in sorted(outflow_days)
        if start <= d <= end
    )
    return DailySeries(unit, start, values, "mobility", notes)


def baseline_mobility(series: DailySeries, start: dt.date, end: dt.date) -> float:
    """Mean mobility over an inclusive pre-epidemic window."""
    vals = series.window(start, end)
    if np.isnan(vals).any():
        missing = [
            (start + dt.timedelta(days=int(i))).isoformat() for i in np.flatnonzero(np.isnan(vals))
        ]
        raise MissingDataError(f"baseline window has missing days: {', '.join(missing)}")
    return float(vals.sum() / len(vals))
