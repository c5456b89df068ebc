"""Delay in mobility reduction, cumulative incidence and their association."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EpimobError, MissingDataError
from .rt_estimator import CaseSeries
from .series import DailySeries, centered_moving_average, format_float

DEFAULT_AS_OF = dt.date(2020, 5, 15)
REDUCTION_FRACTION = 0.8

OK, UNDEFINED, UNBOUNDED = "ok", "undefined", "unbounded"


@dataclass(frozen=True)
class DelayRecord:
    """Per-unit delay between the first R_t > 1 and the mobility drop.

    ``status`` is ``"ok"`` when both dates exist, ``"undefined"`` when R_t
    never exceeds 1 and ``"unbounded"`` when mobility never falls to the
    threshold afterwards; ``delay_days`` is None unless status is ok.
    """

    unit_id: str
    first_supercritical_date: dt.date | None
    mobility_reduction_date: dt.date | None
    delay_days: int | None
    status: str
    cumulative_incidence_per_100k: float = np.nan
    total_cases: float = np.nan

    @property
    def defined(self) -> bool:
        return self.status == OK

    def delay_field(self) -> str:
        return str(self.delay_days) if self.defined else self.status

    def with_incidence(self, incidence: float, total: float) -> "DelayRecord":
        return DelayRecord(
            self.unit_id,
            self.first_supercritical_date,
            self.mobility_reduction_date,
            self.delay_days,
            self.status,
            float(incidence),
            float(total),
        )


def _aligned(a: DailySeries, b: DailySeries):
    start = max(a.start_date, b.start_date)
    end = min(a.end_date, b.end_date)
    if end < start:
        raise EpimobError(f"series for {a.unit_id!r} and {b.unit_id!r} do not overlap in time")
    ia, ib = a.index_of(start), b.index_of(start)
    n = (end - start).days + 1
    return start, a.values[ia:ia + n], b.values[ib:ib + n]


def delay_in_mobility_reduction(
    rt: DailySeries,
    m: DailySeries,
    baseline: float,
    mobility_ma: int | None = 7,
    fraction: float = REDUCTION_FRACTION,
) -> DelayRecord:
    """Days R_t stays above 1 before mobility falls to ``fraction * baseline``.

    The first supercritical day is the first day with R_t > 1. The
    mobility-reduction (MR) day is the first day on or after it with
    mobility at or below the threshold; mobility is smoothed with a centred
    moving average of ``mobility_ma`` days first (None or 1 to compare raw
    values). Missing values never satisfy either condition.
    """
    if not baseline > 0:
        raise EpimobError("baseline must be positive")
    if not 0 < fraction < 1:
        raise EpimobError("fraction must lie in (0, 1)")
    mv = m.values
    if mobility_ma and mobility_ma > 1:
        mv = centered_moving_average(mv, mobility_ma)
    m_smooth = m.with_values(mv)
    start, r, mob = _aligned(rt, m_smooth)
    with np.errstate(invalid="ignore"):
        above = np.flatnonzero(r > 1)
    if above.size == 0:
        return DelayRecord(rt.unit_id, None, None, None, UNDEFINED)
    t0 = int(above[0])
    with np.errstate(invalid="ignore"):
        low = np.flatnonzero(mob[t0:] <= fraction * baseline)
    first_sc = start + dt.timedelta(days=t0)
    if low.size == 0:
        return DelayRecord(rt.unit_id, first_sc, None, None, UNBOUNDED)
    delay = int(low[0])
    return DelayRecord(rt.unit_id, first_sc, first_sc + dt.timedelta(days=delay), delay, OK)


def incidence_per_100k(cases: CaseSeries, population: float, as_of: dt.date | None = DEFAULT_AS_OF) -> tuple[float, float]:
    """Cumulative cases up to ``as_of`` (inclusive) per 100k inhabitants.

    Returns ``(incidence, total_cases)``. ``as_of=None`` uses the last day.
    """
    if not population > 0:
        raise EpimobError("population must be positive")
    n = len(cases)
    if as_of is None:
        k = n
    else:
        k = (as_of - cases.start_date).days + 1
        if not 1 <= k <= n:
            raise MissingDataError(f"{as_of} is outside the case series of {cases.unit_id!r}")
    total = float(np.sum(cases.counts[:k]))
    return 1e5 * total / population, total


@dataclass(frozen=True)
class PearsonFit:
    r: float
    p_value: float
    slope: float
    intercept: float
    r2: float
    n: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("r", "p_value", "slope", "intercept", "r2", "n")}


def pearson_fit(xs, ys) -> PearsonFit:
    """Pearson correlation with a two-sided t-test and the least-squares line."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise EpimobError("xs and ys must be 1-d and of equal length")
    n = len(x)
    if n < 3:
        raise EpimobError("need at least 3 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise EpimobError("inputs must be finite")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = dx @ dx, dy @ dy, dx @ dy
    if sxx <= 0 or syy <= 0:
        raise EpimobError("pearson_fit needs non-constant xs and ys")
    r = float(np.clip(sxy / np.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * np.sqrt(df / (1 - r * r))
        p = float(2 * stats.t.sf(abs(t), df))
    slope = float(sxy / sxx)
    intercept = float(y.mean() - slope * x.mean())
    return PearsonFit(r, p, slope, intercept, r * r, n)


def delay_table(records) -> str:
    """CSV text for a sequence of DelayRecord."""
    lines = ["unit,first_supercritical,mr_date,delay_days,incidence_100k,total_cases"]
    for rec in records:
        fs = rec.first_supercritical_date.isoformat() if rec.first_supercritical_date else ""
        mr = rec.mobility_reduction_date.isoformat() if rec.mobility_reduction_date else ""
        inc = "" if np.isnan(rec.cumulative_incidence_per_100k) else format_float(rec.cumulative_incidence_per_100k)
        tot = "" if np.isnan(rec.total_cases) else format_float(rec.total_cases)
        lines.append(f"{rec.unit_id},{fs},{mr},{rec.delay_field()},{inc},{tot}")
    return "\n".join(lines) + "\n"
