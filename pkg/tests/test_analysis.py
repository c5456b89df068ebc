import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import day
from epimob.analysis import (
    DEFAULT_AS_OF,
    DelayRecord,
    delay_in_mobility_reduction,
    delay_table,
    incidence_per_100k,
    pearson_fit,
)
from epimob.errors import EpimobError, MissingDataError
from epimob.rt_estimator import CaseSeries
from epimob.series import DailySeries
import oracles


def lombardy_like(delay=32, start=day(0)):
    """R_t rises above 1 on day 10; mobility crosses 80% of baseline `delay` days later."""
    n = 90
    t = np.arange(n)
    rt = np.where(t < 10, 0.8, np.where(t < 60, 2.5, 0.7)).astype(float)
    cross = 10 + delay
    m = np.where(t < cross - 3, 1000.0, np.where(t < cross, 900.0, 400.0))
    return DailySeries("L", start, rt, "rt_mean"), DailySeries("L", start, m)


def test_lombardy_like_delay_is_32():
    rt, m = lombardy_like()
    rec = delay_in_mobility_reduction(rt, m, 1000.0, mobility_ma=1)
    assert rec.delay_days == 32 and rec.defined
    assert rec.first_supercritical_date == day(10)
    assert rec.mobility_reduction_date == day(42)


def test_same_day_gives_zero():
    rt = DailySeries("U", day(0), [0.5, 1.5, 1.5], "rt_mean")
    m = DailySeries("U", day(0), [1000.0, 800.0, 500.0])
    assert delay_in_mobility_reduction(rt, m, 1000.0, mobility_ma=1).delay_days == 0


def test_mobility_dropping_first_gives_zero():
    rt = DailySeries("U", day(0), [0.5, 0.5, 1.5, 1.5], "rt_mean")
    m = DailySeries("U", day(0), [500.0, 500.0, 500.0, 500.0])
    assert delay_in_mobility_reduction(rt, m, 1000.0, mobility_ma=1).delay_days == 0


def test_markers():
    m = DailySeries("U", day(0), [1000.0] * 5)
    never = delay_in_mobility_reduction(DailySeries("U", day(0), [0.9] * 5, "rt_mean"), m, 1000.0)
    assert never.status == "undefined" and never.delay_days is None and never.delay_field() == "undefined"
    unb = delay_in_mobility_reduction(DailySeries("U", day(0), [1.2] * 5, "rt_mean"), m, 1000.0)
    assert unb.status == "unbounded" and unb.delay_days is None and unb.mobility_reduction_date is None


@pytest.mark.parametrize("k", [-40, -1, 1, 7, 365])
def test_translation_invariance(k):
    rt, m = lombardy_like()
    a = delay_in_mobility_reduction(rt, m, 1000.0)
    b = delay_in_mobility_reduction(rt.shifted(k), m.shifted(k), 1000.0)
    assert a.delay_days == b.delay_days


@given(
    st.lists(st.sampled_from([0.5, 0.9, 1.0, 1.1, 2.0]), min_size=1, max_size=40),
    st.lists(st.sampled_from([300.0, 799.0, 800.0, 801.0, 1200.0]), min_size=40, max_size=40),
)
def test_random_step_series_match_scan(r, m):
    m = m[: len(r)]
    rec = delay_in_mobility_reduction(
        DailySeries("U", day(0), r, "rt_mean"), DailySeries("U", day(0), m), 1000.0, mobility_ma=1
    )
    want = oracles.delay_scan(r, m, 800.0)
    assert (rec.delay_days if rec.defined else rec.status) == want


def test_alignment_by_date_and_moving_average():
    rt = DailySeries("U", day(5), [1.5] * 30, "rt_mean")
    vals = np.full(40, 1000.0)
    vals[20] = 100.0  # a single low day is averaged away by the 7-day MA
    vals[30:] = 300.0
    m = DailySeries("U", day(0), vals)
    assert delay_in_mobility_reduction(rt, m, 1000.0, mobility_ma=1).delay_days == 15
    assert delay_in_mobility_reduction(rt, m, 1000.0, mobility_ma=7).delay_days >= 22


def test_delay_errors():
    rt = DailySeries("U", day(0), [1.5], "rt_mean")
    with pytest.raises(EpimobError):
        delay_in_mobility_reduction(rt, DailySeries("U", day(0), [1.0]), 0.0)
    with pytest.raises(EpimobError):
        delay_in_mobility_reduction(rt, DailySeries("U", day(10), [1.0]), 1.0)


# -- incidence ----------------------------------------------------------------


def test_incidence_examples():
    c = CaseSeries("U", day(0), [200.0, 300.0])
    assert incidence_per_100k(c, 100000, day(1)) == (500.0, 500.0)
    assert incidence_per_100k(CaseSeries("U", day(0), [0.0] * 3), 5e6, day(2))[0] == 0


def test_incidence_prefix_sum(rng):
    c = rng.poisson(30, 120).astype(float)
    cs = CaseSeries("U", dt.date(2020, 2, 1), c)
    for k in rng.integers(0, 120, 10):
        inc, total = incidence_per_100k(cs, 2.5e6, cs.start_date + dt.timedelta(days=int(k)))
        assert total == np.cumsum(c)[k]
        assert inc == pytest.approx(1e5 * np.cumsum(c)[k] / 2.5e6)


def test_incidence_default_and_errors():
    cs = CaseSeries("U", dt.date(2020, 2, 1), np.ones(200))
    assert incidence_per_100k(cs, 1e5)[1] == (DEFAULT_AS_OF - dt.date(2020, 2, 1)).days + 1
    with pytest.raises(MissingDataError):
        incidence_per_100k(CaseSeries("U", dt.date(2020, 2, 1), np.ones(10)), 1e5)
    with pytest.raises(EpimobError):
        incidence_per_100k(cs, 0)


# -- pearson ------------------------------------------------------------------


def test_exact_line():
    x = np.arange(10.0)
    f = pearson_fit(x, 2 * x + 1)
    assert abs(f.r - 1) < 1e-12 and abs(f.r2 - 1) < 1e-12
    assert f.slope == pytest.approx(2) and f.intercept == pytest.approx(1) and f.p_value == 0


def test_five_point_hand_computed():
    x, y = [1.0, 2, 3, 4, 5], [2.0, 1, 4, 3, 6]
    f = pearson_fit(x, y)
    r, slope = oracles.pearson_closed_form(x, y)
    # by hand: sxy = 10, sxx = 10, syy = 14.8
    assert r == pytest.approx(10 / np.sqrt(10 * 14.8))
    assert f.r == pytest.approx(r, abs=1e-12) and f.slope == pytest.approx(1.0) and slope == pytest.approx(1.0)
    assert f.intercept == pytest.approx(0.2)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=3, max_size=30))
def test_r2_equals_one_minus_sse_over_sst(pts):
    x, y = map(np.array, zip(*pts))
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    f = pearson_fit(x, y)
    sse = np.sum((y - f.intercept - f.slope * x) ** 2)
    sst = np.sum((y - y.mean()) ** 2)
    assert f.r2 == pytest.approx(1 - sse / sst, abs=1e-10)
    assert 0 <= f.p_value <= 1


def test_p_value_matches_scipy(rng):
    from scipy import stats

    x, y = rng.normal(size=20), rng.normal(size=20)
    ref = stats.pearsonr(x, y)
    f = pearson_fit(x, y)
    assert f.r == pytest.approx(ref[0]) and f.p_value == pytest.approx(ref[1], rel=1e-8)


@pytest.mark.parametrize("x, y", [([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [5, 5, 5]), ([1, 2], [1, 2]), ([1, 2, np.nan], [1, 2, 3])])
def test_pearson_errors(x, y):
    with pytest.raises(EpimobError):
        pearson_fit(x, y)


def test_delay_table_format():
    recs = [
        DelayRecord("A", day(0), day(5), 5, "ok", 12.5, 100.0),
        DelayRecord("B", None, None, None, "undefined", 0.0, 0.0),
    ]
    lines = delay_table(recs).splitlines()
    assert lines[0] == "unit,first_supercritical,mr_date,delay_days,incidence_100k,total_cases"
    assert lines[1] == "A,2020-02-01,2020-02-06,5,12.5,100.0"
    assert lines[2] == "B,,,undefined,0.0,0.0"


def test_ensemble_delay_vs_incidence_slope_positive():
    """Earlier introductions mean longer delays and more cases by the cut-off."""
    from epimob.od_pipeline import baseline_mobility
    from epimob.synth import make_epimob_ensemble

    hits = 0
    seeds = range(10)
    for seed in seeds:
        xs, ys = [], []
        for u in make_epimob_ensemble(seed):
            # R_t is only observable once cases exist
            r = u.rt_true.copy()
            r[: u.scenario.seed_start] = np.nan
            rt = DailySeries(u.unit_id, u.cases.start_date, r, "rt_mean")
            base = baseline_mobility(u.mobility, dt.date(2020, 2, 1), dt.date(2020, 2, 14))
            xs.append(delay_in_mobility_reduction(rt, u.mobility, base).delay_days)
            ys.append(incidence_per_100k(u.cases, u.population)[0])
        f = pearson_fit(xs, ys)
        hits += f.slope > 0 and f.p_value < 0.05
    assert hits >= 0.9 * len(seeds)
