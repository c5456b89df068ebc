
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import day
from epimob.errors import DuplicateRecordError, EpimobError, MissingDataError, RecordError, UnknownUnitError
from epimob.od_pipeline import (
    SpatialHierarchy,
    Unit,
    aggregate,
    baseline_mobility,
    ingest_flows,
    mobility_series,
    read_flows_csv,
)
from epimob.series import DailySeries
import oracles


def rows(records):
    return [{"date": d.isoformat(), "origin": o, "destination": de, "trips": str(n)} for d, o, de, n in records]


def toy_hierarchy(n_muni=5, n_prov=2):
    units = [Unit("R1", "Region", None, "region", 1e6)]
    units += [Unit(f"P{j}", f"Prov {j}", "R1", "province", 5e5) for j in range(n_prov)]
    units += [Unit(f"M{i}", f"Muni {i}", f"P{i % n_prov}", "municipality", 1e4 + i) for i in range(n_muni)]
    return SpatialHierarchy(units)


# -- ingest -------------------------------------------------------------------


@pytest.mark.parametrize("trips, kept", [(14, 0), (15, 1), (16, 1), (0, 0)])
def test_threshold_boundary(trips, kept):
    t = ingest_flows(rows([(day(0), "A", "B", trips)]), threshold=15)
    assert len(t) == kept
    assert t.suppressed_count == 1 - kept


def test_threshold_zero_keeps_everything(rng):
    recs = [(day(i % 3), f"U{i}", f"V{i}", int(rng.integers(0, 30))) for i in range(40)]
    t = ingest_flows(rows(recs), threshold=0)
    assert len(t) == 40 and t.suppressed_count == 0


def test_suppression_only_at_municipality_level():
    t = ingest_flows(rows([(day(0), "P0", "P1", 3)]), threshold=15, level="province")
    assert len(t) == 1 and t.suppression_threshold == 0


def test_malformed_row_reports_line_number():
    text = "date,origin,destination,trips\n2020-02-01,A,B,20\n2020-02-01,A,C,x\n"
    with pytest.raises(RecordError) as exc:
        read_flows_csv(text)
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


@pytest.mark.parametrize(
    "bad",
    [
        "2020-02-31,A,B,20",
        "2020-02-01,,B,20",
        "2020-02-01,A,B,-1",
        "2020-02-01,A,B,2.5",
    ],
)
def test_bad_fields_rejected(bad):
    with pytest.raises(RecordError):
        read_flows_csv("date,origin,destination,trips\n" + bad + "\n")


def test_wrong_header():
    with pytest.raises(RecordError):
        read_flows_csv("day,from,to,n\n2020-02-01,A,B,1\n")


def test_duplicate_key_is_hard_error():
    recs = [(day(0), "A", "B", 20), (day(0), "A", "B", 30)]
    with pytest.raises(DuplicateRecordError):
        ingest_flows(rows(recs))


def test_window_and_unknown_units():
    with pytest.raises(RecordError):
        ingest_flows(rows([(day(10), "M0", "M1", 20)]), window=(day(0), day(5)))
    with pytest.raises(UnknownUnitError) as exc:
        ingest_flows(rows([(day(0), "M0", "X9", 20)]), hierarchy=toy_hierarchy())
    assert "X9" in str(exc.value)


def test_read_from_path(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("date,origin,destination,trips\n2020-02-01,A,B,20\n2020-02-01,B,B,3\n")
    t = read_flows_csv(p)
    assert len(t) == 1 and t.suppressed_count == 1 and str(p) in t.provenance


# -- hierarchy ----------------------------------------------------------------


def test_hierarchy_invariants():
    with pytest.raises(EpimobError):
        SpatialHierarchy([Unit("M0", "", None, "municipality", 10)])
    with pytest.raises(EpimobError):
        SpatialHierarchy([Unit("R1", "", None, "region", 0)])
    with pytest.raises(EpimobError):
        SpatialHierarchy([Unit("R1", "", None, "region", 1), Unit("R1", "", None, "region", 1)])
    with pytest.raises(EpimobError):
        # municipality pointing straight at a region skips a level
        SpatialHierarchy([Unit("R1", "", None, "region", 1), Unit("M0", "", "R1", "municipality", 1)])


def test_hierarchy_csv_roundtrip(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text(
        "unit_id,name,parent_id,level,population\nR1,Reg,,region,100\nP0,Prov,R1,province,60\nM0,Mun,P0,municipality,60\n"
    )
    h = SpatialHierarchy.from_csv(p)
    assert h.ancestor("M0", "region") == "R1"
    assert h.at_level("province") == ["P0"]


# -- aggregate ----------------------------------------------------------------


def test_aggregate_additivity_example():
    h = toy_hierarchy(4, 2)  # M0, M2 -> P0; M1, M3 -> P1
    t = ingest_flows(rows([(day(0), "M0", "M1", 20), (day(0), "M2", "M1", 20)]), hierarchy=h)
    agg = aggregate(t, h, "province")
    assert agg.frame.to_dict("records") == [{"date": day(0), "origin": "P0", "destination": "P1", "trips": 40}]


def test_single_province_region_is_relabeling():
    h = SpatialHierarchy(
        [Unit("R1", "", None, "region", 10), Unit("P0", "", "R1", "province", 10)]
        + [Unit(f"M{i}", "", "P0", "municipality", 1) for i in range(3)]
    )
    recs = [(day(d), f"M{i}", f"M{j}", 20 + i + j + d) for d in range(3) for i in range(3) for j in range(3)]
    t = ingest_flows(rows(recs), hierarchy=h)
    prov = aggregate(t, h, "province")
    reg = aggregate(t, h, "region")
    assert (prov.frame["trips"].to_numpy() == reg.frame["trips"].to_numpy()).all()
    assert set(reg.frame["origin"]) == {"R1"}


def test_aggregate_rejects_wrong_direction_and_unknown():
    h = toy_hierarchy()
    t = ingest_flows(rows([(day(0), "P0", "P1", 20)]), level="province", hierarchy=h)
    with pytest.raises(EpimobError):
        aggregate(t, h, "municipality")
    t2 = ingest_flows(rows([(day(0), "M0", "ZZ", 20)]))
    with pytest.raises(UnknownUnitError):
        aggregate(t2, h, "province")


def random_instance(rng, n_muni=5, n_days=4, p=0.6):
    recs = []
    for d in range(n_days):
        for i in range(n_muni):
            for j in range(n_muni):
                if rng.random() < p:
                    recs.append((day(d), f"M{i}", f"M{j}", int(rng.integers(0, 60))))
    return recs


def test_aggregate_matches_brute_force(rng):
    h = toy_hierarchy(5, 2)
    parent = {f"M{i}": h.ancestor(f"M{i}", "province") for i in range(5)}
    for _ in range(25):
        recs = random_instance(rng)
        t = ingest_flows(rows(recs), threshold=0, hierarchy=h)
        got = {(r.date, r.origin, r.destination): r.trips for r in aggregate(t, h, "province").frame.itertuples()}
        assert got == oracles.brute_aggregate(recs, parent)


def test_suppression_never_increases_aggregates(rng):
    h = toy_hierarchy(5, 2)
    for _ in range(20):
        recs = random_instance(rng)
        full = aggregate(ingest_flows(rows(recs), threshold=0, hierarchy=h), h, "region").frame
        supp = aggregate(ingest_flows(rows(recs), threshold=15, hierarchy=h), h, "region").frame
        fm = {(r.date, r.origin, r.destination): r.trips for r in full.itertuples()}
        for r in supp.itertuples():
            assert r.trips <= fm[(r.date, r.origin, r.destination)]


# -- mobility series ----------------------------------------------------------


def test_mobility_stated_sum():
    recs = [(day(0), "A", "X", 10), (day(0), "B", "X", 5), (day(0), "X", "X", 100), (day(0), "X", "A", 999)]
    m = mobility_series(ingest_flows(rows(recs), threshold=0), "X")
    assert m.values.tolist() == [115.0]


def test_only_outflows_gives_zero_with_note():
    recs = [(day(0), "X", "A", 30), (day(0), "A", "A", 30)]
    m = mobility_series(ingest_flows(rows(recs), threshold=0), "X")
    assert m.values.tolist() == [0.0]
    assert m.notes and "out-flows" in m.notes[0]


def test_day_without_records_is_missing():
    recs = [(day(0), "A", "X", 30), (day(2), "A", "X", 30)]
    m = mobility_series(ingest_flows(rows(recs), threshold=0), "X")
    assert np.isnan(m.values[1]) and m.values[0] == 30 and m.values[2] == 30


def test_unknown_unit():
    t = ingest_flows(rows([(day(0), "A", "B", 30)]))
    with pytest.raises(UnknownUnitError):
        mobility_series(t, "Q")


record_strategy = st.lists(
    st.tuples(st.integers(0, 29), st.integers(0, 9), st.integers(0, 9), st.integers(0, 100)),
    min_size=1,
    max_size=120,
    unique_by=lambda r: r[:3],
)


@given(record_strategy, st.randoms(use_true_random=False))
def test_mobility_matches_matrix_oracle_and_is_order_invariant(raw, rnd):
    recs = [(day(d), f"U{o}", f"U{de}", n) for d, o, de, n in raw]
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    t1 = ingest_flows(rows(recs), threshold=0)
    t2 = ingest_flows(rows(shuffled), threshold=0)
    dates = t1.dates
    for unit in sorted(t1.units):
        a = mobility_series(t1, unit, dates[0], dates[-1])
        b = mobility_series(t2, unit, dates[0], dates[-1])
        want = oracles.brute_mobility(recs, unit, a.dates)
        np.testing.assert_array_equal(a.values, want)
        np.testing.assert_array_equal(a.values, b.values)


# -- baseline -----------------------------------------------------------------


@pytest.mark.parametrize("values, expected", [([3.0] * 14, 3.0), (list(range(1, 15)), 7.5)])
def test_baseline_examples(values, expected):
    s = DailySeries("X", day(0), values)
    assert baseline_mobility(s, day(0), day(13)) == expected


def test_baseline_random_matches_sum_over_14(rng):
    for _ in range(20):
        v = rng.uniform(0, 1e6, 30)
        s = DailySeries("X", day(0), v)
        k = int(rng.integers(0, 16))
        assert baseline_mobility(s, day(k), day(k + 13)) == pytest.approx(sum(v[k : k + 14]) / 14, rel=1e-13)


def test_baseline_missing_day_is_error():
    v = np.ones(14)
    v[5] = np.nan
    with pytest.raises(MissingDataError, match="2020-02-06"):
        baseline_mobility(DailySeries("X", day(0), v), day(0), day(13))
    with pytest.raises(MissingDataError):
        baseline_mobility(DailySeries("X", day(0), np.ones(5)), day(0), day(13))
