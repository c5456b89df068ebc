import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import day
from epimob import io, svg
from epimob.errors import MissingPrerequisiteError
from epimob.fda.basis import SmoothedCurve, build_basis
from epimob.series import DailySeries

SVG_NS = "{http://www.w3.org/2000/svg}"


@given(st.lists(st.one_of(st.floats(allow_nan=False, allow_infinity=False, width=64), st.just(float("nan"))), min_size=1, max_size=30))
def test_series_csv_round_trip_is_exact(values):
    s = DailySeries("U", day(3), values, "rt_mean")
    back = DailySeries.from_csv(s.to_csv(), "U", "rt_mean")
    assert back.start_date == s.start_date
    np.testing.assert_array_equal(back.values, s.values)


def test_series_dir_round_trip(tmp_path, rng):
    ss = [DailySeries(u, day(0), rng.uniform(0, 1e4, size=5)) for u in ("B", "A")]
    io.write_series_dir(tmp_path, ss)
    back = io.read_series_dir(tmp_path)
    assert [s.unit_id for s in back] == ["A", "B"]
    np.testing.assert_array_equal(back[1].values, ss[0].values)


def test_missing_inputs(tmp_path):
    with pytest.raises(MissingPrerequisiteError, match="nothing"):
        io.read_series_dir(tmp_path / "nothing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(MissingPrerequisiteError):
        io.read_series_dir(tmp_path / "empty")
    with pytest.raises(MissingPrerequisiteError):
        io.read_json(tmp_path / "x.json")


def test_curves_round_trip(tmp_path, rng):
    b = build_basis((0, 40), 12)
    c = SmoothedCurve(b, rng.normal(size=12), (0.0, 40.0), "u1")
    io.write_curves(tmp_path / "c.json", [c], {"lam": 3.0})
    (back,) = io.read_curves(tmp_path / "c.json")
    t = np.linspace(0, 40, 81)
    np.testing.assert_array_equal(back(t), c(t))
    assert back.unit_id == "u1"


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write_text(tmp_path / "sub" / "a.txt", "x")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]


def test_manifest_is_deterministic(tmp_path):
    f = tmp_path / "out.csv"
    f.write_text("a\n1\n")
    io.write_manifest(tmp_path / "m1.json", "s", {"k": 1}, [], [f], tmp_path)
    io.write_manifest(tmp_path / "m2.json", "s", {"k": 1}, [], [f], tmp_path)
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    assert '"out.csv"' in (tmp_path / "m1.json").read_text()


@pytest.mark.parametrize("value, text", [(None, ""), (True, "1"), (3, "3"), (0.1, "0.1"), (float("nan"), ""), (day(0), "2020-02-01")])
def test_csv_cells(value, text):
    assert io.csv_text(["x"], [[value]]) == f"x\n{text}\n"


# -- svg ----------------------------------------------------------------------


def parse(doc):
    root = ET.fromstring(doc)
    assert root.tag == SVG_NS + "svg"
    return root


def test_line_chart_breaks_at_gaps():
    x = np.arange(10)
    y = np.array([1, 2, np.nan, 4, 5, 6, np.nan, np.nan, 9, 10], float)
    root = parse(svg.line_chart(x, {"a": y}, {"b": x * 2.0}, title="t & u"))
    lines = root.findall(SVG_NS + "polyline")
    # three runs of y plus one right-axis series
    assert len(lines) == 4
    assert any("t &amp; u" in ET.tostring(e, encoding="unicode") for e in root.iter(SVG_NS + "text"))


def test_scatter_and_band_and_heatmap_parse():
    parse(svg.scatter_chart([1, 2, 3], [3, 1, 2], ["a", "b", "<c>"], 0.5, 1.0))
    root = parse(svg.band_chart([0, 1, 2], [1, 0, -1], [0.5, -0.5, -2], [1.5, 0.5, -0.5]))
    assert len(root.findall(SVG_NS + "polygon")) == 1
    h = parse(svg.heatmap([0, 1], [0, 1, 2], np.array([[1.0, -1.0, 0.0], [np.nan, 0.5, 2.0]])))
    cells = [r for r in h.findall(SVG_NS + "rect") if r.get("fill") not in ("white",)]
    assert len(cells) == 5


def test_diverging_colours():
    assert svg._diverging(1.0, 1.0) == "#ff0000"
    assert svg._diverging(-1.0, 1.0) == "#0000ff"
    assert svg._diverging(0.0, 1.0) == "#ffffff"


def test_degenerate_ranges_do_not_divide_by_zero():
    parse(svg.line_chart([0, 0], {"a": [np.nan, np.nan]}))
    parse(svg.scatter_chart([], []))
