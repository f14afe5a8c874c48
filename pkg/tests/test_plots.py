"""SVG chart structure and determinism."""

import xml.etree.ElementTree as ET

import numpy as np

from otdlab import plots


def _tags(svg):
    root = ET.fromstring(svg)
    return [el.tag.split("}")[-1] for el in root.iter()]


def test_line_chart_one_polyline_per_series_with_legend():
    svg = plots.svg_line_chart([
        ("run_a", [0, 1, 2], [3.0, 2.0, 1.0]),
        ("run_b", [0, 1, 2], [2.5, 2.5, 2.5]),
    ], title="w2", ylabel="w2")
    tags = _tags(svg)
    assert tags.count("polyline") == 2
    assert "run_a" in svg and "run_b" in svg
    assert "w2" in svg


def test_line_chart_empty_input_renders_axes_only():
    svg = plots.svg_line_chart([])
    tags = _tags(svg)
    assert tags.count("polyline") == 0
    assert tags.count("line") >= 2  # the two axes at minimum
    assert tags.count("text") > 0   # tick labels


def test_line_chart_skips_missing_values():
    svg = plots.svg_line_chart([("r", [0, 1, 2, 3], [1.0, None, 2.0, np.nan])])
    poly = [el for el in ET.fromstring(svg).iter() if el.tag.endswith("polyline")]
    assert len(poly) == 1
    assert len(poly[0].get("points").split()) == 2


def test_line_chart_all_missing_still_renders():
    svg = plots.svg_line_chart([("r", [0, 1], [None, None])])
    assert _tags(svg).count("polyline") == 0


def test_line_chart_deterministic():
    series = [("r", list(range(5)), [0.1 * i for i in range(5)])]
    assert plots.svg_line_chart(series) == plots.svg_line_chart(series)


def test_scatter_draws_every_point():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(7, 2)), rng.normal(size=(9, 2))
    svg = plots.svg_scatter([("gen", a), ("tgt", b)])
    # 16 data points plus one legend marker per cloud
    assert _tags(svg).count("circle") == 7 + 9 + 2
    assert "gen" in svg and "tgt" in svg


def test_scatter_shared_square_range():
    # a wide cloud must not squash the vertical scale: both axes cover the
    # same span, so the two extreme points land on the plot edges
    pts = np.array([[-10.0, 0.0], [10.0, 0.0], [0.0, 1.0]])
    svg = plots.svg_scatter([("c", pts)])
    circles = [el for el in ET.fromstring(svg).iter() if el.tag.endswith("circle")]
    xs = sorted(float(c.get("cx")) for c in circles[:3])
    assert xs[0] < 100 and xs[-1] > 500


def test_scatter_empty_is_valid():
    svg = plots.svg_scatter([])
    assert _tags(svg).count("circle") == 0
    ET.fromstring(svg)


def test_names_are_escaped():
    svg = plots.svg_line_chart([("a<b&c", [0, 1], [0.0, 1.0])], title="x<y")
    ET.fromstring(svg)
    assert "a&lt;b&amp;c" in svg
