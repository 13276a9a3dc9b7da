"""SVG output: structural well-formedness, series counts, label escaping."""

import xml.etree.ElementTree as ET

import pytest

from cpknn.charts import bar_chart, line_chart

SVG_NS = "{http://www.w3.org/2000/svg}"


def parse(svg: str) -> ET.Element:
    return ET.fromstring(svg)  # raises on malformed XML


def test_line_chart_structure():
    series = {
        "run a": [(0.1, 0.9), (0.2, 0.8), (0.3, 0.7)],
        "run b": [(0.1, 0.95), (0.2, 0.85), (0.3, 0.75)],
    }
    ref = [(0.1, 0.9), (0.3, 0.7)]
    root = parse(line_chart(series, reference=ref, title="cov"))
    polylines = root.findall(f"{SVG_NS}polyline")
    assert len(polylines) == 3  # two series plus the reference
    dashed = [p for p in polylines if p.get("stroke-dasharray")]
    assert len(dashed) == 1
    texts = [t.text for t in root.iter(f"{SVG_NS}text")]
    assert "run a" in texts and "reference" in texts and "cov" in texts


def test_line_chart_escapes_labels():
    svg = line_chart({"a<&>b": [(0, 0), (1, 1)]}, title="x & y")
    root = parse(svg)
    texts = [t.text for t in root.iter(f"{SVG_NS}text")]
    assert "a<&>b" in texts  # parsed back out of the escaped form
    assert "&amp;" in svg and "a<&>b" not in svg


def test_line_chart_requires_series():
    with pytest.raises(ValueError):
        line_chart({})


def test_line_chart_flat_series_has_nonzero_extent():
    root = parse(line_chart({"flat": [(0.1, 0.5), (0.2, 0.5)]}))
    pts = root.find(f"{SVG_NS}polyline").get("points")
    ys = {p.split(",")[1] for p in pts.split()}
    assert len(ys) == 1  # horizontal line, but rendered inside the frame


def test_bar_chart_structure():
    root = parse(bar_chart({"none": 0.8, "drift": 0.3}, title="eff"))
    rects = root.findall(f"{SVG_NS}rect")
    # background + frame + two bars
    assert len(rects) == 4
    texts = [t.text for t in root.iter(f"{SVG_NS}text")]
    assert "none" in texts and "drift" in texts


def test_bar_chart_requires_values():
    with pytest.raises(ValueError):
        bar_chart({})
