import re
import xml.etree.ElementTree as ET

import pytest

from shiftdecomp.decomposition import ANCHORS, TERMS, DecompositionReport, anchors_to_terms
from shiftdecomp.inference import IntervalEstimate
from shiftdecomp.report import render_svg, write_json, write_svg

NS = {"svg": "http://www.w3.org/2000/svg"}


def report_from(anchors, se=None):
    anchors = dict(zip(ANCHORS, anchors))
    r = DecompositionReport(anchors=anchors, terms=anchors_to_terms(anchors))
    if se is not None:
        r.se["if"] = {q: IntervalEstimate(0.0, se, -se, se, "if") for q in (*ANCHORS, *TERMS)}
    return r


def parse(svg):
    return ET.fromstring(svg)


def by_class(root, cls):
    return [e for e in root.iter() if e.get("class") == cls]


def test_oracle_report_bars_and_arrows():
    root = parse(render_svg(report_from((0.3, 0.4, 0.7, 0.65))))
    bars = by_class(root, "anchor")
    assert [b.get("data-key") for b in bars] == list(ANCHORS)
    assert [float(b.get("data-value")) for b in bars] == pytest.approx([0.3, 0.4, 0.7, 0.65])
    heights = [float(b.get("height")) for b in bars]
    # drawn heights are proportional to the anchor values
    assert heights[1] / heights[0] == pytest.approx(0.4 / 0.3, rel=1e-2)
    assert heights[2] / heights[0] == pytest.approx(0.7 / 0.3, rel=1e-2)
    arrows = by_class(root, "term")
    assert [a.get("data-key") for a in arrows] == list(TERMS)
    assert [float(a.get("data-value")) for a in arrows] == pytest.approx([0.1, 0.3, -0.05])
    labels = [t.text for t in by_class(root, "term-label")]
    assert labels == ["+0.1000", "+0.3000", "-0.0500"]
    assert not by_class(root, "whisker")


def test_whiskers_and_half_widths_when_se_present():
    root = parse(render_svg(report_from((0.3, 0.4, 0.7, 0.65), se=0.01)))
    assert len(by_class(root, "whisker")) == 4
    labels = [t.text for t in by_class(root, "term-label")]
    assert all(re.search(r"± 0\.0196$", s) for s in labels), labels


def test_constant_report_equal_bars_zero_arrows():
    root = parse(render_svg(report_from((0.4, 0.4, 0.4, 0.4))))
    heights = {b.get("height") for b in by_class(root, "anchor")}
    assert len(heights) == 1
    assert all(float(a.get("data-value")) == 0 for a in by_class(root, "term"))


def test_svg_is_deterministic(tmp_path):
    r = report_from((0.3, 0.4, 0.7, 0.65), se=0.02)
    write_svg(r, tmp_path / "a.svg", title="t")
    write_svg(DecompositionReport.from_json(r.to_json()), tmp_path / "b.svg", title="t")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_negative_anchor_values_render():
    root = parse(render_svg(report_from((-0.5, -0.2, 0.1, 0.3))))
    assert all(float(b.get("height")) >= 0 for b in by_class(root, "anchor"))


def test_title_is_escaped():
    svg = render_svg(report_from((0.1, 0.2, 0.3, 0.4)), title="a < b & c")
    assert "a &lt; b &amp; c" in svg
    parse(svg)


def test_write_json_round_trip(tmp_path):
    r = report_from((0.3, 0.4, 0.7, 0.65), se=0.01)
    write_json(r, tmp_path / "r.json")
    again = DecompositionReport.from_json((tmp_path / "r.json").read_text())
    assert again.to_dict() == r.to_dict()
