import re
import xml.etree.ElementTree as ET

from rtcsim import plots

NS = "{http://www.w3.org/2000/svg}"


def _polyline_xs(svg):
    root = ET.fromstring(svg)
    lines = root.iter(f"{NS}polyline")
    return [[float(p.split(",")[0]) for p in el.get("points").split()] for el in lines]


def test_single_row_gives_one_bar_per_metric():
    metrics = ["quality_db", "loss_pct", "throughput_mbps"]
    svg = plots.bar_panels({"gcc_like": {m: 1.0 + i for i, m in enumerate(metrics)}}, metrics)
    root = ET.fromstring(svg)
    panels = root.findall(f"{NS}g")
    assert len(panels) == len(metrics)
    for g in panels:
        bars = [r for r in g.iter(f"{NS}rect") if r.get("fill", "").startswith("#") and r.get("width") != "100%"]
        assert len(bars) == 1


def test_learning_curve_axis_spans_wall_time_exactly():
    curve = [(3.5, 0.1), (10.0, 0.3), (41.25, 0.5)]
    svg = plots.line_plot({"a": curve}, "t", "wall time (s)", "reward")
    (xs,) = _polyline_xs(svg)
    assert xs[0] == plots.MARGIN["left"]
    assert xs[-1] == plots.W - plots.MARGIN["right"]


def test_cdf_ends_at_one_and_write(tmp_path):
    svg = plots.cdf_plot({"x": [3.0, 1.0, 2.0]}, "cdf", "v")
    ys = [float(p.split(",")[1]) for p in re.search(r'points="([^"]+)"', svg).group(1).split()]
    assert min(ys) == plots.MARGIN["top"]
    out = plots.write(svg, tmp_path / "c.svg")
    ET.parse(out)
