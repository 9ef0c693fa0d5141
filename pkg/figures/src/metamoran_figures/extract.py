"""Recover data coordinates from rendered SVG curves.

The plot group stores its axis ranges and viewport as ``data-*``
attributes, so the affine map is invertible without any knowledge of the
source CSV.  Used by the acceptance tests to verify that the plotting
layer adds no numerics: curve endpoints must equal the CSV terminal rows.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path

SVG_NS = "{http://www.w3.org/2000/svg}"


def _plot_area(root):
    for g in root.iter(f"{SVG_NS}g"):
        if g.get("id") == "plot-area":
            return g
    raise ValueError("no plot-area group in SVG")


def _invert(area, x_px: float, y_px: float) -> tuple[float, float]:
    xmin = float(area.get("data-xmin"))
    xmax = float(area.get("data-xmax"))
    ymin = float(area.get("data-ymin"))
    ymax = float(area.get("data-ymax"))
    px = float(area.get("data-px"))
    py = float(area.get("data-py"))
    pw = float(area.get("data-pw"))
    ph = float(area.get("data-ph"))
    if area.get("data-xscale") == "log10":
        lo, hi = math.log10(xmin), math.log10(xmax)
        x = 10.0 ** (lo + (x_px - px) / pw * (hi - lo))
    else:
        x = xmin + (x_px - px) / pw * (xmax - xmin)
    y = ymin + (py + ph - y_px) / ph * (ymax - ymin)
    return x, y


def curve_points(svg_path) -> dict:
    """All curve vertices in data coordinates, keyed by curve label."""
    root = ET.parse(Path(svg_path)).getroot()
    area = _plot_area(root)
    out = {}
    for node in area.iter(f"{SVG_NS}polyline"):
        if node.get("class") != "curve":
            continue
        label = node.get("data-label")
        pts = []
        for token in node.get("points").split():
            xs, ys = token.split(",")
            pts.append(_invert(area, float(xs), float(ys)))
        out[label] = pts
    return out


def curve_endpoints(svg_path) -> dict:
    """Final (x, y) data point of every curve, keyed by label."""
    return {label: pts[-1] for label, pts in curve_points(svg_path).items()}
