"""Rasterize a Scene to PNG with Pillow (same geometry as the SVG path)."""

from __future__ import annotations

import re
from pathlib import Path

from PIL import Image, ImageDraw

from metamoran_figures.svg import HEIGHT, WIDTH

_ATTR = re.compile(r'(\w[\w-]*)="([^"]*)"')


def _attrs(tag: str) -> dict:
    return dict(_ATTR.findall(tag))


def rasterize(scene, out, scale: int = 2) -> None:
    """Draw the scene's shapes onto a white canvas.

    Text is skipped except tick/legend labels, which Pillow renders with
    its built-in bitmap font; geometry (curves, bars, error bars) matches
    the SVG exactly up to rasterization.
    """
    img = Image.new("RGB", (int(WIDTH) * scale, int(HEIGHT) * scale), "white")
    draw = ImageDraw.Draw(img)
    body = scene.render()
    for line in body.splitlines():
        line = line.strip()
        a = _attrs(line)
        if line.startswith("<polyline"):
            pts = [
                tuple(float(v) * scale for v in token.split(","))
                for token in a["points"].split()
            ]
            if len(pts) == 1:
                draw.ellipse(_dot(pts[0], 2 * scale), fill=a.get("stroke", "#000"))
            else:
                draw.line(pts, fill=a.get("stroke", "#000"), width=scale)
        elif line.startswith("<line"):
            draw.line(
                [
                    (float(a["x1"]) * scale, float(a["y1"]) * scale),
                    (float(a["x2"]) * scale, float(a["y2"]) * scale),
                ],
                fill=a.get("stroke", "#333"),
                width=scale,
            )
        elif line.startswith("<circle"):
            c = (float(a["cx"]) * scale, float(a["cy"]) * scale)
            draw.ellipse(_dot(c, float(a.get("r", 3)) * scale), fill=a.get("fill", "#000"))
        elif line.startswith("<rect") and "class=\"bar\"" in line:
            x, y = float(a["x"]) * scale, float(a["y"]) * scale
            w, h = float(a["width"]) * scale, float(a["height"]) * scale
            draw.rectangle([x, y, x + w, y + h], fill=a.get("fill", "#1f77b4"))
        elif line.startswith("<rect") and a.get("fill") == "none":
            x, y = float(a["x"]) * scale, float(a["y"]) * scale
            w, h = float(a["width"]) * scale, float(a["height"]) * scale
            draw.rectangle([x, y, x + w, y + h], outline=a.get("stroke", "#333"), width=scale)
        elif line.startswith("<text"):
            m = re.match(r"<text[^>]*>([^<]*)</text>", line)
            if m and "x" in a and "y" in a:
                draw.text(
                    (float(a["x"]) * scale, float(a["y"]) * scale),
                    m.group(1),
                    fill="black",
                    anchor="mm" if a.get("text-anchor") == "middle" else "ls",
                )
    img.save(Path(out), format="PNG")


def _dot(center, r):
    return [center[0] - r, center[1] - r, center[0] + r, center[1] + r]
