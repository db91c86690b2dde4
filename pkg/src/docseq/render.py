"""Deterministic SVG rendering of corpus records."""

from __future__ import annotations

import json
import zlib
from typing import Optional
from xml.sax.saxutils import escape, quoteattr

CATEGORY_COLORS = {
    "text": "#1f77b4",
    "title": "#d62728",
    "list": "#2ca02c",
    "table": "#9467bd",
    "figure": "#ff7f0e",
}
_FALLBACK = ("#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#843c39")


def category_color(name: str) -> str:
    if name in CATEGORY_COLORS:
        return CATEGORY_COLORS[name]
    return _FALLBACK[zlib.crc32(name.encode("utf-8")) % len(_FALLBACK)]


def _f(v: float) -> str:
    return f"{float(v):.3f}"


def _wrap(text: str, width: float, font_size: float) -> list[str]:
    per_line = max(1, int(width / (0.55 * font_size)))
    lines, cur = [], ""
    for word in text.split():
        while len(word) > per_line:
            if cur:
                lines.append(cur)
                cur = ""
            lines.append(word[:per_line])
            word = word[per_line:]
        if not cur:
            cur = word
        elif len(cur) + 1 + len(word) <= per_line:
            cur += " " + word
        else:
            lines.append(cur)
            cur = word
    if cur:
        lines.append(cur)
    return lines


def render_svg(record: dict, show_text: bool = False, metadata: Optional[dict] = None) -> str:
    """One translucent rect per element, optional text clipped to its box.

    Coordinates are written with three decimals; identical input gives identical bytes.
    """
    W, H = record["canvas"]["w"], record["canvas"]["h"]
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(W)}" height="{_f(H)}" '
        f'viewBox="0 0 {_f(W)} {_f(H)}">',
    ]
    if metadata is not None:
        out.append(f"<metadata>{escape(json.dumps(metadata, sort_keys=True))}</metadata>")
    out.append(f'<rect class="canvas" x="0.000" y="0.000" width="{_f(W)}" height="{_f(H)}" fill="#ffffff"/>')
    for i, el in enumerate(record["elements"]):
        x, y, w, h = el["bbox"]
        color = category_color(el["category"])
        out.append(f'<g class="element" data-index="{i}" data-category={quoteattr(el["category"])}>')
        out.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{color}" '
                   f'fill-opacity="0.25" stroke="{color}" stroke-width="1"/>')
        text = el.get("text")
        if show_text and text:
            fs = min(10.0, max(3.0, h * 0.8))
            out.append(f'<clipPath id="clip-{i}"><rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}"/></clipPath>')
            out.append(f'<text clip-path="url(#clip-{i})" font-family="sans-serif" font-size="{_f(fs)}" fill="#000000">')
            for j, line in enumerate(_wrap(text, w, fs)):
                ly = y + fs * (1.0 + 1.2 * j)
                if ly - fs > y + h:
                    break
                out.append(f'<tspan x="{_f(x + 1)}" y="{_f(ly)}">{escape(line)}</tspan>')
            out.append("</text>")
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
