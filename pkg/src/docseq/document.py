"""Document data model, 8-bit coordinate quantization and reading order."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .errors import ConfigError, InvalidInputError

N_BINS = 256
MAX_ELEMENTS = 128
CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class ElementCategory:
    id: int
    name: str
    textual: bool = True


def make_categories(names: Sequence[str], non_textual: Sequence[str] = ()) -> tuple[ElementCategory, ...]:
    """Build a dense category table; ``non_textual`` names may never carry text."""
    names = list(names)
    if not names:
        raise ConfigError("at least one category is required")
    if any(not n for n in names):
        raise ConfigError("category names must be non-empty")
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"duplicate category names: {dupes}")
    unknown = set(non_textual) - set(names)
    if unknown:
        raise ConfigError(f"non-textual categories not in category list: {sorted(unknown)}")
    return tuple(ElementCategory(i, n, n not in set(non_textual)) for i, n in enumerate(names))


PUBLAYNET_NAMES = ("text", "title", "list", "table", "figure")
PUBLAYNET_CATEGORIES = make_categories(PUBLAYNET_NAMES, non_textual=("figure",))


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class QuantBBox:
    xq: int
    yq: int
    wq: int
    hq: int

    def as_tuple(self):
        return (self.xq, self.yq, self.wq, self.hq)


@dataclass(frozen=True)
class Element:
    category: int
    bbox: BBox
    style: Optional[int] = None
    text: Optional[str] = None


@dataclass(frozen=True)
class Document:
    id: str
    canvas_w: float
    canvas_h: float
    elements: tuple[Element, ...] = field(default_factory=tuple)

    def __post_init__(self):
        # accept any iterable but store a tuple so documents stay hashable
        if not isinstance(self.elements, tuple):
            object.__setattr__(self, "elements", tuple(self.elements))

    def with_elements(self, elements) -> "Document":
        return replace(self, elements=tuple(elements))


def quantize_coord(v: float, extent: float) -> int:
    """Map a canvas-unit value to one of 256 uniform bins, clamped at both ends."""
    if not math.isfinite(v):
        raise InvalidInputError(f"coordinate must be finite, got {v!r}")
    if not (math.isfinite(extent) and extent > 0):
        raise InvalidInputError(f"extent must be positive, got {extent!r}")
    b = math.floor(v / extent * N_BINS)
    return min(max(b, 0), N_BINS - 1)


def dequantize_coord(b: int, extent: float) -> float:
    """Bin-center value of bin ``b``."""
    if not (0 <= b < N_BINS) or int(b) != b:
        raise InvalidInputError(f"bin must be an integer in [0, 255], got {b!r}")
    if not (math.isfinite(extent) and extent > 0):
        raise InvalidInputError(f"extent must be positive, got {extent!r}")
    return (b + 0.5) / N_BINS * extent


def bbox_violations(bbox: BBox, canvas_w: float, canvas_h: float) -> list[str]:
    out = []
    vals = bbox.as_tuple()
    if not all(math.isfinite(v) for v in vals):
        return ["non-finite coordinate"]
    if bbox.w <= 0 or bbox.h <= 0:
        out.append("non-positive extent")
    if bbox.x < 0 or bbox.y < 0:
        out.append("negative origin (out of canvas)")
    if bbox.x + bbox.w > canvas_w + CLAMP_EPS * canvas_w or bbox.y + bbox.h > canvas_h + CLAMP_EPS * canvas_h:
        out.append("bbox exceeds canvas (out of canvas)")
    return out


def quantize_bbox(bbox: BBox, canvas_w: float, canvas_h: float) -> QuantBBox:
    problems = bbox_violations(bbox, canvas_w, canvas_h)
    if problems:
        raise InvalidInputError(f"invalid bbox {bbox}: {', '.join(problems)}")
    return QuantBBox(
        quantize_coord(bbox.x, canvas_w),
        quantize_coord(bbox.y, canvas_h),
        max(1, quantize_coord(bbox.w, canvas_w)),
        max(1, quantize_coord(bbox.h, canvas_h)),
    )


def dequantize_bbox(q: QuantBBox, canvas_w: float, canvas_h: float) -> BBox:
    return BBox(
        dequantize_coord(q.xq, canvas_w),
        dequantize_coord(q.yq, canvas_h),
        dequantize_coord(q.wq, canvas_w),
        dequantize_coord(q.hq, canvas_h),
    )


def _order_key(doc: Document, i: int, el: Element):
    return (
        quantize_coord(el.bbox.y, doc.canvas_h),
        quantize_coord(el.bbox.x, doc.canvas_w),
        el.category,
        i,
    )


def canonical_order(doc: Document) -> Document:
    """Sort elements into reading order: quantized row, then column, then category."""
    keyed = sorted(enumerate(doc.elements), key=lambda p: _order_key(doc, p[0], p[1]))
    return doc.with_elements(el for _, el in keyed)


def validate(doc: Document, categories: Optional[Sequence[ElementCategory]] = None,
             max_elements: int = MAX_ELEMENTS) -> list[str]:
    """List every violated document invariant; an empty list means the document is valid."""
    problems = []
    if not (math.isfinite(doc.canvas_w) and doc.canvas_w > 0 and math.isfinite(doc.canvas_h) and doc.canvas_h > 0):
        return ["non-positive canvas"]
    if len(doc.elements) > max_elements:
        problems.append(f"element count {len(doc.elements)} exceeds maximum {max_elements}")
    for i, el in enumerate(doc.elements):
        for p in bbox_violations(el.bbox, doc.canvas_w, doc.canvas_h):
            problems.append(f"element {i}: {p}")
        if categories is not None:
            if not (0 <= el.category < len(categories)):
                problems.append(f"element {i}: unknown category id {el.category}")
            elif el.text is not None and not categories[el.category].textual:
                problems.append(f"element {i}: text on non-textual category {categories[el.category].name!r}")
    return problems
