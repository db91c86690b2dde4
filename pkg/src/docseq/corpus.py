"""JSONL corpus records, COCO ingestion, synthetic page generation and splits.

A record is a plain dict::

    {"id": "...", "canvas": {"w": 612, "h": 792},
     "elements": [{"category": "title", "bbox": [x, y, w, h], "style": "bold", "text": "..."}]}

``style`` and ``text`` are omitted when absent.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .codec import Vocabulary
from .document import BBox, Document, Element, validate
from .errors import InvalidInputError, IngestionError

log = logging.getLogger(__name__)


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path, strict: bool = False) -> tuple[list[dict], list[str]]:
    """Read records; returns ``(records, diagnostics)``.

    Malformed lines are reported as ``"line N: ..."`` and skipped, or raise in strict mode.
    """
    records, problems = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not a JSON object")
            except ValueError as exc:
                msg = f"line {lineno}: {exc}"
                if strict:
                    raise InvalidInputError(f"{path}: {msg}") from exc
                problems.append(msg)
                continue
            records.append(rec)
    for p in problems:
        log.warning("%s: %s", path, p)
    return records, problems


def write_jsonl(path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec))
            fh.write("\n")


def record_to_document(rec: dict, vocab: Vocabulary) -> Document:
    """Convert a record using the vocabulary's category and style names."""
    try:
        canvas = rec["canvas"]
        els = []
        for i, e in enumerate(rec["elements"]):
            try:
                cat = vocab.category_id(e["category"])
            except KeyError:
                raise InvalidInputError(f"record {rec.get('id')!r} element {i}: unknown category {e['category']!r}")
            style = None
            if e.get("style") is not None and e["style"] in vocab.styles:
                style = vocab.style_id(e["style"])
            x, y, w, h = (float(v) for v in e["bbox"])
            els.append(Element(cat, BBox(x, y, w, h), style, e.get("text")))
        return Document(str(rec["id"]), float(canvas["w"]), float(canvas["h"]), tuple(els))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"malformed record {rec.get('id')!r}: {exc!r}") from exc


def _num(v: float):
    # keep integral coordinates integral in JSON
    return int(v) if float(v).is_integer() else float(v)


def document_to_record(doc: Document, vocab: Vocabulary) -> dict:
    els = []
    for el in doc.elements:
        e = {"category": vocab.categories[el.category].name, "bbox": [_num(v) for v in el.bbox.as_tuple()]}
        if el.style is not None:
            e["style"] = vocab.styles[el.style]
        if el.text is not None:
            e["text"] = el.text
        els.append(e)
    return {"id": doc.id, "canvas": {"w": _num(doc.canvas_w), "h": _num(doc.canvas_h)}, "elements": els}


def load_documents(path, vocab: Vocabulary, strict: bool = False) -> list[Document]:
    records, _ = read_jsonl(path, strict=strict)
    return [record_to_document(r, vocab) for r in records]


def corpus_stats(records: Sequence[dict]) -> dict:
    hist = Counter(e["category"] for r in records for e in r["elements"])
    n = len(records)
    total = sum(hist.values())
    return {
        "n_docs": n,
        "n_elements": total,
        "mean_elements_per_doc": total / n if n else 0.0,
        "element_histogram": dict(sorted(hist.items())),
    }


# ---------------------------------------------------------------------------
# COCO ingestion


def ingest_coco(coco, sidecar: Optional[dict] = None, category_map: Optional[dict] = None) -> tuple[list[dict], list[str]]:
    """Group COCO annotations into one record per image.

    ``coco`` is the parsed annotation JSON.  ``category_map`` maps COCO category ids (as strings
    or ints) to record category names; without one, the COCO category names are used as-is.
    ``sidecar`` maps annotation ids to ``{"text": ..., "font": ...}``.
    Returns ``(records, diagnostics)`` with records ordered by image id.
    """
    diagnostics = []
    coco_names = {int(c["id"]): c["name"] for c in coco.get("categories", [])}
    if category_map is None:
        mapping = dict(coco_names)
    else:
        mapping = {int(k): v for k, v in category_map.items()}
    used = {int(a["category_id"]) for a in coco.get("annotations", [])}
    unknown = sorted(used - set(mapping))
    if unknown:
        raise IngestionError(f"no category mapping for COCO category ids {unknown}", unknown)
    sidecar = {str(k): v for k, v in (sidecar or {}).items()}

    images = {int(im["id"]): im for im in coco.get("images", [])}
    by_image = defaultdict(list)
    for a in coco.get("annotations", []):
        iid = int(a["image_id"])
        if iid not in images:
            diagnostics.append(f"annotation {a.get('id')}: image {iid} missing, skipped")
            continue
        by_image[iid].append(a)

    clamped = 0
    records = []
    for iid in sorted(images):
        im = images[iid]
        W, H = float(im["width"]), float(im["height"])
        els = []
        for a in sorted(by_image.get(iid, []), key=lambda a: int(a.get("id", 0))):
            x, y, w, h = (float(v) for v in a["bbox"])
            x0, y0 = min(max(x, 0.0), W), min(max(y, 0.0), H)
            x1, y1 = min(max(x + w, 0.0), W), min(max(y + h, 0.0), H)
            if (x0, y0, x1, y1) != (x, y, x + w, y + h):
                clamped += 1
            if x1 - x0 <= 0 or y1 - y0 <= 0:
                diagnostics.append(f"annotation {a.get('id')}: empty after clamping, skipped")
                continue
            e = {"category": mapping[int(a["category_id"])], "bbox": [_num(x0), _num(y0), _num(x1 - x0), _num(y1 - y0)]}
            side = sidecar.get(str(a.get("id")))
            if side:
                if side.get("font"):
                    e["style"] = side["font"]
                if side.get("text"):
                    e["text"] = side["text"]
            els.append(e)
        rec_id = str(im.get("file_name") or iid)
        records.append({"id": rec_id, "canvas": {"w": _num(W), "h": _num(H)}, "elements": els})
    if clamped:
        diagnostics.append(f"clamped {clamped} out-of-canvas boxes")
        log.info("clamped %d out-of-canvas boxes", clamped)
    return records, diagnostics


# ---------------------------------------------------------------------------
# synthetic pages

DEFAULT_WORDS = (
    "model layout document results method data table figure analysis paper study section "
    "protein cell gene sample patient clinical review effect response level group value "
    "training network measure signal image region average control test rate structure "
    "function system process growth factor expression tissue treatment dose trial outcome"
).split()


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_docs: int = 100
    canvas: tuple = (612, 792)
    # relative weights of block types inside a column
    block_weights: dict = field(default_factory=lambda: {"text": 6, "list": 1, "table": 1, "figure": 1})
    title_percent: int = 70
    columns: tuple = (1, 2)
    blocks_per_column: tuple = (2, 4)
    words_per_block: tuple = (3, 10)
    words: tuple = tuple(DEFAULT_WORDS)
    margin: int = 48
    gap: int = 12

    def __post_init__(self):
        w = self.block_weights
        if any(v < 0 for v in w.values()) or not any(v > 0 for v in w.values()):
            raise InvalidInputError("block weights must be >= 0 with at least one positive")
        if not set(self.columns) <= {1, 2} or not self.columns:
            raise InvalidInputError("columns must be drawn from {1, 2}")
        if not self.words:
            raise InvalidInputError("word list is empty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas"] = list(self.canvas)
        d["columns"] = list(self.columns)
        d["blocks_per_column"] = list(self.blocks_per_column)
        d["words_per_block"] = list(self.words_per_block)
        d["words"] = list(self.words)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for k in ("canvas", "columns", "blocks_per_column", "words_per_block", "words"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# block type -> (min height, max height) in canvas units
_BLOCK_HEIGHTS = {"text": (40, 140), "list": (40, 100), "table": (80, 200), "figure": (90, 200)}


def _words(rng, cfg: SynthConfig) -> str:
    lo, hi = cfg.words_per_block
    n = int(rng.integers(lo, hi + 1))
    return " ".join(cfg.words[int(i)] for i in rng.integers(0, len(cfg.words), size=n))


def _synth_page(rng, cfg: SynthConfig, doc_id: str) -> dict:
    W, H = cfg.canvas
    m, gap = cfg.margin, cfg.gap
    kinds = sorted(cfg.block_weights)
    weights = [int(cfg.block_weights[k]) for k in kinds]
    total = sum(weights)
    els = []
    top = m
    if int(rng.integers(0, 100)) < cfg.title_percent:
        th = int(rng.integers(24, 49))
        els.append({"category": "title", "bbox": [m, top, W - 2 * m, th], "text": _words(rng, cfg).title()})
        top += th + gap
    ncols = int(cfg.columns[int(rng.integers(0, len(cfg.columns)))])
    gutter = 24
    col_w = (W - 2 * m - (ncols - 1) * gutter) // ncols
    for c in range(ncols):
        x = m + c * (col_w + gutter)
        y = top
        n_blocks = int(rng.integers(cfg.blocks_per_column[0], cfg.blocks_per_column[1] + 1))
        for _ in range(n_blocks):
            r = int(rng.integers(0, total))
            kind = kinds[-1]
            for k, wgt in zip(kinds, weights):
                if r < wgt:
                    kind = k
                    break
                r -= wgt
            lo, hi = _BLOCK_HEIGHTS[kind]
            h = int(rng.integers(lo, hi + 1))
            cap_h = int(rng.integers(16, 29)) if kind == "figure" else 0
            if y + h + (cap_h + 4 if cap_h else 0) > H - m:
                break
            if kind == "figure":
                els.append({"category": "figure", "bbox": [x, y, col_w, h]})
                y += h + 4
                els.append({"category": "text", "bbox": [x, y, col_w, cap_h], "text": "Figure " + _words(rng, cfg)})
                y += cap_h + gap
            else:
                els.append({"category": kind, "bbox": [x, y, col_w, h], "text": _words(rng, cfg)})
                y += h + gap
    return {"id": doc_id, "canvas": {"w": W, "h": H}, "elements": els}


def synth_generate(cfg: SynthConfig) -> list[dict]:
    """Procedural pages: optional title band, 1-2 columns of blocks, figure+caption pairs.

    All geometry is integer-valued and drawn from a PCG64 stream seeded by ``cfg.seed``.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    return [_synth_page(rng, cfg, f"synth-{cfg.seed}-{i:05d}") for i in range(cfg.n_docs)]


# ---------------------------------------------------------------------------
# splits


def split(records: Sequence[dict], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, list, list]:
    """Deterministic shuffled train/val/test partition."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise InvalidInputError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = [r["id"] for r in records]
    dupes = sorted(k for k, v in Counter(ids).items() if v > 1)
    if dupes:
        raise InvalidInputError(f"duplicate record ids: {dupes[:10]}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * ratios[0]))
    n_val = min(int(round(n * ratios[1])), n - n_train)
    shuffled = [records[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


def record_problems(rec: dict, vocab: Vocabulary, max_elements: int = 128) -> list[str]:
    try:
        doc = record_to_document(rec, vocab)
    except InvalidInputError as exc:
        return [str(exc)]
    return validate(doc, vocab.categories, max_elements)
