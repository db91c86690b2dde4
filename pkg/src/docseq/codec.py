"""Token vocabulary and sequence grammar, with document <-> token sequence conversion.

Token id layout (fixed)::

    0 PAD | 1 SOS | 2 EOS | 3 NULL | 4 EOT
    [5, 5+C)                 category tokens
    [5+C, 5+C+256)           coordinate bins, shared by x/y/w/h
    [.., .. + Sty)           style tokens
    [.., .. + 256)           raw UTF-8 text bytes

Per element the sequence carries ``CAT X Y W H [STYLE|NULL] (BYTE+ | NULL) EOT``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .document import (
    N_BINS,
    Document,
    Element,
    ElementCategory,
    QuantBBox,
    canonical_order,
    dequantize_bbox,
    make_categories,
    quantize_bbox,
)
from .errors import ConfigError, EncodingError, InvalidInputError, ParseError

PAD, SOS, EOS, NULL, EOT = 0, 1, 2, 3, 4
N_SPECIAL = 5
N_TEXT_BYTES = 256
DEFAULT_T_MAX = 64


class TokenKind(enum.IntEnum):
    PAD = 0
    SOS = 1
    EOS = 2
    NULL = 3
    EOT = 4
    CAT = 5
    COORD = 6
    STYLE = 7
    TEXTBYTE = 8


_SPECIAL_KINDS = (TokenKind.PAD, TokenKind.SOS, TokenKind.EOS, TokenKind.NULL, TokenKind.EOT)


@dataclass(frozen=True)
class Vocabulary:
    categories: tuple[ElementCategory, ...]
    styles: tuple[str, ...] = ()
    style_enabled: bool = False
    t_max: int = DEFAULT_T_MAX

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def n_styles(self) -> int:
        return len(self.styles)

    @property
    def cat_offset(self) -> int:
        return N_SPECIAL

    @property
    def coord_offset(self) -> int:
        return N_SPECIAL + self.n_categories

    @property
    def style_offset(self) -> int:
        return self.coord_offset + N_BINS

    @property
    def text_offset(self) -> int:
        return self.style_offset + self.n_styles

    @property
    def size(self) -> int:
        return self.text_offset + N_TEXT_BYTES

    def value_range(self, kind: TokenKind) -> int:
        return {
            TokenKind.CAT: self.n_categories,
            TokenKind.COORD: N_BINS,
            TokenKind.STYLE: self.n_styles,
            TokenKind.TEXTBYTE: N_TEXT_BYTES,
        }.get(kind, 1)

    def category_id(self, name: str) -> int:
        for c in self.categories:
            if c.name == name:
                return c.id
        raise KeyError(name)

    def style_id(self, name: str) -> int:
        return self.styles.index(name)

    def describe(self) -> dict:
        """JSON-serializable description, enough to rebuild the vocabulary."""
        return {
            "categories": [c.name for c in self.categories],
            "non_textual": [c.name for c in self.categories if not c.textual],
            "styles": list(self.styles),
            "style_enabled": self.style_enabled,
            "t_max": self.t_max,
            "size": self.size,
        }

    @classmethod
    def from_description(cls, desc: dict) -> "Vocabulary":
        return build_vocab(desc["categories"], desc.get("styles", ()), desc.get("style_enabled", False),
                           non_textual=desc.get("non_textual", ()), t_max=desc.get("t_max", DEFAULT_T_MAX))


def build_vocab(categories: Sequence, styles: Sequence[str] = (), style_enabled: bool = False, *,
                non_textual: Sequence[str] = (), t_max: int = DEFAULT_T_MAX) -> Vocabulary:
    """``categories`` may be names or ready-made :class:`ElementCategory` objects."""
    cats = list(categories)
    if cats and isinstance(cats[0], ElementCategory):
        non_textual = [c.name for c in cats if not c.textual]
        cats = [c.name for c in cats]
    if not 1 <= len(cats) <= 64:
        raise ConfigError(f"category count must be in [1, 64], got {len(cats)}")
    styles = tuple(styles)
    if len(styles) > 64:
        raise ConfigError(f"style count must be in [0, 64], got {len(styles)}")
    if len(set(styles)) != len(styles) or any(not s for s in styles):
        raise ConfigError("style names must be unique and non-empty")
    if style_enabled and not styles:
        raise ConfigError("style_enabled requires at least one style")
    if t_max < 4:
        # one UTF-8 codepoint must always fit
        raise ConfigError("t_max must be at least 4 bytes")
    return Vocabulary(make_categories(cats, non_textual), styles, bool(style_enabled), int(t_max))


def token_of(kind: TokenKind, value: int, vocab: Vocabulary) -> int:
    kind = TokenKind(kind)
    if kind in _SPECIAL_KINDS:
        if value != 0:
            raise InvalidInputError(f"{kind.name} carries no value, got {value}")
        return int(kind)
    n = vocab.value_range(kind)
    if not 0 <= value < n:
        raise InvalidInputError(f"{kind.name} value {value} outside [0, {n})")
    base = {
        TokenKind.CAT: vocab.cat_offset,
        TokenKind.COORD: vocab.coord_offset,
        TokenKind.STYLE: vocab.style_offset,
        TokenKind.TEXTBYTE: vocab.text_offset,
    }[kind]
    return base + int(value)


def kind_of(token: int, vocab: Vocabulary) -> tuple[TokenKind, int]:
    t = int(token)
    if t < 0 or t >= vocab.size:
        raise InvalidInputError(f"token id {t} outside [0, {vocab.size})")
    if t < N_SPECIAL:
        return TokenKind(t), 0
    if t < vocab.coord_offset:
        return TokenKind.CAT, t - vocab.cat_offset
    if t < vocab.style_offset:
        return TokenKind.COORD, t - vocab.coord_offset
    if t < vocab.text_offset:
        return TokenKind.STYLE, t - vocab.style_offset
    return TokenKind.TEXTBYTE, t - vocab.text_offset


@lru_cache(maxsize=64)
def _kind_table(vocab: Vocabulary) -> np.ndarray:
    table = np.empty(vocab.size, dtype=np.int8)
    table[:N_SPECIAL] = np.arange(N_SPECIAL)
    table[vocab.cat_offset:vocab.coord_offset] = TokenKind.CAT
    table[vocab.coord_offset:vocab.style_offset] = TokenKind.COORD
    table[vocab.style_offset:vocab.text_offset] = TokenKind.STYLE
    table[vocab.text_offset:] = TokenKind.TEXTBYTE
    table.setflags(write=False)
    return table


# ---------------------------------------------------------------------------
# grammar


class Phase(enum.IntEnum):
    START = 0
    CAT_OR_EOS = 1
    X = 2
    Y = 3
    W = 4
    H = 5
    STYLE = 6
    TEXT_OR_EOT = 7
    EOT = 8  # NULL already emitted in the text slot
    DONE = 9
    REJECT = 10


class GrammarState(NamedTuple):
    phase: Phase = Phase.START
    count: int = 0  # text bytes emitted for the current element
    textual: bool = True  # whether the current element's category may carry text


START = GrammarState()
REJECT = GrammarState(Phase.REJECT)


def _allowed_kinds(state: GrammarState, vocab: Vocabulary) -> tuple:
    p = state.phase
    if p == Phase.START:
        return (TokenKind.SOS,)
    if p == Phase.CAT_OR_EOS:
        return (TokenKind.CAT, TokenKind.EOS)
    if p in (Phase.X, Phase.Y, Phase.W, Phase.H):
        return (TokenKind.COORD,)
    if p == Phase.STYLE:
        return (TokenKind.STYLE, TokenKind.NULL)
    if p == Phase.TEXT_OR_EOT:
        if state.count == 0:
            return (TokenKind.TEXTBYTE, TokenKind.NULL) if state.textual else (TokenKind.NULL,)
        if state.count >= vocab.t_max:
            return (TokenKind.EOT,)
        return (TokenKind.TEXTBYTE, TokenKind.EOT)
    if p == Phase.EOT:
        return (TokenKind.EOT,)
    return ()


def expected_kinds(state: GrammarState, vocab: Vocabulary) -> tuple:
    return _allowed_kinds(state, vocab)


def grammar_step(state: GrammarState, token: int, vocab: Vocabulary) -> GrammarState:
    """Advance the grammar by one token; illegal tokens yield :data:`REJECT`."""
    if state.phase in (Phase.DONE, Phase.REJECT):
        return REJECT
    if not 0 <= token < vocab.size:
        return REJECT
    kind, value = kind_of(token, vocab)
    if kind not in _allowed_kinds(state, vocab):
        return REJECT
    p = state.phase
    if p == Phase.START:
        return GrammarState(Phase.CAT_OR_EOS)
    if p == Phase.CAT_OR_EOS:
        if kind == TokenKind.EOS:
            return GrammarState(Phase.DONE)
        return GrammarState(Phase.X, 0, vocab.categories[value].textual)
    if p in (Phase.X, Phase.Y, Phase.W):
        return state._replace(phase=Phase(p + 1))
    if p == Phase.H:
        return state._replace(phase=Phase.STYLE if vocab.style_enabled else Phase.TEXT_OR_EOT)
    if p == Phase.STYLE:
        return state._replace(phase=Phase.TEXT_OR_EOT)
    if p == Phase.TEXT_OR_EOT:
        if kind == TokenKind.NULL:
            return state._replace(phase=Phase.EOT)
        if kind == TokenKind.TEXTBYTE:
            return state._replace(count=state.count + 1)
        return GrammarState(Phase.CAT_OR_EOS)
    if p == Phase.EOT:
        return GrammarState(Phase.CAT_OR_EOS)
    return REJECT


@lru_cache(maxsize=1024)
def _mask_for(vocab: Vocabulary, kinds: tuple) -> np.ndarray:
    table = _kind_table(vocab)
    mask = np.isin(table, np.array([int(k) for k in kinds], dtype=np.int8))
    mask.setflags(write=False)
    return mask


def allowed_mask(state: GrammarState, vocab: Vocabulary) -> np.ndarray:
    """Boolean mask over the vocabulary marking the tokens legal in ``state`` (read-only)."""
    if state.phase in (Phase.DONE, Phase.REJECT):
        raise InvalidInputError(f"no tokens are legal after {state.phase.name}")
    return _mask_for(vocab, _allowed_kinds(state, vocab))


def fold_grammar(tokens: Iterable[int], vocab: Vocabulary, state: GrammarState = START) -> GrammarState:
    """Run the grammar over ``tokens``; raises :class:`ParseError` at the first rejected token."""
    for pos, t in enumerate(tokens):
        nxt = grammar_step(state, int(t), vocab)
        if nxt.phase == Phase.REJECT:
            raise ParseError(pos, [k.name for k in _allowed_kinds(state, vocab)])
        state = nxt
    return state


# ---------------------------------------------------------------------------
# encode / decode


def truncate_utf8(text: str, limit: int) -> bytes:
    """UTF-8 bytes of ``text`` cut to at most ``limit`` bytes on a codepoint boundary."""
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return raw
    cut = limit
    while cut > 0 and (raw[cut] & 0xC0) == 0x80:
        cut -= 1
    return raw[:cut]


def _element_tokens(el: Element, q: QuantBBox, vocab: Vocabulary) -> list[int]:
    if not 0 <= el.category < vocab.n_categories:
        raise EncodingError(f"category id {el.category} not in vocabulary (C={vocab.n_categories})")
    cat = vocab.categories[el.category]
    c0 = vocab.coord_offset
    toks = [vocab.cat_offset + el.category, c0 + q.xq, c0 + q.yq, c0 + q.wq, c0 + q.hq]
    if vocab.style_enabled:
        if el.style is None:
            toks.append(NULL)
        elif 0 <= el.style < vocab.n_styles:
            toks.append(vocab.style_offset + el.style)
        else:
            raise EncodingError(f"style id {el.style} not in vocabulary")
    raw = truncate_utf8(el.text, vocab.t_max) if el.text else b""
    if raw and not cat.textual:
        raise EncodingError(f"text on non-textual category {cat.name!r}")
    if raw:
        toks.extend(vocab.text_offset + b for b in raw)
    else:
        toks.append(NULL)
    toks.append(EOT)
    return toks


def encode_elements(doc: Document, vocab: Vocabulary) -> list[list[int]]:
    """Per-element token groups of the canonically ordered document (no SOS/EOS)."""
    doc = canonical_order(doc)
    out = []
    for el in doc.elements:
        q = quantize_bbox(el.bbox, doc.canvas_w, doc.canvas_h)
        out.append(_element_tokens(el, q, vocab))
    return out


def encode(doc: Document, vocab: Vocabulary, max_len: Optional[int] = None) -> list[int]:
    """Serialize ``doc`` (reading order, quantized) to token ids."""
    seq = [SOS]
    for group in encode_elements(doc, vocab):
        seq.extend(group)
    seq.append(EOS)
    if max_len is not None and len(seq) > max_len:
        raise EncodingError(f"sequence too long: {len(seq)} tokens > context {max_len}")
    return seq


def encoded_length(doc: Document, vocab: Vocabulary) -> int:
    """Closed-form token count of ``encode(doc)``."""
    n = 2
    for el in doc.elements:
        text_len = len(truncate_utf8(el.text, vocab.t_max)) if el.text else 1
        n += 5 + int(vocab.style_enabled) + text_len + 1
    return n


def normalize(doc: Document, vocab: Vocabulary) -> Document:
    """The document exactly as it survives an encode/decode round trip."""
    doc = canonical_order(doc)
    els = []
    for el in doc.elements:
        q = quantize_bbox(el.bbox, doc.canvas_w, doc.canvas_h)
        raw = truncate_utf8(el.text, vocab.t_max) if el.text else b""
        els.append(Element(
            el.category,
            dequantize_bbox(q, doc.canvas_w, doc.canvas_h),
            el.style if vocab.style_enabled else None,
            raw.decode("utf-8") if raw else None,
        ))
    return doc.with_elements(els)


def decode(tokens: Sequence[int], vocab: Vocabulary, canvas_w: float, canvas_h: float,
           doc_id: str = "") -> tuple[Document, bool]:
    """Parse tokens back into a document.

    Returns ``(document, truncated)``; ``truncated`` is set when EOS never arrives, in which case
    any trailing incomplete element is dropped.  Invalid UTF-8 is repaired with U+FFFD.
    """
    state = START
    elements = []
    cur = None
    pos = 0
    for pos, t in enumerate(tokens):
        t = int(t)
        if state.phase == Phase.DONE:
            if t != PAD:
                raise ParseError(pos, ["PAD"], f"token {t} after EOS at position {pos}")
            continue
        nxt = grammar_step(state, t, vocab)
        if nxt.phase == Phase.REJECT:
            raise ParseError(pos, [k.name for k in _allowed_kinds(state, vocab)])
        kind, value = kind_of(t, vocab)
        p = state.phase
        if p == Phase.CAT_OR_EOS and kind == TokenKind.CAT:
            cur = {"cat": value, "q": [], "style": None, "text": bytearray()}
        elif kind == TokenKind.COORD:
            cur["q"].append(value)
        elif kind == TokenKind.STYLE:
            cur["style"] = value
        elif kind == TokenKind.TEXTBYTE:
            cur["text"].append(value)
        elif kind == TokenKind.EOT:
            q = QuantBBox(*cur["q"])
            text = bytes(cur["text"]).decode("utf-8", errors="replace") if cur["text"] else None
            elements.append(Element(cur["cat"], dequantize_bbox(q, canvas_w, canvas_h), cur["style"], text))
            cur = None
        state = nxt
    if state.phase == Phase.START:
        raise ParseError(len(tokens), ["SOS"], "empty token sequence")
    truncated = state.phase != Phase.DONE
    return Document(doc_id, canvas_w, canvas_h, tuple(elements)), truncated


# ---------------------------------------------------------------------------
# debug text format: one integer per line


def write_tokens(path, tokens: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tokens:
            fh.write(f"{int(t)}\n")


def read_tokens(path) -> list[int]:
    with open(path, encoding="utf-8") as fh:
        return [int(line) for line in fh if line.strip()]
