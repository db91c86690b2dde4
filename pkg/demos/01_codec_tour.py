#!/usr/bin/env python3
"""01_codec_tour.py

How a page becomes a token sequence and back.

Every element is written as a category token, four 8-bit coordinate bins, an optional style
token and then its text as raw UTF-8 bytes (or NULL), closed by EOT.  A small state machine
knows which tokens may come next, which is what keeps sampling well-formed later on.
"""

from docseq.codec import START, allowed_mask, build_vocab, decode, encode, grammar_step, kind_of
from docseq.document import PUBLAYNET_CATEGORIES, BBox, Document, Element

vocab = build_vocab(PUBLAYNET_CATEGORIES)
print(f"vocabulary: {vocab.size} tokens, {vocab.n_categories} categories, text limit {vocab.t_max} bytes")

page = Document("demo", 612, 792, (
    Element(2, BBox(48, 300, 250, 120), None, "first item"),   # list, listed out of reading order
    Element(1, BBox(48, 48, 516, 36), None, "Résumé"),           # title with a two-byte character
    Element(4, BBox(314, 300, 250, 180)),                        # figure: never carries text
))

tokens = encode(page, vocab)
print(f"\n{len(tokens)} tokens:")
for t in tokens:
    kind, value = kind_of(t, vocab)
    print(f"  {t:4d}  {kind.name:<9} {value}")

# The codec puts elements in reading order and snaps boxes to bin centres, so the decoded
# page is the "normalized" version of the input rather than the input itself.
back, truncated = decode(tokens, vocab, page.canvas_w, page.canvas_h, page.id)
for before, after in zip(sorted(page.elements, key=lambda e: e.bbox.y), back.elements):
    print(f"{vocab.categories[after.category].name:>6}: {before.bbox.as_tuple()} -> "
          f"{tuple(round(v, 2) for v in after.bbox.as_tuple())} text={after.text!r}")

# Walk the grammar and count the legal continuations at each step.
state = START
counts = []
for t in tokens:
    counts.append(int(allowed_mask(state, vocab).sum()))
    state = grammar_step(state, t, vocab)
print("\nlegal next tokens per position:", counts)
