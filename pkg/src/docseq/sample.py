"""Grammar-constrained decoding plus the two generation tasks: completion and text-box placement."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .codec import (
    EOS,
    SOS,
    Phase,
    START,
    Vocabulary,
    allowed_mask,
    decode,
    encode_elements,
    fold_grammar,
    grammar_step,
    normalize,
)
from .document import Document
from .errors import ContextOverflowError, InvalidInputError, InvalidPromptError, ParseError
from .net import IncrementalDecoder, ModelConfig


@dataclass(frozen=True)
class SampleConfig:
    temperature: float = 1.0
    top_k: int = 0
    top_p: float = 1.0
    max_new_tokens: Optional[int] = None  # None: until EOS or the context is full
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidInputError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise InvalidInputError("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise InvalidInputError("top_k must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    params: dict
    config: ModelConfig
    vocab: Vocabulary

    @classmethod
    def from_checkpoint(cls, ck) -> "Model":
        return cls(ck.params, ck.model_config, Vocabulary.from_description(ck.vocab))


def sample_next(logits, mask, cfg: SampleConfig, rng: np.random.Generator) -> int:
    """Draw one token id from ``logits`` restricted to ``mask``.

    Order: hard mask, temperature, top-k, top-p, categorical draw.  Temperature 0 is argmax
    over the allowed ids (ties go to the lowest id).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidInputError("grammar mask allows no token")
    z = np.where(mask, np.asarray(logits, dtype=np.float64), -np.inf)
    if cfg.temperature == 0:
        return int(np.argmax(z))
    z = z / cfg.temperature
    allowed = np.flatnonzero(mask)
    # stable descending order: equal logits keep ascending id order
    order = allowed[np.argsort(-z[allowed], kind="stable")]
    if cfg.top_k > 0:
        order = order[:cfg.top_k]
    zs = z[order]
    p = np.exp(zs - zs[0])
    p /= p.sum()
    if cfg.top_p < 1.0:
        keep = int(np.searchsorted(np.cumsum(p), cfg.top_p) + 1)
        order, p = order[:keep], p[:keep]
        p = p / p.sum()
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return int(order[min(i, len(order) - 1)])


class _Session:
    """Token-by-token decoding state: incremental model, grammar state, emitted tokens."""

    def __init__(self, model: Model, cfg: SampleConfig):
        self.model = model
        self.cfg = cfg
        self.dec = IncrementalDecoder(model.params, model.config)
        self.state = START
        self.tokens: list[int] = []
        self.logits = None
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))

    @property
    def full(self) -> bool:
        return len(self.tokens) >= self.model.config.context_length

    def feed(self, token: int) -> None:
        nxt = grammar_step(self.state, token, self.model.vocab)
        if nxt.phase == Phase.REJECT:
            raise ParseError(len(self.tokens), [], f"forced token {token} rejected by the grammar")
        if self.full:
            raise ContextOverflowError(f"sequence exceeds context {self.model.config.context_length}")
        self.state = nxt
        self.tokens.append(int(token))
        if nxt.phase != Phase.DONE:
            self.logits = self.dec.step(int(token))

    def sample(self) -> int:
        tok = sample_next(self.logits, allowed_mask(self.state, self.model.vocab), self.cfg, self.rng)
        self.feed(tok)
        return tok


def generate(model: Model, prompt: Sequence[int], cfg: SampleConfig) -> list[int]:
    """Extend ``prompt`` under the grammar until EOS or until the token budget (or context) runs out."""
    prompt = [int(t) for t in prompt]
    try:
        fold_grammar(prompt, model.vocab)
    except ParseError as exc:
        raise InvalidPromptError(f"prompt rejected by the grammar: {exc}") from exc
    if not prompt:
        raise InvalidPromptError("prompt must start with SOS")
    if len(prompt) > model.config.context_length:
        raise ContextOverflowError(f"prompt of {len(prompt)} tokens exceeds context {model.config.context_length}")
    s = _Session(model, cfg)
    for t in prompt:
        s.feed(t)
    budget = cfg.max_new_tokens
    n_new = 0
    while s.state.phase != Phase.DONE and not s.full and (budget is None or n_new < budget):
        s.sample()
        n_new += 1
    return s.tokens


def _element_groups(doc: Document, vocab: Vocabulary) -> list[list[int]]:
    return encode_elements(doc, vocab)


def complete_document(model: Model, doc: Document, k: int, cfg: SampleConfig) -> Document:
    """Keep the first ``k`` reading-order elements of ``doc`` and generate the rest."""
    groups = _element_groups(doc, model.vocab)
    if not 0 <= k <= len(groups):
        raise InvalidInputError(f"k={k} outside [0, {len(groups)}]")
    prompt = [SOS] + [t for g in groups[:k] for t in g]
    if len(prompt) > model.config.context_length:
        raise ContextOverflowError(f"prompt of {len(prompt)} tokens exceeds context {model.config.context_length}")
    tokens = generate(model, prompt, cfg)
    out, _ = decode(tokens, model.vocab, doc.canvas_w, doc.canvas_h, doc.id)
    return out


def place_text_boxes(model: Model, doc: Document, targets: Sequence[int], mode: str, cfg: SampleConfig) -> Document:
    """Regenerate everything but the category of each of the ``targets`` (reading-order indices).

    Each target keeps its category token; every other element is forced to its ground-truth
    tokens.  Targets are placed one after another, so later placements see earlier ones.
    The output keeps the input's reading-order element indexing.
    """
    vocab = model.vocab
    canon = normalize(doc, vocab)
    groups = _element_groups(doc, vocab)
    targets = sorted(set(int(t) for t in targets))
    if mode not in ("single", "multiple"):
        raise InvalidInputError(f"mode must be 'single' or 'multiple', got {mode!r}")
    if mode == "single" and len(targets) != 1:
        raise InvalidInputError("single mode needs exactly one target")
    for t in targets:
        if not 0 <= t < len(groups):
            raise InvalidInputError(f"target index {t} outside [0, {len(groups)})")
        cat = canon.elements[t].category
        if cat >= vocab.n_categories:
            raise InvalidInputError(f"category {cat} of target {t} is not in the vocabulary")
        if not vocab.categories[cat].textual:
            raise InvalidInputError(f"target {t} has non-textual category {vocab.categories[cat].name!r}")
    s = _Session(model, cfg)
    s.feed(SOS)
    for i, g in enumerate(groups):
        if i in targets:
            s.feed(g[0])
            while s.state.phase != Phase.CAT_OR_EOS:
                if s.full:
                    raise ContextOverflowError("placement ran past the model context")
                s.sample()
        else:
            for t in g:
                s.feed(t)
    s.feed(EOS)
    out, _ = decode(s.tokens, vocab, doc.canvas_w, doc.canvas_h, doc.id)
    return out
