"""Desk-scale experiments shared by the acceptance tests and the demo scripts.

Every function here is deterministic given its arguments, so the test suite and the demo
scripts reproduce the same numbers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .codec import SOS, TokenKind, Vocabulary, build_vocab, decode, encode, fold_grammar, kind_of, normalize
from .corpus import SynthConfig, record_to_document, split, synth_generate
from .document import PUBLAYNET_CATEGORIES, Document
from .errors import InvalidInputError, ParseError
from .metrics import MetricsReport, evaluate, m_iou
from .net import ModelConfig, init_params
from .sample import Model, SampleConfig, complete_document, generate
from .train import OptimizerState, TrainConfig, train

MEMORIZATION_SYNTH = SynthConfig(seed=0, n_docs=32, words_per_block=(1, 2), blocks_per_column=(1, 2), title_percent=100)
DESK_MODEL = dict(context_length=256, d_model=64, n_layers=2, n_heads=4)
GREEDY = SampleConfig(temperature=0.0)


def desk_vocab(t_max: int = 64) -> Vocabulary:
    return build_vocab(PUBLAYNET_CATEGORIES, t_max=t_max)


def synth_documents(cfg: SynthConfig, vocab: Vocabulary) -> list[Document]:
    return [record_to_document(r, vocab) for r in synth_generate(cfg)]


def strip_text(doc: Document) -> Document:
    """The layout-only view of a document: every element loses its text."""
    return doc.with_elements(replace(e, text=None) for e in doc.elements)


@dataclass
class TrainedModel:
    model: Model
    losses: list
    seconds: float
    train_config: TrainConfig

    def first_step_below(self, threshold: float) -> Optional[int]:
        for i, loss in enumerate(self.losses, 1):
            if loss < threshold:
                return i
        return None


def fit(docs: Sequence[Document], vocab: Vocabulary, train_cfg: TrainConfig,
        model_overrides: Optional[dict] = None, init_seed: int = 0) -> TrainedModel:
    """Encode ``docs``, initialize a desk-sized model and train it for ``total_steps``."""
    mcfg = ModelConfig(vocab.size, **{**DESK_MODEL, **(model_overrides or {})})
    seqs = [encode(d, vocab) for d in docs]
    params = init_params(mcfg, init_seed)
    opt = OptimizerState.zeros_like(params)
    t0 = time.perf_counter()
    losses = train(params, opt, mcfg, train_cfg, seqs)
    return TrainedModel(Model(params, mcfg, vocab), losses, time.perf_counter() - t0, train_cfg)


def smoothed_windows(losses: Sequence[float], window: int = 100) -> list[float]:
    """Means over consecutive non-overlapping windows (a trailing partial window is dropped)."""
    n = len(losses) // window
    return [float(np.mean(losses[i * window:(i + 1) * window])) for i in range(n)]


# ---------------------------------------------------------------------------
# completion


def completion_prefix(doc: Document) -> int:
    return len(doc.elements) // 2


def complete_corpus(model: Model, docs: Sequence[Document], cfg: SampleConfig = GREEDY) -> list[Document]:
    return [complete_document(model, d, completion_prefix(d), cfg) for d in docs]


def suffix_iou(generated: Document, reference: Document, k: int) -> float:
    """Matched-element IoU between the generated and the ground-truth elements after the prefix."""
    gen = generated.with_elements(generated.elements[k:])
    ref = reference.with_elements(reference.elements[k:])
    return m_iou(gen, ref)


@dataclass
class MemorizationResult:
    trained: TrainedModel
    suffix_ious: list
    completions: list

    @property
    def mean_suffix_iou(self) -> float:
        return float(np.mean(self.suffix_ious))


def memorization(steps: int = 600, synth: SynthConfig = MEMORIZATION_SYNTH) -> MemorizationResult:
    """Overfit a 32-page corpus, then complete every page from its first half."""
    vocab = desk_vocab()
    docs = [normalize(d, vocab) for d in synth_documents(synth, vocab)]
    tcfg = TrainConfig(lr=3e-3, warmup_steps=50, total_steps=steps, batch_size=32, seed=0)
    trained = fit(docs, vocab, tcfg)
    completions = complete_corpus(trained.model, docs)
    ious = [suffix_iou(g, d, completion_prefix(d)) for g, d in zip(completions, docs)]
    return MemorizationResult(trained, ious, completions)


# ---------------------------------------------------------------------------
# grammar safety


@dataclass
class SafetyResult:
    n: int
    n_parsed: int = 0
    n_truncated: int = 0
    n_bins_in_range: int = 0
    n_text_valid: int = 0
    failures: list = field(default_factory=list)


def _valid_text(text) -> bool:
    if text is None:
        return True
    try:
        text.encode("utf-8")
    except UnicodeEncodeError:
        return False
    return True


def grammar_safety(model: Model, seeds: Sequence[int], temperature: float = 1.0) -> SafetyResult:
    """Sample from [SOS] once per seed and count the outputs that break the grammar or hold invalid text."""
    vocab = model.vocab
    res = SafetyResult(len(seeds))
    for seed in seeds:
        toks = generate(model, [SOS], SampleConfig(temperature=temperature, seed=int(seed)))
        try:
            fold_grammar(toks, vocab)
            doc, truncated = decode(toks, vocab, 612, 792)
        except (ParseError, InvalidInputError) as exc:
            res.failures.append((int(seed), repr(exc)))
            continue
        res.n_parsed += 1
        res.n_truncated += int(truncated)
        bins = [v for kind, v in (kind_of(t, vocab) for t in toks) if kind == TokenKind.COORD]
        res.n_bins_in_range += int(all(0 <= b <= 255 for b in bins))
        res.n_text_valid += int(all(_valid_text(e.text) for e in doc.elements))
    return res


# ---------------------------------------------------------------------------
# text ablation


ABLATION_SYNTH = SynthConfig(seed=1, n_docs=240, words_per_block=(1, 3), blocks_per_column=(1, 3))


@dataclass
class AblationResult:
    with_text: MetricsReport
    layout_only: MetricsReport
    seconds: float
    losses_text: list
    losses_layout: list

    def relative(self, key: str) -> float:
        a = getattr(self.with_text, key)
        b = getattr(self.layout_only, key)
        if b == 0:
            return 0.0 if a == 0 else float("inf")
        return a / b - 1.0

    def passes(self, tolerance: float = 0.10) -> bool:
        return all(self.relative(k) <= tolerance for k in ("alignment", "overlap"))

    def table(self) -> str:
        rows = [("layout+text", self.with_text), ("layout-only", self.layout_only)]
        head = f"{'model':<12} {'mIoU':>8} {'FID*':>8} {'Align':>8} {'Over':>8}"
        lines = [head]
        for name, r in rows:
            lines.append(f"{name:<12} {r.m_iou:>8.4g} {r.frechet:>8.4g} {r.alignment:>8.3g} {r.overlap:>8.4g}")
        return "\n".join(lines)


def text_ablation(steps: int = 1500, synth: SynthConfig = ABLATION_SYNTH, seed: int = 0) -> AblationResult:
    """Train layout+text and layout-only models under one budget; compare completions.

    Both models share architecture, initialization seed, step count, batch schedule and
    optimizer settings.  They differ only in whether element text is present in the training
    and prompt sequences.  Completion uses greedy decoding from the first half of each held-out
    page; Align and Over are measured on the completed pages.
    """
    vocab = desk_vocab()
    records = synth_generate(synth)
    train_recs, _, test_recs = split(records, (0.8, 0.0, 0.2), seed=seed)
    train_docs = [normalize(record_to_document(r, vocab), vocab) for r in train_recs]
    test_docs = [normalize(record_to_document(r, vocab), vocab) for r in test_recs]
    tcfg = TrainConfig(lr=3e-3, warmup_steps=50, total_steps=steps, batch_size=32, seed=seed)
    t0 = time.perf_counter()
    reports, curves = [], []
    for strip in (False, True):
        tr = [strip_text(d) for d in train_docs] if strip else train_docs
        te = [strip_text(d) for d in test_docs] if strip else test_docs
        trained = fit(tr, vocab, tcfg, init_seed=seed)
        gen = complete_corpus(trained.model, te)
        reports.append(evaluate(gen, te, "completion", vocab.n_categories))
        curves.append(trained.losses)
    return AblationResult(reports[0], reports[1], time.perf_counter() - t0, curves[0], curves[1])


__all__ = [
    "ABLATION_SYNTH",
    "MEMORIZATION_SYNTH",
    "AblationResult",
    "MemorizationResult",
    "SafetyResult",
    "TrainedModel",
    "complete_corpus",
    "desk_vocab",
    "fit",
    "grammar_safety",
    "memorization",
    "smoothed_windows",
    "strip_text",
    "suffix_iou",
    "text_ablation",
]
