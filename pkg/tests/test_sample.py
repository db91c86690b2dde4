import numpy as np
import pytest

from docseq.codec import EOS, SOS, START, Phase, allowed_mask, decode, encode, fold_grammar, grammar_step, normalize
from docseq.codec import build_vocab
from docseq.document import PUBLAYNET_CATEGORIES, BBox, Document, Element
from docseq.errors import ContextOverflowError, InvalidInputError, InvalidPromptError
from docseq.net import ModelConfig, init_params
from docseq.sample import Model, SampleConfig, complete_document, generate, place_text_boxes, sample_next

from conftest import random_document


@pytest.fixture(scope="module")
def model():
    vocab = build_vocab(PUBLAYNET_CATEGORIES, t_max=8)
    cfg = ModelConfig(vocab.size, context_length=96, d_model=32, n_layers=2, n_heads=2)
    return Model(init_params(cfg, 0), cfg, vocab)


def small_doc(vocab):
    els = (Element(1, BBox(48, 48, 516, 30), None, "Title"),
           Element(0, BBox(48, 100, 250, 120), None, "body"),
           Element(4, BBox(314, 100, 250, 120)),
           Element(0, BBox(48, 240, 250, 60), None, "more"))
    return Document("p", 612, 792, els)


# ---------------------------------------------------------------- sample_next


def test_temperature_zero_is_masked_argmax():
    logits = np.array([0.0, 5.0, 3.0, 3.0, -1.0])
    mask = np.array([True, False, True, True, True])
    rng = np.random.default_rng(0)
    assert sample_next(logits, mask, SampleConfig(temperature=0), rng) == 2  # tie -> lowest id
    assert sample_next(logits, mask, SampleConfig(top_k=1), rng) == 2
    with pytest.raises(InvalidInputError):
        sample_next(logits, np.zeros(5, bool), SampleConfig(), rng)


def test_masked_tokens_never_drawn():
    logits = np.array([10.0, 0.0, 0.0, 9.0, 0.5, 0.1])
    mask = np.array([False, True, True, False, True, True])
    rng = np.random.default_rng(1)
    cfg = SampleConfig(temperature=2.0)
    draws = np.array([sample_next(logits, mask, cfg, rng) for _ in range(100_000)])
    assert not np.isin(draws, [0, 3]).any()
    # frequencies follow the renormalized softmax over allowed ids
    p = np.exp(logits[mask] / 2.0)
    p /= p.sum()
    freq = np.bincount(draws, minlength=6)[mask] / len(draws)
    assert np.max(np.abs(freq - p)) < 0.01


def test_top_k_and_top_p_restrict_support():
    logits = np.log(np.array([0.5, 0.3, 0.15, 0.05]))
    mask = np.ones(4, bool)
    rng = np.random.default_rng(2)
    assert {sample_next(logits, mask, SampleConfig(top_k=2), rng) for _ in range(2000)} == {0, 1}
    assert {sample_next(logits, mask, SampleConfig(top_p=0.7), rng) for _ in range(2000)} == {0, 1}
    assert {sample_next(logits, mask, SampleConfig(top_p=0.5), rng) for _ in range(200)} == {0}


def test_config_validation():
    for bad in ({"temperature": -1}, {"top_p": 0}, {"top_p": 1.5}, {"top_k": -2}):
        with pytest.raises(InvalidInputError):
            SampleConfig(**bad)


# ---------------------------------------------------------------- generate


def test_zero_budget_returns_prompt(model):
    toks = generate(model, [SOS], SampleConfig(max_new_tokens=0))
    assert toks == [SOS]
    assert decode(toks, model.vocab, 10, 10)[1] is True


def test_generations_always_parse(model):
    for seed in range(30):
        toks = generate(model, [SOS], SampleConfig(seed=seed))
        assert len(toks) <= model.config.context_length
        fold_grammar(toks, model.vocab)
        doc, truncated = decode(toks, model.vocab, 612, 792)
        assert truncated == (toks[-1] != EOS)


def test_generation_is_deterministic(model):
    cfg = SampleConfig(seed=5, top_p=0.9)
    assert generate(model, [SOS], cfg) == generate(model, [SOS], cfg)
    assert generate(model, [SOS], cfg) != generate(model, [SOS], SampleConfig(seed=6, top_p=0.9))


def test_greedy_invariant_to_logit_scaling(model):
    scaled = Model(dict(model.params, **{"head.w": model.params["head.w"] * np.float32(4.0)}), model.config, model.vocab)
    cfg = SampleConfig(temperature=0)
    assert generate(model, [SOS], cfg) == generate(scaled, [SOS], cfg)


def test_invalid_prompts(model):
    with pytest.raises(InvalidPromptError):
        generate(model, [EOS], SampleConfig())
    with pytest.raises(InvalidPromptError):
        generate(model, [], SampleConfig())
    with pytest.raises(InvalidPromptError):
        generate(model, [SOS, 300], SampleConfig())


# ---------------------------------------------------------------- tasks


def test_completion_preserves_prefix(model):
    doc = small_doc(model.vocab)
    canon = normalize(doc, model.vocab)
    for k in range(len(doc.elements) + 1):
        out = complete_document(model, doc, k, SampleConfig(seed=k))
        assert out.elements[:k] == canon.elements[:k]
    with pytest.raises(InvalidInputError):
        complete_document(model, doc, 5, SampleConfig())


def test_completion_prompt_overflow(model):
    rng = np.random.default_rng(0)
    doc = random_document(rng, model.vocab, max_elements=30)
    while len(encode(doc, model.vocab)) <= model.config.context_length + 20:
        doc = random_document(rng, model.vocab, max_elements=30)
    with pytest.raises(ContextOverflowError):
        complete_document(model, doc, len(doc.elements), SampleConfig())


def test_placement_without_targets_is_identity(model):
    doc = small_doc(model.vocab)
    assert place_text_boxes(model, doc, [], "multiple", SampleConfig()) == normalize(doc, model.vocab)


def test_placement_preserves_categories_and_context(model):
    doc = small_doc(model.vocab)
    canon = normalize(doc, model.vocab)
    for targets, mode in (([1], "single"), ([0, 3], "multiple")):
        out = place_text_boxes(model, doc, targets, mode, SampleConfig(seed=1))
        assert len(out.elements) == len(canon.elements)
        assert [e.category for e in out.elements] == [e.category for e in canon.elements]
        for i, (a, b) in enumerate(zip(out.elements, canon.elements)):
            if i not in targets:
                assert a == b


def test_single_element_placement(model):
    doc = Document("one", 612, 792, (Element(0, BBox(10, 10, 100, 100), None, "x"),))
    out = place_text_boxes(model, doc, [0], "single", SampleConfig(seed=3))
    assert len(out.elements) == 1 and out.elements[0].category == 0


def test_placement_errors(model):
    doc = small_doc(model.vocab)
    with pytest.raises(InvalidInputError, match="non-textual"):
        place_text_boxes(model, doc, [2], "single", SampleConfig())
    with pytest.raises(InvalidInputError):
        place_text_boxes(model, doc, [0, 1], "single", SampleConfig())
    with pytest.raises(InvalidInputError):
        place_text_boxes(model, doc, [9], "multiple", SampleConfig())
    with pytest.raises(InvalidInputError):
        place_text_boxes(model, doc, [0], "joint", SampleConfig())


def test_every_step_respects_mask(model):
    # replay a sampled sequence and confirm each token was allowed in its state
    toks = generate(model, [SOS], SampleConfig(seed=11, temperature=1.5))
    state = START
    for t in toks:
        assert allowed_mask(state, model.vocab)[t]
        state = grammar_step(state, t, model.vocab)
    assert state.phase != Phase.REJECT
