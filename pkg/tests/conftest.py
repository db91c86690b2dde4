import numpy as np
import pytest

from docseq.codec import build_vocab
from docseq.document import BBox, Document, Element, PUBLAYNET_CATEGORIES

ALPHABET = list("abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,") + ["é", "ß", "中", "文", "😀", "—"]


def random_text(rng, max_chars=40):
    n = int(rng.integers(0, max_chars))
    return "".join(ALPHABET[int(i)] for i in rng.integers(0, len(ALPHABET), size=n))


def random_document(rng, vocab, max_elements=10, doc_id="doc"):
    W = float(rng.choice([612.0, 1000.0, 1275.5, 300.0]))
    H = float(rng.choice([792.0, 1000.0, 1650.25, 300.0]))
    els = []
    for _ in range(int(rng.integers(0, max_elements + 1))):
        x = float(rng.uniform(0, W * 0.95))
        y = float(rng.uniform(0, H * 0.95))
        w = float(rng.uniform(1e-3, W - x))
        h = float(rng.uniform(1e-3, H - y))
        cat = int(rng.integers(0, vocab.n_categories))
        text = None
        if vocab.categories[cat].textual and rng.random() < 0.8:
            text = random_text(rng)
        style = int(rng.integers(0, vocab.n_styles)) if vocab.n_styles and rng.random() < 0.7 else None
        els.append(Element(cat, BBox(x, y, w, h), style, text))
    return Document(doc_id, W, H, tuple(els))


@pytest.fixture
def vocab():
    return build_vocab(PUBLAYNET_CATEGORIES)


@pytest.fixture
def styled_vocab():
    return build_vocab(PUBLAYNET_CATEGORIES, ["regular", "bold", "italic"], True, t_max=16)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
