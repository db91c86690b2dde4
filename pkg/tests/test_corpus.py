import json
from collections import Counter

import pytest

from docseq.corpus import (
    SynthConfig,
    canonical_json,
    corpus_stats,
    document_to_record,
    ingest_coco,
    read_jsonl,
    record_problems,
    record_to_document,
    split,
    synth_generate,
    write_jsonl,
)
from docseq.errors import IngestionError, InvalidInputError
from docseq.metrics import alignment


def _records():
    return [
        {"id": "a", "canvas": {"w": 612, "h": 792},
         "elements": [{"category": "title", "bbox": [48, 48, 516, 30], "text": "Résumé 日本", "style": "bold"},
                      {"category": "figure", "bbox": [48.5, 100, 200, 150.25]}]},
        {"id": "b", "canvas": {"w": 100, "h": 100}, "elements": []},
    ]


def test_jsonl_round_trip(tmp_path):
    path = tmp_path / "c.jsonl"
    write_jsonl(path, _records())
    back, problems = read_jsonl(path)
    assert problems == [] and back == _records()
    assert [canonical_json(r) for r in back] == path.read_text(encoding="utf-8").splitlines()


def test_empty_file(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("")
    assert read_jsonl(path) == ([], [])


def test_one_bad_line_in_ten(tmp_path):
    path = tmp_path / "c.jsonl"
    lines = [json.dumps({"id": str(i), "canvas": {"w": 1, "h": 1}, "elements": []}) for i in range(10)]
    lines[6] = '{"id": "6", "canvas": '
    path.write_text("\n".join(lines) + "\n")
    recs, problems = read_jsonl(path)
    assert len(recs) == 9 and len(problems) == 1 and problems[0].startswith("line 7:")
    with pytest.raises(InvalidInputError, match="line 7"):
        read_jsonl(path, strict=True)


def test_record_document_round_trip(vocab):
    for rec in _records():
        rec = dict(rec)
        doc = record_to_document(rec, vocab)
        back = document_to_record(doc, vocab)
        # "bold" is not a style of the default vocabulary, so it is dropped
        for e in rec["elements"]:
            e.pop("style", None)
        assert back == rec
    bad = {"id": "x", "canvas": {"w": 1, "h": 1}, "elements": [{"category": "poster", "bbox": [0, 0, 1, 1]}]}
    with pytest.raises(InvalidInputError, match="poster"):
        record_to_document(bad, vocab)
    assert record_problems(bad, vocab)


def _coco():
    return {
        "images": [{"id": 2, "file_name": "p2.png", "width": 600, "height": 800},
                   {"id": 1, "file_name": "p1.png", "width": 600, "height": 800}],
        "categories": [{"id": 1, "name": "text"}, {"id": 2, "name": "title"}, {"id": 3, "name": "list"},
                       {"id": 4, "name": "table"}, {"id": 5, "name": "figure"}],
        "annotations": [
            {"id": 10, "image_id": 1, "category_id": 2, "bbox": [50, 40, 500, 30]},
            {"id": 11, "image_id": 1, "category_id": 1, "bbox": [50, 90, 500, 200]},
            {"id": 12, "image_id": 2, "category_id": 5, "bbox": [-10, 700, 300, 200]},
            {"id": 13, "image_id": 9, "category_id": 1, "bbox": [0, 0, 1, 1]},
        ],
    }


def test_ingest_coco(vocab):
    sidecar = {"10": {"text": "Results", "font": "bold"}}
    recs, diags = ingest_coco(_coco(), sidecar)
    assert [r["id"] for r in recs] == ["p1.png", "p2.png"]
    p1, p2 = recs
    assert len(p1["elements"]) == 2
    assert p1["elements"][0] == {"category": "title", "bbox": [50, 40, 500, 30], "text": "Results", "style": "bold"}
    assert "text" not in p1["elements"][1] and "style" not in p1["elements"][1]
    assert p2["elements"][0]["bbox"] == [0, 700, 290, 100]
    assert any("image 9 missing" in d for d in diags)
    assert any("clamped 1" in d for d in diags)
    for r in recs:
        assert record_problems(r, vocab) == []
    assert ingest_coco(_coco(), sidecar) == (recs, diags)


def test_ingest_category_map():
    cmap = {"1": "text", "2": "title", "3": "list", "4": "table", "5": "figure"}
    recs, _ = ingest_coco(_coco(), category_map=cmap)
    assert recs[0]["elements"][0]["category"] == "title"
    with pytest.raises(IngestionError) as err:
        ingest_coco(_coco(), category_map={"1": "text"})
    assert err.value.ids == [2, 5]


def test_synth_determinism(tmp_path):
    cfg = SynthConfig(seed=3, n_docs=20)
    write_jsonl(tmp_path / "a.jsonl", synth_generate(cfg))
    write_jsonl(tmp_path / "b.jsonl", synth_generate(SynthConfig.from_dict(cfg.to_dict())))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert synth_generate(SynthConfig(seed=4, n_docs=20)) != synth_generate(cfg)


def test_synth_pages_are_valid_and_aligned(vocab):
    recs = synth_generate(SynthConfig(seed=0, n_docs=1000))
    assert len({r["id"] for r in recs}) == 1000
    assert all(record_problems(r, vocab) == [] for r in recs)
    docs = [record_to_document(r, vocab) for r in recs]
    assert all(d.elements for d in docs)
    assert sum(alignment(d) for d in docs) / len(docs) < 0.02
    stats = corpus_stats(recs)
    assert set(stats["element_histogram"]) == {"text", "title", "list", "table", "figure"}


def test_synth_config_validation():
    with pytest.raises(InvalidInputError):
        SynthConfig(block_weights={"text": 0})
    with pytest.raises(InvalidInputError):
        SynthConfig(columns=(3,))


def test_split():
    recs = [{"id": str(i)} for i in range(10)]
    tr, va, te = split(recs, (0.8, 0.1, 0.1), seed=1)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert Counter(r["id"] for r in tr + va + te) == Counter(r["id"] for r in recs)
    assert split(recs, (0.8, 0.1, 0.1), seed=1) == (tr, va, te)
    assert split(recs, (1, 0, 0))[0] and not any(split(recs, (1, 0, 0))[1:])
    for n in range(0, 40):
        parts = split([{"id": str(i)} for i in range(n)], (0.7, 0.2, 0.1), seed=n)
        for size, ratio in zip(map(len, parts), (0.7, 0.2, 0.1)):
            assert abs(size - n * ratio) <= 1
    with pytest.raises(InvalidInputError):
        split(recs, (0.5, 0.2, 0.2))
    with pytest.raises(InvalidInputError):
        split(recs + recs[:1], (0.8, 0.1, 0.1))
