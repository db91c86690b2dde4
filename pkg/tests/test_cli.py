import json
import time

import pytest

from docseq.cli import main
from docseq.corpus import read_jsonl, write_jsonl
from docseq.train import load_checkpoint

TINY = {
    "t_max": 16,
    "model": {"context_length": 128, "d_model": 32, "n_layers": 2, "n_heads": 2},
    "train": {"lr": 0.003, "warmup_steps": 10, "total_steps": 50, "batch_size": 8, "seed": 0},
    "synth": {"words_per_block": [1, 2], "blocks_per_column": [1, 2]},
}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    assert main(["synth", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "c.jsonl"),
                 "--seed", "0", "--n", "16"]) == 0
    return tmp_path


def _train(d, *extra):
    return main(["train", "--config", str(d / "cfg.json"), "--corpus", str(d / "c.jsonl"), *extra])


def _losses(path):
    return {r["step"]: r["loss"] for r in map(json.loads, path.read_text().splitlines())}


def test_synth_writes_corpus_and_provenance(workdir, capsys):
    recs, problems = read_jsonl(workdir / "c.jsonl")
    assert len(recs) == 16 and not problems
    side = json.loads((workdir / "c.jsonl.run.json").read_text())
    assert side["run_config"]["synth"]["n_docs"] == 16
    assert main(["synth", "--config", str(workdir / "missing.json"), "--out", str(workdir / "x.jsonl")]) == 2
    (workdir / "bad.json").write_text('{"model": {"depth": 3}}')
    assert main(["synth", "--config", str(workdir / "bad.json"), "--out", str(workdir / "x.jsonl")]) == 2


def test_smoke_train_and_generation(workdir, capsys):
    t0 = time.perf_counter()
    assert _train(workdir, "--out-checkpoint", str(workdir / "m.ckpt")) == 0
    assert time.perf_counter() - t0 < 60
    ck = load_checkpoint(workdir / "m.ckpt")
    assert ck.step == 50 and ck.extra["run_config"]["model"]["d_model"] == 32
    assert len(_losses(workdir / "m.ckpt.metrics.jsonl")) == 50

    assert main(["complete", "--checkpoint", str(workdir / "m.ckpt"), "--doc", str(workdir / "c.jsonl"),
                 "--out", str(workdir / "done.jsonl"), "--seed", "1"]) == 0
    done, _ = read_jsonl(workdir / "done.jsonl")
    assert len(done) == 16 and done[0]["meta"]["run_config"]["t_max"] == 16

    # placement targets must be textual, so keep the pages that open with a title
    titled = [r for r in read_jsonl(workdir / "c.jsonl")[0] if r["elements"][0]["category"] == "title"]
    write_jsonl(workdir / "titled.jsonl", titled)
    capsys.readouterr()
    assert main(["place", "--checkpoint", str(workdir / "m.ckpt"), "--doc", str(workdir / "titled.jsonl"),
                 "--targets", "0", "--mode", "single", "--out", str(workdir / "placed.jsonl")]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(lines) == len(titled) > 0 and all({"iou", "bde"} <= set(l["targets"][0]) for l in lines)

    for task, gen, ref in (("completion", "done.jsonl", "c.jsonl"), ("placement", "placed.jsonl", "titled.jsonl")):
        out = workdir / f"{task}.json"
        assert main(["eval", "--config", str(workdir / "cfg.json"), "--generated", str(workdir / gen),
                     "--reference", str(workdir / ref), "--task", task, "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["run_config"]["model"]["d_model"] == 32 and "FID*" in report["fid_note"]
    assert set(json.loads((workdir / "completion.json").read_text())["table"]) == {"mIoU", "FID*", "Align", "Over"}
    assert set(json.loads((workdir / "placement.json").read_text())["table"]["Single"]) == {"IoU", "BDE"}


def test_resume_matches_continuous_run(workdir):
    assert _train(workdir, "--out-checkpoint", str(workdir / "full.ckpt"), "--steps", "200") == 0
    assert _train(workdir, "--out-checkpoint", str(workdir / "half.ckpt"), "--steps", "100") == 0
    assert _train(workdir, "--out-checkpoint", str(workdir / "rest.ckpt"), "--steps", "200",
                  "--resume", str(workdir / "half.ckpt"), "--log", str(workdir / "half.ckpt.metrics.jsonl")) == 0
    full, resumed = _losses(workdir / "full.ckpt.metrics.jsonl"), _losses(workdir / "half.ckpt.metrics.jsonl")
    assert sorted(resumed) == list(range(1, 201))
    assert abs(full[200] - resumed[200]) <= 1e-5
    assert (workdir / "full.ckpt").read_bytes() == (workdir / "rest.ckpt").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(workdir, capsys):
    d = workdir
    (d / "coco.json").write_text(json.dumps({"images": [{"id": 1, "width": 10, "height": 10}],
                                             "categories": [{"id": 7, "name": "text"}],
                                             "annotations": [{"id": 1, "image_id": 1, "category_id": 7, "bbox": [0, 0, 5, 5]}]}))
    (d / "map.json").write_text('{"1": "text"}')
    assert main(["ingest", "--coco", str(d / "coco.json"), "--out", str(d / "i.jsonl")]) == 0
    assert main(["ingest", "--coco", str(d / "coco.json"), "--map", str(d / "map.json"), "--out", str(d / "i.jsonl")]) == 3
    assert main(["train", "--corpus", str(d / "c.jsonl"), "--out-checkpoint", str(d / "x.ckpt"),
                 "--resume", str(d / "coco.json")]) == 2
    (d / "nan.json").write_text(json.dumps(dict(TINY, train=dict(TINY["train"], lr=1e30, total_steps=5))))
    assert main(["train", "--config", str(d / "nan.json"), "--corpus", str(d / "c.jsonl"),
                 "--out-checkpoint", str(d / "x.ckpt")]) == 4
    assert _train(d, "--out-checkpoint", str(d / "m.ckpt"), "--steps", "2") == 0
    assert main(["place", "--checkpoint", str(d / "m.ckpt"), "--doc", str(d / "c.jsonl"), "--targets", "99",
                 "--mode", "single", "--out", str(d / "p.jsonl")]) == 5
    recs, _ = read_jsonl(d / "c.jsonl")
    (d / "short.jsonl").write_text("\n".join(json.dumps(r) for r in recs[:3]) + "\n")
    assert main(["eval", "--config", str(d / "cfg.json"), "--generated", str(d / "short.jsonl"),
                 "--reference", str(d / "c.jsonl"), "--out", str(d / "r.json")]) == 6
    (d / "broken.jsonl").write_text('{"id": "b", "canvas": {"w": 1}, "elements": [{}]}\n')
    assert main(["render", "--doc", str(d / "broken.jsonl"), "--out", str(d / "b.svg")]) == 2
    assert main(["render", "--doc", str(d / "c.jsonl"), "--index", "99", "--out", str(d / "b.svg")]) == 2


def test_render_command(workdir):
    for name in ("a.svg", "b.svg"):
        assert main(["render", "--doc", str(workdir / "c.jsonl"), "--index", "3", "--show-text",
                     "--out", str(workdir / name)]) == 0
    a = (workdir / "a.svg").read_bytes()
    assert a == (workdir / "b.svg").read_bytes() and b"<metadata>" in a
    rec_id = read_jsonl(workdir / "c.jsonl")[0][3]["id"]
    assert main(["render", "--doc", str(workdir / "c.jsonl"), "--id", rec_id, "--show-text",
                 "--out", str(workdir / "c.svg")]) == 0
    assert (workdir / "c.svg").read_bytes() == a
