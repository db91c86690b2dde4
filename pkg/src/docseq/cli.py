"""Command-line entry point.

Exit codes: 0 success, 2 configuration/input, 3 ingestion, 4 training, 5 generation, 6 evaluation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus
from .codec import encode, normalize
from .config import RunConfig, load_config
from .errors import (
    CheckpointError,
    ConfigError,
    ContextOverflowError,
    EncodingError,
    IngestionError,
    InvalidInputError,
    InvalidPromptError,
    PairingError,
    ParseError,
    TrainingAborted,
)
from .metrics import bde, evaluate, iou, norm_box
from .net import init_params
from .render import render_svg
from .sample import Model, complete_document, place_text_boxes
from .train import Checkpoint, OptimizerState, load_checkpoint, save_checkpoint, train

log = logging.getLogger("docseq")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_TRAIN, EXIT_GENERATE, EXIT_EVAL = 0, 2, 3, 4, 5, 6


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _write_run_sidecar(out: Path, cfg: RunConfig, extra: dict) -> None:
    side = out.with_name(out.name + ".run.json")
    side.write_text(json.dumps({"run_config": cfg.to_dict(), **extra}, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def cmd_synth(args) -> int:
    cfg = load_config(args.config).with_section("synth", seed=args.seed, n_docs=args.n)
    records = corpus.synth_generate(cfg.synth_config())
    out = Path(args.out)
    corpus.write_jsonl(out, records)
    _write_run_sidecar(out, cfg, {"command": "synth"})
    print(json.dumps(corpus.corpus_stats(records), sort_keys=True))
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    try:
        coco = json.loads(Path(args.coco).read_text(encoding="utf-8"))
        sidecar = json.loads(Path(args.sidecar).read_text(encoding="utf-8")) if args.sidecar else None
        cmap = json.loads(Path(args.map).read_text(encoding="utf-8")) if args.map else None
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read ingestion inputs: {exc}", EXIT_INGEST)
    try:
        records, diagnostics = corpus.ingest_coco(coco, sidecar, cmap)
    except IngestionError as exc:
        raise CommandError(str(exc), EXIT_INGEST)
    for d in diagnostics:
        print(f"warning: {d}", file=sys.stderr)
    out = Path(args.out)
    corpus.write_jsonl(out, records)
    _write_run_sidecar(out, cfg, {"command": "ingest", "diagnostics": diagnostics})
    print(json.dumps(corpus.corpus_stats(records), sort_keys=True))
    return EXIT_OK


def _load_docs(path, vocab):
    try:
        records, problems = corpus.read_jsonl(path)
        docs = [corpus.record_to_document(r, vocab) for r in records]
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc}", EXIT_CONFIG)
    except InvalidInputError as exc:
        raise CommandError(str(exc), EXIT_CONFIG)
    return records, docs


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.steps is not None:
        cfg = cfg.with_section("train", total_steps=args.steps)
    vocab = cfg.vocab()
    mcfg, tcfg = cfg.model_config(), cfg.train_config()
    _, docs = _load_docs(args.corpus, vocab)
    seqs, bad = [], 0
    for d in docs:
        try:
            seqs.append(encode(d, vocab))
        except (EncodingError, InvalidInputError) as exc:
            bad += 1
            log.warning("skipping %s: %s", d.id, exc)
    if args.resume:
        try:
            ck = load_checkpoint(args.resume)
        except (OSError, CheckpointError) as exc:
            raise CommandError(f"cannot load checkpoint {args.resume}: {exc}", EXIT_CONFIG)
        if ck.model_config != mcfg or ck.vocab != vocab.describe():
            raise CommandError("checkpoint does not match the model/vocabulary config", EXIT_CONFIG)
        params, opt = ck.params, ck.opt
    else:
        params = init_params(mcfg, tcfg.seed)
        opt = OptimizerState.zeros_like(params)
    out = Path(args.out_checkpoint)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".metrics.jsonl")
    mode = "a" if args.resume else "w"
    with open(log_path, mode, encoding="utf-8") as fh:
        def on_step(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        try:
            train(params, opt, mcfg, tcfg, seqs, on_step=on_step)
        except TrainingAborted as exc:
            print(f"training aborted: {exc} {exc.diagnostics}", file=sys.stderr)
            return EXIT_TRAIN
        except InvalidInputError as exc:
            raise CommandError(str(exc), EXIT_TRAIN)
    save_checkpoint(out, Checkpoint(mcfg, tcfg, vocab.describe(), params, opt, opt.step,
                                    {"run_config": cfg.to_dict(), "skipped_documents": bad}))
    print(json.dumps({"checkpoint": str(out), "step": opt.step, "metrics_log": str(log_path)}))
    return EXIT_OK


def _load_model(path):
    try:
        ck = load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise CommandError(f"cannot load checkpoint {path}: {exc}", EXIT_CONFIG)
    run_cfg = RunConfig.from_dict(ck.extra["run_config"]) if "run_config" in ck.extra else RunConfig()
    return Model.from_checkpoint(ck), run_cfg


def _sample_cfg(run_cfg: RunConfig, args):
    return run_cfg.with_section("sample", temperature=args.temperature, top_k=args.top_k,
                                top_p=args.top_p, seed=args.seed)


def cmd_complete(args) -> int:
    model, run_cfg = _load_model(args.checkpoint)
    run_cfg = _sample_cfg(run_cfg, args)
    scfg = run_cfg.sample_config()
    _, docs = _load_docs(args.doc, model.vocab)
    out = []
    for d in docs:
        k = args.k if args.k is not None else int(len(d.elements) * args.k_fraction)
        try:
            gen = complete_document(model, d, min(k, len(d.elements)), scfg)
        except (ParseError, ContextOverflowError, InvalidPromptError, EncodingError, InvalidInputError) as exc:
            raise CommandError(f"generation failed for {d.id}: {exc}", EXIT_GENERATE)
        rec = corpus.document_to_record(gen, model.vocab)
        rec["meta"] = {"task": "completion", "k": k, "run_config": run_cfg.to_dict()}
        out.append(rec)
    corpus.write_jsonl(args.out, out)
    return EXIT_OK


def cmd_place(args) -> int:
    model, run_cfg = _load_model(args.checkpoint)
    run_cfg = _sample_cfg(run_cfg, args)
    scfg = run_cfg.sample_config()
    targets = [int(t) for t in args.targets.split(",") if t.strip()]
    _, docs = _load_docs(args.doc, model.vocab)
    out = []
    for d in docs:
        try:
            gen = place_text_boxes(model, d, targets, args.mode, scfg)
        except (ParseError, ContextOverflowError, InvalidPromptError, EncodingError, InvalidInputError) as exc:
            raise CommandError(f"placement failed for {d.id}: {exc}", EXIT_GENERATE)
        gt = normalize(d, model.vocab)
        scores = []
        for t in targets:
            a = norm_box(gen.elements[t].bbox, gen.canvas_w, gen.canvas_h)
            b = norm_box(gt.elements[t].bbox, gt.canvas_w, gt.canvas_h)
            scores.append({"target": t, "iou": iou(a, b), "bde": bde(a, b)})
        print(json.dumps({"id": d.id, "mode": args.mode, "targets": scores}, sort_keys=True))
        rec = corpus.document_to_record(gen, model.vocab)
        rec["meta"] = {"task": "placement", "placement": {"targets": targets, "mode": args.mode, "scores": scores},
                       "run_config": run_cfg.to_dict()}
        out.append(rec)
    corpus.write_jsonl(args.out, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    vocab = cfg.vocab()
    gen_records, gen = _load_docs(args.generated, vocab)
    _, ref = _load_docs(args.reference, vocab)
    if args.task == "placement":
        # placement indices refer to reading order
        ref = [normalize(d, vocab) for d in ref]
    targets = {r["id"]: r.get("meta", {}).get("placement", {}).get("targets", []) for r in gen_records}
    try:
        report = evaluate(gen, ref, args.task, vocab.n_categories, targets if args.task == "placement" else None,
                          cfg.max_elements)
    except PairingError as exc:
        print(f"pairing failed: {exc}", file=sys.stderr)
        return EXIT_EVAL
    data = report.to_dict()
    data["fid_note"] = "FID* is a Frechet distance over layout descriptors, not an image-network FID"
    data["run_config"] = cfg.to_dict()
    Path(args.out).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(report.table(), sort_keys=True))
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        records, _ = corpus.read_jsonl(args.doc, strict=True)
    except (OSError, InvalidInputError) as exc:
        raise CommandError(str(exc), EXIT_CONFIG)
    if not records:
        raise CommandError(f"{args.doc} holds no records", EXIT_CONFIG)
    if args.id is not None:
        found = [r for r in records if r.get("id") == args.id]
        if not found:
            raise CommandError(f"no record with id {args.id!r}", EXIT_CONFIG)
        rec = found[0]
    elif -len(records) <= args.index < len(records):
        rec = records[args.index]
    else:
        raise CommandError(f"index {args.index} outside a corpus of {len(records)} records", EXIT_CONFIG)
    try:
        svg = render_svg(rec, show_text=args.show_text, metadata={"command": "render", "id": rec.get("id"),
                                                                  "show_text": args.show_text})
    except (KeyError, TypeError, ValueError) as exc:
        raise CommandError(f"invalid record: {exc!r}", EXIT_CONFIG)
    Path(args.out).write_text(svg, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="docseq", description="Autoregressive document layout + text generation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic JSONL corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert COCO annotations (+ text sidecar) to JSONL")
    p.add_argument("--config")
    p.add_argument("--coco", required=True)
    p.add_argument("--sidecar")
    p.add_argument("--map", help="JSON map from COCO category id to category name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a JSONL corpus")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--resume")
    p.add_argument("--steps", type=int, help="override train.total_steps")
    p.add_argument("--log", help="metrics JSONL path (default: <checkpoint>.metrics.jsonl)")
    p.set_defaults(func=cmd_train)

    def sampling(p):
        p.add_argument("--temperature", type=float)
        p.add_argument("--top-k", type=int)
        p.add_argument("--top-p", type=float)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("complete", help="document completion from the first k elements")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--doc", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--k-fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)
    sampling(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("place", help="single/multiple text-box placement")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--doc", required=True)
    p.add_argument("--targets", required=True, help="comma-separated reading-order element indices")
    p.add_argument("--mode", choices=("single", "multiple"), required=True)
    p.add_argument("--out", required=True)
    sampling(p)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("eval", help="score generated documents against references")
    p.add_argument("--config")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--task", choices=("completion", "placement"), default="completion")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render one record as SVG")
    p.add_argument("--doc", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--show-text", action="store_true")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--id")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
