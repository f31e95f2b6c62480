"""``qt`` command: train, summarize, eval, export-embeddings.

Exit codes: 2 config error, 3 data error, 4 numeric abort, 5 unknown
aspect, 6 bad checkpoint or tokenizer mismatch, 7 nothing to evaluate.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .aspect import (
    ASPECT_BUDGET,
    AspectError,
    aspect_summarize,
    build_aspect_code_map,
    default_aspects,
    load_aspect_config,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, load_run_config
from .corpus import CorpusError, load_reviews
from .extraction import ExtractionConfig, summarize_entity
from .model import QuantizedTransformer
from .quantizer import hard_assign, head_purity
from .rouge import evaluate_corpus
from .tokenizer import ConfigError as TokenizerConfigError
from .tokenizer import Tokenizer, build_tokenizer
from .training import NumericError, TrainedModel, set_deterministic, train

logger = logging.getLogger("qtsum")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_ASPECT, EXIT_CHECKPOINT, EXIT_EMPTY_EVAL = 2, 3, 4, 5, 6, 7


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_corpus(path):
    if not path or not Path(path).exists():
        raise CommandError(EXIT_DATA, f"review file not found: {path}")
    try:
        return load_reviews(path)
    except CorpusError as exc:
        raise CommandError(EXIT_DATA, f"{path}: {exc}") from None


def _load_ckpt(path) -> TrainedModel:
    try:
        trained = load_checkpoint(path)
    except CheckpointError as exc:
        raise CommandError(EXIT_CHECKPOINT, str(exc)) from None
    if trained.codebook is None or trained.tokenizer is None:
        raise CommandError(EXIT_CHECKPOINT, f"{path}: checkpoint lacks a codebook or tokenizer")
    return trained


def cmd_train(args) -> int:
    try:
        cfg = load_run_config(args.config, args.set or [])
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from None
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    corpus = _load_corpus(cfg.train_path)
    if cfg.deterministic_mode:
        set_deterministic(cfg.seed)
    try:
        tok = build_tokenizer(corpus, cfg.vocab_size, cfg.max_sentence_len)
    except TokenizerConfigError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from None
    seqs = [list(s.token_ids) for s in corpus.with_tokens(tok).iter_sentences()]
    if not seqs:
        raise CommandError(EXIT_DATA, f"{cfg.train_path}: no non-empty sentences")
    mcfg = cfg.model_config()
    torch.manual_seed(cfg.seed)
    log_path = out / "train_log.jsonl"
    with log_path.open("w") as log:
        def on_epoch(entry):
            log.write(json.dumps(entry.as_dict(), sort_keys=True) + "\n")
            log.flush()

        try:
            trained = train(TrainedModel(QuantizedTransformer(mcfg), None, tok), seqs, mcfg,
                            cfg.seed, callback=on_epoch)
        except NumericError as exc:
            raise CommandError(EXIT_NUMERIC, str(exc)) from None
    digest = save_checkpoint(trained, cfg.checkpoint)
    print(json.dumps({"checkpoint": cfg.checkpoint, "sha256": digest, "log": str(log_path)}))
    return 0


def _entity_summaries(trained: TrainedModel, corpus, xcfg: ExtractionConfig, aspect=None, amap=None):
    results = []
    for ent in sorted(corpus.entities, key=lambda e: e.entity_id):
        texts = ent.texts()
        if not texts:
            logger.warning("entity %s has no sentences; skipped", ent.entity_id)
            continue
        enc = trained.encode_texts(texts)
        if aspect is None:
            s = summarize_entity(ent.entity_id, texts, enc, trained.codebook, xcfg)
        else:
            s = aspect_summarize(enc, trained.codebook, texts, amap, aspect, xcfg, ent.entity_id)
        results.append(s)
    return results


def cmd_summarize(args) -> int:
    trained = _load_ckpt(args.checkpoint)
    if args.tokenizer:
        expected = Tokenizer.load(args.tokenizer).digest()
        if expected != trained.tokenizer.digest():
            raise CommandError(EXIT_CHECKPOINT,
                               "tokenizer hash mismatch between checkpoint and --tokenizer")
    corpus = _load_corpus(args.reviews)
    budget = args.budget or (ASPECT_BUDGET if args.aspect else 100)
    xcfg = ExtractionConfig(args.method, args.cluster_samples, args.sentences_per_cluster,
                            budget, args.redundancy_threshold, args.seed)
    try:
        xcfg.validate()
    except ValueError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from None

    amap = None
    if args.aspect:
        try:
            aspects = load_aspect_config(args.aspect_config) if args.aspect_config else default_aspects()
        except (OSError, KeyError, ValueError) as exc:
            raise CommandError(EXIT_CONFIG, f"bad aspect config: {exc}") from None
        names = [a.name for a in aspects]
        if args.aspect not in names:
            raise CommandError(EXIT_ASPECT, f"unknown aspect {args.aspect!r}; valid aspects: {', '.join(names)}")
        dev = _load_corpus(args.dev) if args.dev else corpus
        if not args.dev:
            logger.warning("no --dev set given; labelling codes with the input reviews")
        dev_texts = dev.texts()
        table = hard_assign(trained.codebook, trained.encode_texts(dev_texts))
        try:
            amap = build_aspect_code_map(table, dev_texts, aspects)
        except AspectError as exc:
            raise CommandError(EXIT_ASPECT, str(exc)) from None
        if args.aspect_map:
            Path(args.aspect_map).write_text(json.dumps(amap.to_json(), indent=1) + "\n")
    try:
        summaries = _entity_summaries(trained, corpus, xcfg, args.aspect, amap)
    except AspectError as exc:
        raise CommandError(EXIT_ASPECT, str(exc)) from None

    lines = [json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) for s in summaries]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _read_jsonl(path):
    if not Path(path).exists():
        raise CommandError(EXIT_DATA, f"file not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CommandError(EXIT_DATA, f"{path}:{n}: {exc.msg}") from None
    return rows


def _key(row) -> str:
    scope = row.get("scope", "general")
    return row["entity_id"] if scope == "general" else f"{row['entity_id']}|{scope}"


def cmd_eval(args) -> int:
    system = {_key(r): " ".join(r["sentences"]) if "sentences" in r else r["summary"]
              for r in _read_jsonl(args.summaries)}
    refs = {_key(r): r["references"] for r in _read_jsonl(args.references)}
    report = evaluate_corpus(system, refs)
    if not report.per_entity:
        raise CommandError(EXIT_EMPTY_EVAL, "no summaries align with any reference entity")
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(payload)
    print(report.table())
    return 0


def cmd_export_embeddings(args) -> int:
    trained = _load_ckpt(args.checkpoint)
    cb = trained.codebook
    heads = np.full(cb.size, -1)
    counts = None
    if args.reviews:
        corpus = _load_corpus(args.reviews)
        table = hard_assign(cb, trained.encode_texts(corpus.texts()))
        purity, heads = head_purity(table)
        counts = table.popularity
        logger.info("code/head purity %.4f", purity)
    with open(args.out_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["code_id", "head", "count"] + [f"e{j}" for j in range(cb.dim)])
        for k in range(cb.size):
            w.writerow([k, int(heads[k]), "" if counts is None else int(counts[k])]
                       + [repr(float(v)) for v in cb.embeddings[k]])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("config", nargs="?", help="JSON run config")
    t.add_argument("-s", "--set", action="append", metavar="KEY=VALUE", help="override a config value")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("summarize", help="extract general or aspect summaries")
    s.add_argument("checkpoint")
    s.add_argument("reviews")
    s.add_argument("--method", choices=["two_step", "nearest"], default="two_step")
    s.add_argument("--budget", type=int, default=None, help="word budget (default 100, or 75 with --aspect)")
    s.add_argument("--aspect")
    s.add_argument("--aspect-config")
    s.add_argument("--aspect-map", help="write the code/aspect map as JSON")
    s.add_argument("--dev", help="held-out reviews used to label codes with aspects")
    s.add_argument("--tokenizer", help="tokenizer JSON the data was prepared with")
    s.add_argument("--cluster-samples", type=int, default=300)
    s.add_argument("--sentences-per-cluster", type=int, default=30)
    s.add_argument("--redundancy-threshold", type=float, default=0.6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_summarize)

    e = sub.add_parser("eval", help="ROUGE against reference summaries")
    e.add_argument("summaries")
    e.add_argument("references")
    e.add_argument("-o", "--output", help="write metrics JSON here")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-embeddings", help="dump code embeddings as TSV")
    x.add_argument("checkpoint")
    x.add_argument("out_path")
    x.add_argument("--reviews", help="count assignments and head ownership over these reviews")
    x.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"qt {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
