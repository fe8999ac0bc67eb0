"""Command-line entry point: ``sspext <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import corpus as corpus_mod
from .config import load_config_file, parse_assignments, split_overrides
from .evalharness import BASELINES, emit_curves, evaluate, model_selections, read_history_csv, write_history_csv
from .metrics import oracle_labels
from .model import ModelConfig
from .selfsup import TASKS, CorruptionConfig
from .trainer import (
    CheckpointError,
    TrainingConfig,
    TrainingError,
    load_checkpoint,
    run_finetune,
    run_pretrain,
    save_checkpoint,
)

logger = logging.getLogger("sspext")

REUSE_ALIASES = {"full": "full", "sentenc": "sentence_encoder_only",
                 "sentence_encoder_only": "sentence_encoder_only", "none": "none"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _resolve_seed(args, fallback: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("SSPEXT_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SSPEXT_SEED must be an integer, got {env!r}") from None
    return fallback


def _write_snapshot(args, path, **effective):
    snapshot = {"command": args.command, "argv": vars(args) | {"func": None}, **effective}
    Path(path).write_text(json.dumps(snapshot, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _snapshot_path(args, out=None) -> str:
    if args.snapshot:
        return args.snapshot
    return f"{out}.config.json" if out else f"sspext-{args.command}.config.json"


def _run_config(args) -> dict:
    values = load_config_file(args.config) if args.config else {}
    values.update(parse_assignments(args.set or [], "--set"))
    return values


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args) -> int:
    limits = corpus_mod.Limits(args.max_sentences, args.max_tokens)
    docs = corpus_mod.ingest_corpus(args.input, limits)
    if args.use_vocab:
        vocab = corpus_mod.Vocabulary.load(args.use_vocab)
    else:
        vocab = corpus_mod.build_vocabulary(docs, args.min_count)
        if args.vocab:
            vocab.save(args.vocab)
    if args.label:
        for d in docs:
            d.labels = oracle_labels(d, args.max_select)
    corpus_mod.save_corpus(args.out, docs, vocab, limits)
    print(f"ingested {len(docs)} documents, vocabulary size {len(vocab)}")
    _write_snapshot(args, _snapshot_path(args, args.out), vocab_hash=vocab.digest(),
                    limits={"max_sentences_per_doc": limits.max_sentences_per_doc,
                            "max_tokens_per_sentence": limits.max_tokens_per_sentence})
    return 0


def cmd_label(args) -> int:
    docs, vocab, limits = corpus_mod.load_corpus(args.corpus)
    for d in docs:
        d.labels = oracle_labels(d, args.max_select)
    out = args.out or args.corpus
    corpus_mod.save_corpus(out, docs, vocab, limits)
    print(f"labeled {len(docs)} documents -> {out}")
    _write_snapshot(args, _snapshot_path(args, out), max_select=args.max_select)
    return 0


def _configs(args, vocab_size: int, phase: str, seed: int):
    values = _run_config(args)
    model_kw, train_kw, corr_kw = split_overrides(values, ModelConfig, TrainingConfig, CorruptionConfig)
    model_kw.pop("vocab_size", None)
    train_kw.update(phase=phase, rng_seed=seed)
    corr_kw["rng_seed"] = seed
    if phase == "pretrain":
        train_kw["task"] = args.task
    else:
        train_kw["task"] = None
        train_kw["reuse_mode"] = REUSE_ALIASES[args.reuse]
    return ModelConfig(vocab_size, **model_kw), TrainingConfig(**train_kw), CorruptionConfig(**corr_kw)


def cmd_pretrain(args) -> int:
    docs, vocab, limits = corpus_mod.load_corpus(args.corpus)
    dev = _load_matching(args.dev, vocab) if args.dev else None
    seed = _resolve_seed(args, _run_config(args).get("rng_seed", 0))
    model_cfg, train_cfg, corr_cfg = _configs(args, len(vocab), "pretrain", seed)
    result = run_pretrain(docs, vocab, args.task, model_cfg, corr_cfg, train_cfg, dev, limits, args.word_vectors)
    save_checkpoint(result.checkpoint.tensors, result.checkpoint.metadata, args.out)
    columns = ["epoch", "train_loss"] + (["dev_loss"] if dev else [])
    write_history_csv(f"{args.out}.loss.csv", result.history, columns)
    print(f"pretrained {args.task} for {len(result.history)} epoch(s); best epoch "
          f"{result.checkpoint.metadata['epoch']} -> {args.out}")
    _write_snapshot(args, _snapshot_path(args, args.out), seed=seed, model_config=model_cfg.to_dict(),
                    training_config=train_cfg.to_dict(), corruption_config=corr_cfg.to_dict())
    return 0


def _load_matching(path, vocab):
    docs, other, _ = corpus_mod.load_corpus(path)
    if other.digest() != vocab.digest():
        raise corpus_mod.CorpusError(f"{path}: vocabulary differs from the training corpus (ingest with --use-vocab)")
    return docs


def cmd_finetune(args) -> int:
    docs, vocab, limits = corpus_mod.load_corpus(args.corpus)
    dev = _load_matching(args.dev, vocab) if args.dev else None
    seed = _resolve_seed(args, _run_config(args).get("rng_seed", 0))
    model_cfg, train_cfg, _ = _configs(args, len(vocab), "finetune", seed)
    init = load_checkpoint(args.init) if args.init else None
    result = run_finetune(docs, vocab, model_cfg, train_cfg, dev, init, limits)
    save_checkpoint(result.checkpoint.tensors, result.checkpoint.metadata, args.out)
    write_history_csv(f"{args.out}.history.csv", result.history,
                      ["epoch", "train_loss", "rouge1", "rouge2", "rougeL"])
    best = max(result.history, key=lambda r: r["rouge2"])
    print(f"fine-tuned {len(result.history)} epoch(s); best dev R1/R2/RL "
          f"{best['rouge1']:.2f}/{best['rouge2']:.2f}/{best['rougeL']:.2f} at epoch {best['epoch']}")
    _write_snapshot(args, _snapshot_path(args, args.out), seed=seed, model_config=result.model.config.to_dict(),
                    training_config=train_cfg.to_dict())
    return 0


def cmd_evaluate(args) -> int:
    docs, vocab, limits = corpus_mod.load_corpus(args.corpus)
    if args.model:
        ckpt = load_checkpoint(args.model)
        if ckpt.metadata.get("vocab_hash") != vocab.digest():
            raise CheckpointError("checkpoint/vocabulary hash mismatch")
        method, name = ckpt.build_model(), Path(args.model).name
    else:
        method, name = args.baseline, args.baseline
    scores = evaluate(method, docs, vocab, limits, args.k, args.report, name)
    print(f"{scores[0]:.2f} {scores[1]:.2f} {scores[2]:.2f}")
    if args.selections:
        if args.model:
            selections = model_selections(method, docs, vocab, limits, args.k)
        else:
            selections = [BASELINES[args.baseline](d) for d in docs]
        with open(args.selections, "w", encoding="utf-8") as fh:
            for d, sel in zip(docs, selections):
                fh.write(json.dumps({"id": d.id, "indices": sel}) + "\n")
    _write_snapshot(args, _snapshot_path(args, args.report), method=name, rouge=list(scores))
    return 0


def cmd_curves(args) -> int:
    histories = {}
    for path in args.history:
        name = Path(path).name
        for suffix in (".csv", ".history"):
            name = name.removesuffix(suffix)
        histories[name] = read_history_csv(path)
    rows = emit_curves(histories, args.out)
    print(f"wrote {rows} rows -> {args.out}")
    _write_snapshot(args, _snapshot_path(args, args.out), methods=list(histories))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    seed = _resolve_seed(args)
    errors = run_gradcheck(seed)
    for name, err in errors.items():
        print(f"{name:<9} max relative error {err:.3e}")
    ok = all(err < args.tolerance for err in errors.values())
    print("PASS" if ok else "FAIL")
    _write_snapshot(args, _snapshot_path(args), seed=seed, errors=errors)
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sspext", description="Extractive summarization with self-supervised pre-training.")
    parser.add_argument("--threads", type=int, default=1, help="bound on torch worker threads")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--snapshot", help="where to write the run's config snapshot")
        return p

    p = add("ingest", cmd_ingest, "tokenize a JSONL corpus and build a vocabulary")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab")
    p.add_argument("--use-vocab", help="reuse an existing vocabulary file instead of building one")
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--max-sentences", type=int, default=50)
    p.add_argument("--max-tokens", type=int, default=100)
    p.add_argument("--label", action="store_true", help="also compute oracle labels")
    p.add_argument("--max-select", type=int, default=3)

    p = add("label", cmd_label, "attach greedy oracle labels to a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-select", type=int, default=3)
    p.add_argument("--out")

    p = add("pretrain", cmd_pretrain, "pre-train on a corruption task")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--word-vectors")
    p.add_argument("--out", required=True)

    p = add("finetune", cmd_finetune, "fine-tune sentence selection on oracle labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--init")
    p.add_argument("--reuse", choices=sorted(REUSE_ALIASES), default="full")
    p.add_argument("--dev")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "ROUGE of a model or baseline")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--baseline", choices=("lead3", "oracle"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--report")
    p.add_argument("--selections", help="JSONL dump of per-document selected indices")

    p = add("curves", cmd_curves, "merge fine-tuning histories into a long-format CSV")
    p.add_argument("--history", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of all loss gradients")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sspext: error: {exc}", file=sys.stderr)
        return 1
    except (corpus_mod.CorpusError, CheckpointError, TrainingError, ValueError, OSError, KeyError) as exc:
        print(f"sspext: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
