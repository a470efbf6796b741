"""Command-line entrypoint orchestrating the pipeline.

Subcommands: toygen, corpus, tokenizer, pretrain, finetune, eval, predict,
serve. Every run writes a manifest (resolved config, seeds, input/output
fingerprints) next to its primary output. Exit codes: 0 success, 1 usage,
2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import bpe, corpus, evalmetrics, toygen
from .corpus import DatasetError
from .evalmetrics import EvalError
from .inference import InferenceError, InferenceRequest, Predictor
from .instances import build_instances, derive_max_allowed
from .model import ModelError, load_checkpoint, preset, save_checkpoint
from .training import RECIPES, TrainConfig, TrainingError, finetune, pretrain

# recipe key -> argparse dest
_RECIPE_DESTS = {
    "objective": "objective",
    "batch_sequences": "batch",
    "micro_batch": "micro_batch",
    "max_epochs": "epochs",
    "peak_lr": "lr",
    "warmup_steps": "warmup",
    "dropout": "dropout",
    "seed": "seed",
}

ENV_MODEL_DIR = "VARNAMER_MODEL_DIR"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(primary_output, subcommand: str, args: argparse.Namespace, inputs, outputs):
    manifest = {
        "subcommand": subcommand,
        "config": {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")
        },
        "inputs": {str(p): _sha256(p) for p in inputs if os.path.exists(p)},
        "outputs": {str(p): _sha256(p) for p in outputs if os.path.exists(p)},
    }
    path = str(primary_output) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _vocab_paths(prefix: str) -> tuple[str, str]:
    return prefix + ".tokens.txt", prefix + ".merges.txt"


def _default_model_paths(args) -> None:
    model_dir = os.environ.get(ENV_MODEL_DIR)
    if getattr(args, "checkpoint", None) is None and model_dir:
        args.checkpoint = os.path.join(model_dir, "model.ckpt")
    if getattr(args, "vocab", None) is None and model_dir:
        args.vocab = os.path.join(model_dir, "vocab")
    for name in ("checkpoint", "vocab"):
        if hasattr(args, name) and getattr(args, name) is None:
            raise _UsageError(f"--{name} is required (or set ${ENV_MODEL_DIR})")


def _load_predictor(args) -> tuple[Predictor, str]:
    tokens_path, merges_path = _vocab_paths(args.vocab)
    vocab = bpe.load_vocab(tokens_path, merges_path)
    model, _opt, _header = load_checkpoint(args.checkpoint, expected_vocab_hash=vocab.token_hash())
    return Predictor(model, vocab, max_allowed=args.max_allowed), _sha256(args.checkpoint)


# -- subcommand implementations ----------------------------------------------


def _cmd_toygen(args) -> int:
    functions = toygen.generate(args.functions, args.dup_rate, args.seed)
    corpus.save_dataset(functions, args.out)
    _write_manifest(args.out, "toygen", args, [], [args.out])
    counts = {}
    for fn in functions:
        counts[fn.split] = counts.get(fn.split, 0) + 1
    print(f"wrote {len(functions)} functions to {args.out} {counts}")
    return EXIT_OK


def _cmd_corpus(args) -> int:
    functions, report = corpus.load_dataset(args.data)
    for lineno, message in report.errors:
        print(f"{args.data}:{lineno}: {message}", file=sys.stderr)
    if not functions:
        raise DatasetError("no valid records in dataset")
    train_fns = [f for f in functions if f.split == "train"]
    eval_fns = [f for f in functions if f.split != "train"]
    train_canons = [corpus.canonicalize(f) for f in train_fns]
    recomputed = any(f.body_in_train is None for f in eval_fns)
    eval_fns = corpus.tag_body_in_train(train_canons, eval_fns)
    canons = train_canons + [corpus.canonicalize(f) for f in eval_fns]
    os.makedirs(args.out_dir, exist_ok=True)
    text_path = os.path.join(args.out_dir, "corpus.txt")
    index_path = os.path.join(args.out_dir, "corpus.index.json")
    corpus.write_canonical_corpus(canons, text_path, index_path)
    _write_manifest(text_path, "corpus", args, [args.data], [text_path, index_path])
    tagged = sum(1 for f in eval_fns if f.body_in_train)
    print(
        f"splits {report.split_counts}; {len(report.errors)} bad lines; "
        f"body-in-train {tagged}/{len(eval_fns)}"
        + (" (recomputed)" if recomputed else " (from dataset)")
    )
    return EXIT_OK if not report.errors or args.allow_errors else EXIT_DATA


def _cmd_tokenizer(args) -> int:
    with open(args.corpus, "rb") as f:
        data = f.read()
    vocab = bpe.train_bpe(data, args.vocab_size, args.max_merges, args.max_token_length)
    tokens_path, merges_path = _vocab_paths(args.out)
    bpe.save_vocab(vocab, tokens_path, merges_path)
    _write_manifest(tokens_path, "tokenizer", args, [args.corpus], [tokens_path, merges_path])
    print(f"vocab of {vocab.size} tokens ({len(vocab.merges)} merges) -> {args.out}.*")
    return EXIT_OK


def _load_corpus_instances(args, vocab):
    canons = corpus.read_canonical_corpus(args.corpus_text, args.corpus_index)
    instances = build_instances(canons, vocab)
    train = [i for i in instances if i.split == "train"]
    val = [i for i in instances if i.split == "validation"]
    return train, val


def _train_config(args, objective: str) -> TrainConfig:
    return TrainConfig(
        objective=objective,
        batch_sequences=args.batch,
        micro_batch=args.micro_batch,
        max_epochs=args.epochs,
        peak_lr=args.lr,
        warmup_steps=args.warmup,
        weight_decay=args.weight_decay,
        dropout=args.dropout,
        seed=args.seed,
    )


def _cmd_pretrain(args) -> int:
    tokens_path, merges_path = _vocab_paths(args.vocab)
    vocab = bpe.load_vocab(tokens_path, merges_path)
    train, val = _load_corpus_instances(args, vocab)
    config = preset(args.preset, vocab.size, dropout=args.dropout)
    result = pretrain(
        train, vocab, config, _train_config(args, args.objective),
        val_instances=val, log_path=args.log,
    )
    save_checkpoint(
        args.out,
        result.model,
        vocab.token_hash(),
        optimizer_state=result.optimizer.state(),
        meta={"objective": args.objective, "epochs": result.epochs_run, "seed": args.seed},
    )
    _write_manifest(
        args.out, "pretrain", args,
        [args.corpus_text, args.corpus_index, tokens_path, merges_path],
        [args.out],
    )
    if result.diverged:
        print("training diverged; checkpoint holds the last good epoch", file=sys.stderr)
        return EXIT_RUNTIME
    last = result.log[-1]["loss"] if result.log else float("nan")
    ppl = result.val_perplexity[-1] if result.val_perplexity else None
    print(f"pretrained {result.epochs_run} epochs; final loss {last:.4f}; val ppl {ppl}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    tokens_path, merges_path = _vocab_paths(args.vocab)
    vocab = bpe.load_vocab(tokens_path, merges_path)
    train, val = _load_corpus_instances(args, vocab)
    model, _opt, header = load_checkpoint(args.init, expected_vocab_hash=vocab.token_hash())
    result = finetune(
        model, vocab, train, _train_config(args, "cmlm"),
        val_instances=val, log_path=args.log,
        expected_vocab_hash=header["vocab_hash"],
    )
    save_checkpoint(
        args.out,
        result.model,
        vocab.token_hash(),
        optimizer_state=result.optimizer.state(),
        meta={"objective": "cmlm", "epochs": result.epochs_run, "seed": args.seed,
              "init": str(args.init)},
    )
    _write_manifest(
        args.out, "finetune", args,
        [args.corpus_text, args.corpus_index, tokens_path, merges_path, args.init],
        [args.out],
    )
    if result.diverged:
        print("training diverged; checkpoint holds the last good epoch", file=sys.stderr)
        return EXIT_RUNTIME
    last = result.log[-1]["loss"] if result.log else float("nan")
    print(f"finetuned {result.epochs_run} epochs; final loss {last:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    _default_model_paths(args)
    canons = corpus.read_canonical_corpus(args.corpus_text, args.corpus_index)
    if args.max_allowed == "auto":
        tokens_path, merges_path = _vocab_paths(args.vocab)
        vocab = bpe.load_vocab(tokens_path, merges_path)
        args.max_allowed = derive_max_allowed(build_instances(canons, vocab))
    else:
        args.max_allowed = int(args.max_allowed)
    predictor, checkpoint_hash = _load_predictor(args)
    chosen = [c for c in canons if c.split == args.split]
    if not chosen:
        raise DatasetError(f"no functions in split {args.split!r}")
    predictions = evalmetrics.evaluate_variables(predictor, chosen, args.mode, k=10)
    if args.split == "train":
        for p in predictions:
            if p.body_in_train is None:
                p.body_in_train = True
    report = evalmetrics.build_report(
        predictions,
        mode=args.mode,
        max_allowed=args.max_allowed,
        dataset_hash=_sha256(args.corpus_index),
        checkpoint_hash=checkpoint_hash,
        body_tags_recomputed=True,
    )
    print(report.to_text())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
        _write_manifest(
            args.out, "eval", args,
            [args.corpus_text, args.corpus_index, args.checkpoint],
            [args.out],
        )
    return EXIT_OK


def _cmd_predict(args) -> int:
    _default_model_paths(args)
    predictor, _hash = _load_predictor(args)
    if args.input == "-":
        payload = json.load(sys.stdin)
    else:
        with open(args.input, encoding="utf-8") as f:
            payload = json.load(f)
    slots = {
        s["placeholder"]: [tuple(sp) for sp in s["spans"]] for s in payload["slots"]
    }
    oracle_counts = {
        s["placeholder"]: s["count"] for s in payload["slots"] if s.get("count") is not None
    }
    request = InferenceRequest(
        text=payload["code"],
        slots=slots,
        accepted=payload.get("accepted", {}),
        k=args.k,
        mode=payload.get("mode", args.mode),
        oracle_counts=oracle_counts,
    )
    suggestions = predictor.refine_with_accepted(request)
    out = {
        name: [c.as_dict() for c in ranked] for name, ranked in suggestions.items()
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app_from_paths

    _default_model_paths(args)
    tokens_path, merges_path = _vocab_paths(args.vocab)
    app = create_app_from_paths(
        args.checkpoint, tokens_path, merges_path,
        max_allowed=args.max_allowed, max_body_bytes=args.max_body_bytes,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# -- argument wiring -----------------------------------------------------------


def _build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="varnamer", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    commands: dict[str, _Parser] = {}

    def cmd(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--config", default=None, help="JSON file with flag defaults")
        commands[name] = p
        return p

    p = cmd("toygen", _cmd_toygen, "generate the synthetic desk-scale dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--functions", type=int, default=200)
    p.add_argument("--dup-rate", type=float, default=0.10, dest="dup_rate")
    p.add_argument("--seed", type=int, default=7)

    p = cmd("corpus", _cmd_corpus, "build the canonical corpus, splits and tags")
    p.add_argument("--data", required=True, help="line-delimited dataset")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--allow-errors", action="store_true", dest="allow_errors")

    p = cmd("tokenizer", _cmd_tokenizer, "train the BPE vocabulary")
    p.add_argument("--corpus", required=True, help="canonical corpus text file")
    p.add_argument("--vocab-size", type=int, required=True, dest="vocab_size")
    p.add_argument("--max-merges", type=int, default=50_000, dest="max_merges")
    p.add_argument("--max-token-length", type=int, default=None, dest="max_token_length",
                   help="cap merged token length in bytes (keeps long words split)")
    p.add_argument("--out", required=True, help="output path prefix")

    def train_flags(p, objective_choices=None):
        p.add_argument("--corpus-text", required=True, dest="corpus_text")
        p.add_argument("--corpus-index", required=True, dest="corpus_index")
        p.add_argument("--vocab", required=True, help="vocab path prefix")
        p.add_argument("--out", required=True, help="checkpoint output path")
        p.add_argument("--log", default=None, help="append-only train log (jsonl)")
        p.add_argument("--recipe", default=None, choices=sorted(RECIPES),
                       help="named hyperparameter recipe; explicit flags override it")
        p.add_argument("--epochs", type=int, default=40)
        p.add_argument("--batch", type=int, default=1024)
        p.add_argument("--micro-batch", type=int, default=16, dest="micro_batch")
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--warmup", type=int, default=10_000)
        p.add_argument("--weight-decay", type=float, default=0.01, dest="weight_decay")
        p.add_argument("--dropout", type=float, default=0.1)
        p.add_argument("--seed", type=int, default=0)
        if objective_choices:
            p.add_argument("--objective", choices=objective_choices, default=objective_choices[0])

    p = cmd("pretrain", _cmd_pretrain, "pre-train with a masked-LM objective")
    train_flags(p, objective_choices=["mlm_ww", "mlm"])
    p.add_argument("--preset", default="varbert-toy",
                   choices=["varbert-base", "varbert-small", "varbert-toy"])

    p = cmd("finetune", _cmd_finetune, "finetune with the constrained objective")
    train_flags(p)
    p.add_argument("--init", required=True, help="pretrained checkpoint to start from")

    p = cmd("eval", _cmd_eval, "evaluate a checkpoint and emit a report")
    p.add_argument("--corpus-text", required=True, dest="corpus_text")
    p.add_argument("--corpus-index", required=True, dest="corpus_index")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None, help="vocab path prefix")
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--mode", choices=["heuristic", "oracle"], default="heuristic")
    p.add_argument("--max-allowed", default="auto", dest="max_allowed",
                   help="count-sweep bound; 'auto' derives it from train-split stats")
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = cmd("predict", _cmd_predict, "predict names for one function")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--input", default="-", help="request JSON file, or - for stdin")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=["heuristic", "oracle"], default="heuristic")
    p.add_argument("--max-allowed", type=int, default=7, dest="max_allowed")

    p = cmd("serve", _cmd_serve, "run the prediction service")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8571)
    p.add_argument("--max-allowed", type=int, default=7, dest="max_allowed")
    p.add_argument("--max-body-bytes", type=int, default=8 * 1024 * 1024, dest="max_body_bytes")

    return parser, commands


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = _build_parser()
    try:
        # A --config file or --recipe supplies defaults; explicit flags override.
        if argv and argv[0] in commands and "--config" in argv:
            cfg_path = argv[argv.index("--config") + 1]
            with open(cfg_path, encoding="utf-8") as f:
                commands[argv[0]].set_defaults(**json.load(f))
        if argv and argv[0] in commands and "--recipe" in argv:
            name = argv[argv.index("--recipe") + 1]
            if name in RECIPES:
                defaults = {
                    _RECIPE_DESTS[k]: v
                    for k, v in RECIPES[name].items()
                    if k in _RECIPE_DESTS
                }
                commands[argv[0]].set_defaults(**defaults)
        args = parser.parse_args(argv)
        np.random.seed(getattr(args, "seed", 0))  # belt and braces; code uses Generators
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, bpe.VocabError, EvalError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ModelError, InferenceError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
