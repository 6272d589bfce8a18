"""Command-line entry point: ``rstsplit <command> ...``.

Every flag can also come from a JSON config file (``--config`` or the
``RSTSPLIT_CONFIG`` environment variable).  Top-level keys apply to all
commands, a nested object under a command name applies to that command only,
and explicit flags always win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .document import (CorpusFormatError, DocumentError, dump_corpus, generate_synthetic_corpus,
                       load_corpus)
from .inference import SearchTooLarge, predict_corpus
from .metrics import MetricError, evaluate
from .model import E2E, GOLD_EDU, MODES, ModelConfig
from .training import TrainConfig, TrainingError, train
from .tree import TreeError

CONFIG_ENV = "RSTSPLIT_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("rstsplit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- commands ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    docs = generate_synthetic_corpus(args.docs, args.vocab, args.mean_tokens, args.seed)
    dump_corpus(docs, args.output, args.tree_format)
    print(f"wrote {len(docs)} documents to {args.output}")
    return EXIT_OK


def cmd_validate(args) -> int:
    for path in args.corpus:
        docs = load_corpus(path)
        edus = [d.num_edus for d in docs if d.num_edus is not None]
        extra = f", {sum(edus)} EDUs" if edus else ""
        print(f"{path}: ok ({len(docs)} documents{extra})")
    return EXIT_OK


def cmd_convert(args) -> int:
    docs = load_corpus(args.input)
    dump_corpus(docs, args.output, args.to)
    print(f"wrote {len(docs)} documents to {args.output} ({args.to} trees)")
    return EXIT_OK


def _check_mode_fields(docs, mode, path):
    for doc in docs:
        if mode == GOLD_EDU and doc.edu_boundaries is None and doc.gold_tree is None:
            raise DocumentError(f"{path}: document {doc.id!r} has no edu_ends (needed in "
                                f"{GOLD_EDU} mode)")


def _dev_split(docs, fraction, seed):
    order = np.random.default_rng(seed).permutation(len(docs))
    size = max(1, int(round(fraction * len(docs))))
    dev_idx = set(int(i) for i in order[:size])
    train_docs = [d for i, d in enumerate(docs) if i not in dev_idx]
    dev_docs = [d for i, d in enumerate(docs) if i in dev_idx]
    return train_docs, dev_docs


def cmd_train(args) -> int:
    corpus = load_corpus(args.train)
    _check_mode_fields(corpus, args.mode, args.train)
    if args.dev:
        dev = load_corpus(args.dev)
        _check_mode_fields(dev, args.mode, args.dev)
    elif len(corpus) < 2:
        raise UsageError("need --dev or at least two training documents")
    else:
        corpus, dev = _dev_split(corpus, args.dev_fraction, args.dev_seed)
    model_cfg = ModelConfig(word_dim=args.word_dim, char_dim=args.char_dim,
                            hidden=args.hidden, enc_layers=args.enc_layers,
                            dec_hidden=args.hidden, dec_layers=args.dec_layers,
                            span_dim=args.hidden, mlp_dim=args.mlp_dim, label_dim=args.mlp_dim,
                            boundary_lstm=not args.no_boundary_lstm,
                            decoder_init=args.decoder_init)
    cfg = TrainConfig(learning_rate=args.lr, batch_size_tokens=args.batch_tokens,
                      max_epochs=args.epochs, seed=args.seed, mode=args.mode,
                      beam_width_eval=args.beam, sentence_guidance=not args.no_sentence_guidance,
                      clip_norm=args.clip, eval_every=args.eval_every)

    def report(info):
        print(f"epoch {info['epoch']:4d}  span {info['span']:6.2f}  nuc {info['nuc']:6.2f}  "
              f"rel {info['rel']:6.2f}  full {info['full']:6.2f}  seg {info['seg']:6.2f}"
              + ("  *" if info["improved"] else ""), flush=True)

    result = train(corpus, dev, cfg, model_cfg, checkpoint=Path(args.checkpoint),
                   embeddings=args.embeddings, log_path=args.log, on_epoch=report)
    print(f"best dev Full F1 {result.best_full_f1:.2f}; checkpoint {args.checkpoint}")
    return EXIT_OK


def cmd_parse(args) -> int:
    params = load_checkpoint(args.checkpoint)
    docs = load_corpus(args.input)
    _check_mode_fields(docs, args.mode, args.input)
    preds = predict_corpus(docs, params, args.mode, args.beam,
                           guidance=not args.no_sentence_guidance, e2e_beam=args.e2e_beam,
                           workers=args.workers)
    dump_corpus(preds, args.output)
    print(f"parsed {len(preds)} documents into {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = load_corpus(args.pred)
    gold = load_corpus(args.gold)
    report, rows = evaluate(preds, gold)
    print(report.table())
    print(report.to_json())
    if args.per_doc:
        with open(args.per_doc, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rstsplit", description="Top-down RST discourse parsing by boundary splitting.")
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic corpus")
    g.add_argument("--docs", type=int, default=50)
    g.add_argument("--vocab", type=int, default=200)
    g.add_argument("--mean-tokens", type=int, default=30)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tree-format", choices=("splits", "bracket"), default="splits")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    v = sub.add_parser("validate", help="check corpus files")
    v.add_argument("corpus", nargs="+")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("convert", help="rewrite trees as split lists or brackets")
    c.add_argument("input")
    c.add_argument("--to", choices=("splits", "bracket"), required=True)
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(func=cmd_convert)

    def decoding(sp):
        sp.add_argument("--mode", choices=MODES, default=E2E)
        sp.add_argument("--beam", type=int, default=20)
        sp.add_argument("--no-sentence-guidance", action="store_true")
        sp.add_argument("--workers", type=int, default=1)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--train", required=True)
    t.add_argument("--dev")
    t.add_argument("--dev-fraction", type=float, default=0.1)
    t.add_argument("--dev-seed", type=int, default=0)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--embeddings")
    t.add_argument("--log")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.002)
    t.add_argument("--batch-tokens", type=int, default=10000)
    t.add_argument("--clip", type=float, default=5.0)
    t.add_argument("--eval-every", type=int, default=1)
    t.add_argument("--word-dim", type=int, default=100)
    t.add_argument("--char-dim", type=int, default=50)
    t.add_argument("--hidden", type=int, default=400)
    t.add_argument("--enc-layers", type=int, default=3)
    t.add_argument("--dec-layers", type=int, default=3)
    t.add_argument("--mlp-dim", type=int, default=500)
    t.add_argument("--decoder-init", choices=("learned", "zero"), default="learned")
    t.add_argument("--no-boundary-lstm", action="store_true")
    decoding(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("parse", help="parse a corpus with a trained model")
    r.add_argument("input")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--e2e-beam", action="store_true",
                   help="use beam search in end-to-end mode too")
    r.add_argument("-o", "--output", required=True)
    decoding(r)
    r.set_defaults(func=cmd_parse)

    e = sub.add_parser("eval", help="score predictions against gold trees")
    e.add_argument("pred")
    e.add_argument("gold")
    e.add_argument("--per-doc", help="write per-document scores as JSON lines")
    e.set_defaults(func=cmd_eval)
    return p


def _apply_config(parser, argv):
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return
    try:
        conf = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(conf, dict):
        raise UsageError(f"config {path}: expected an object")
    names = {a.dest for a in parser._actions}
    commands = {}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            commands = action.choices
    shared = {k.replace("-", "_"): v for k, v in conf.items() if k not in commands}
    for name, sp in commands.items():
        dests = {a.dest for a in sp._actions}
        own = {k.replace("-", "_"): v for k, v in conf.get(name, {}).items()}
        unknown = set(own) - dests
        if unknown:
            raise UsageError(f"config {path}: unknown option(s) for {name}: {sorted(unknown)}")
        sp.set_defaults(**{k: v for k, v in shared.items() if k in dests}, **own)
        names |= dests
    unknown = set(shared) - names
    if unknown:
        raise UsageError(f"config {path}: unknown option(s) {sorted(unknown)}")
    # defaults set via set_defaults do not satisfy required=True; relax those
    for sp in commands.values():
        for a in sp._actions:
            if a.required and a.dest in sp._defaults:
                a.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if getattr(args, "mode", E2E) not in MODES:
            raise UsageError(f"unknown mode {args.mode!r}")
        if getattr(args, "beam", 1) < 1:
            raise UsageError("--beam must be at least 1")
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusFormatError, DocumentError, TreeError, MetricError, CheckpointError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, SearchTooLarge, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
