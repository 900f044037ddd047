"""Command line entry points.

Exit codes: 0 on success, 2 for configuration or usage problems, 1 for
runtime failures (aborted training, unreadable corpora, bad checkpoints).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError
from .corpus_io import CorpusFormatError
from .metrics import DEFAULT_BLEU_THRESHOLD
from .model import CheckpointError, UnknownIndicatorError
from .train import TrainAbort


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="translabel",
        description="Train and run sequence models that emit role-bracketed text.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override the run seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for decoding")
        p.add_argument("--precision", type=int, default=None, choices=(32, 64),
                       help="float width for model arithmetic")

    p = sub.add_parser("train", help="train a model from a YAML config")
    p.add_argument("config")
    p.add_argument("--resume", default=None,
                   help="training state file to continue from")
    common(p)

    p = sub.add_parser("label", help="annotate a column file with a trained model")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--indicator", required=True,
                   help="target stream to decode, e.g. EN-SRL")
    p.add_argument("--format", default="conll09", choices=("conll09", "conll05"))
    p.add_argument("--max-len", type=int, default=100)
    common(p)

    p = sub.add_parser("generate",
                       help="produce labeled target-language text and filter it")
    p.add_argument("checkpoint")
    p.add_argument("input", help="predicate-marked source sentences")
    p.add_argument("records", help="where to write the per-sentence report")
    p.add_argument("--reverse-checkpoint", required=True,
                   help="target-to-source model used for back-translation")
    p.add_argument("--indicator", required=True)
    p.add_argument("--kept-corpus", default=None,
                   help="write kept outputs as a parallel training corpus")
    p.add_argument("--emit-conll", default=None,
                   help="write kept outputs as a dependency column file")
    p.add_argument("--threshold", type=float, default=DEFAULT_BLEU_THRESHOLD)
    p.add_argument("--max-len", type=int, default=100)
    common(p)

    p = sub.add_parser("augment",
                       help="retrain with growing slices of generated data")
    p.add_argument("config")
    p.add_argument("generated", help="generated sentences as a dependency column file")
    p.add_argument("--portions", default="0.25,0.5",
                   help="comma separated fractions of the generated data")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--test", default=None,
                   help="fixed gold test file; defaults to the training gold")
    common(p)

    p = sub.add_parser("score", help="compute text overlap or argument F1")
    p.add_argument("kind", choices=("bleu", "f1"))
    p.add_argument("system", help="hypothesis text file or predicted column file")
    p.add_argument("reference", help="reference text file or gold column file")
    p.add_argument("--mode", default="dep", choices=("dep", "span"),
                   help="argument matching scheme for f1")
    p.add_argument("--json-out", default=None)
    common(p)

    p = sub.add_parser("vocab", help="build and save the vocabulary for a config")
    p.add_argument("config")
    p.add_argument("output")
    common(p)

    p = sub.add_parser("gradcheck",
                       help="verify gradients against finite differences")
    common(p)

    return parser


def run(args: argparse.Namespace, argv: list[str]) -> int:
    from . import pipeline

    if args.command == "train":
        result = pipeline.cmd_train(args.config, seed=args.seed,
                                    precision=args.precision,
                                    resume=args.resume, argv=argv)
        print(f"best checkpoint: {result.best_checkpoint}")
        print(f"stopped after epoch {result.epochs_run} "
              f"({result.state.stop_reason})")
        return 0

    if args.command == "label":
        summary = pipeline.cmd_label(
            args.checkpoint, args.input, args.output, args.indicator,
            input_format=args.format, max_len=args.max_len,
            threads=args.threads, argv=argv)
        print(f"labeled {summary.n_instances} instances "
              f"({summary.n_repaired} repaired, "
              f"{summary.n_dropped_args} arguments dropped, "
              f"{summary.truncated} truncated)")
        return 0

    if args.command == "generate":
        kept, rejected = pipeline.cmd_generate(
            args.checkpoint, args.reverse_checkpoint, args.input,
            args.indicator, args.records, kept_corpus_path=args.kept_corpus,
            conll_path=args.emit_conll, threshold=args.threshold,
            max_len=args.max_len, threads=args.threads, argv=argv)
        print(f"kept {kept} of {kept + rejected} outputs "
              f"(threshold {args.threshold:g})")
        return 0

    if args.command == "augment":
        portions = [float(p) for p in args.portions.split(",") if p.strip()]
        rows = pipeline.cmd_augment(args.config, args.generated, portions,
                                    args.out_dir, test_path=args.test,
                                    seed=args.seed, argv=argv)
        print(pipeline.format_augment_table(rows), end="")
        return 0

    if args.command == "score":
        if args.kind == "bleu":
            payload = pipeline.cmd_score_bleu(args.system, args.reference,
                                              out_path=args.json_out)
            print(pipeline.format_bleu_table(payload), end="")
        else:
            payload = pipeline.cmd_score_f1(args.system, args.reference,
                                            mode=args.mode,
                                            out_path=args.json_out)
            print(json.dumps(payload, indent=2, sort_keys=True))
        return 0

    if args.command == "vocab":
        vocab = pipeline.cmd_vocab(args.config, args.output)
        print(f"{len(vocab.words)} words, {len(vocab.labels)} label symbols "
              f"-> {args.output}")
        return 0

    if args.command == "gradcheck":
        ok, lines = pipeline.cmd_gradcheck(precision=args.precision or 64)
        for line in lines:
            print(line)
        return 0 if ok else 1

    raise AssertionError(f"unhandled command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; keep its codes
        return int(exc.code or 0)
    try:
        return run(args, argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusFormatError, CheckpointError, UnknownIndicatorError,
            TrainAbort, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
