"""``multifit`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
import argparse
import sys
from typing import Callable, Sequence

from multifit.cli import commands
from multifit.exception import MultiFitException
from multifit.logger import GLOBAL_LOGGER as log, bind_contextvars, clear_contextvars
from multifit.utils.config_loader import load_config

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


# subcommand -> (handler, {argparse dest: dotted config key})
COMMANDS: dict[str, tuple[Callable, dict[str, str]]] = {
    "tok-train": (commands.tok_train, {
        "kind": "tokenizer.kind", "vocab": "tokenizer.target_vocab", "coverage": "tokenizer.char_coverage"}),
    "tok-encode": (commands.tok_encode, {}),
    "lm-pretrain": (commands.lm_pretrain, {"epochs": "train.epochs_pretrain"}),
    "lm-finetune": (commands.lm_finetune, {"epochs": "train.epochs_finetune"}),
    "clf-train": (commands.clf_train, {"epochs": "train.epochs_classifier"}),
    "bootstrap": (commands.bootstrap, {
        "epochs": "train.epochs_classifier", "confidence_threshold": "bootstrap.confidence_threshold"}),
    "noise-bench": (commands.noise_bench, {
        "grid": "noise.grid", "seeds": "noise.seeds", "workers": "noise.workers"}),
    "speed-bench": (commands.speed_bench, {
        "cell": "bench.cell", "vocab": "bench.vocab_size", "emb": "bench.emb_dim", "hidden": "bench.hidden",
        "layers": "bench.n_layers", "bptt": "bench.bptt", "batch": "bench.batch", "reps": "bench.reps"}),
    "grad-check": (commands.grad_check, {"tolerance": "gradcheck.tolerance", "eps": "gradcheck.eps"}),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run config file of 'key = value' lines")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one dotted config key (repeatable)")
    common.add_argument("--seed", type=int, help="random seed (overrides MULTIFIT_SEED)")
    common.add_argument("--metrics", help="append JSON-lines metrics to this file")

    parser = _Parser(prog="multifit", description="Subword QRNN language models and classifiers.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("tok-train", parents=[common], help="train a tokenizer on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["unigram", "word"])
    p.add_argument("--vocab", type=int, help="number of regular pieces (specials excluded)")
    p.add_argument("--coverage", type=float)

    p = sub.add_parser("tok-encode", parents=[common], help="encode text with a tokenizer")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--input", help="file with one text per line")
    p.add_argument("--bos", action="store_true")
    p.add_argument("--eos", action="store_true")
    view = p.add_mutually_exclusive_group()
    view.add_argument("--pieces", action="store_true", help="print pieces instead of ids")
    view.add_argument("--decode", action="store_true", help="print the decoded text")

    p = sub.add_parser("lm-pretrain", parents=[common], help="pretrain a language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--valid")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("lm-finetune", parents=[common], help="fine-tune a language model on target text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--valid")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("clf-train", parents=[common], help="fine-tune a classifier")
    p.add_argument("--checkpoint", help="language model checkpoint; omit for a random encoder")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--test")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("bootstrap", parents=[common], help="train a classifier on teacher pseudo labels")
    p.add_argument("--checkpoint")
    p.add_argument("--texts", required=True, help="unlabeled '<id>\\t<text>' file")
    p.add_argument("--teacher", required=True, help="teacher predictions '<id>\\t<class>[\\t<conf>]'")
    p.add_argument("--gold", help="labeled '<id>\\t<class>\\t<text>' evaluation file")
    p.add_argument("--classes", help="comma-separated class names in id order")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--confidence-threshold", dest="confidence_threshold", type=float)

    p = sub.add_parser("noise-bench", parents=[common], help="label-noise robustness table")
    p.add_argument("--checkpoint")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True, help="TSV with p, acc_pretrained, acc_random, baseline")
    p.add_argument("--plot")
    p.add_argument("--grid", help="comma-separated noise probabilities")
    p.add_argument("--seeds", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("speed-bench", parents=[common], help="QRNN versus LSTM per-batch time")
    p.add_argument("--cell", choices=["qrnn", "lstm", "both"])
    p.add_argument("--vocab", type=int)
    p.add_argument("--emb", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--out", help="optional TSV of the results")

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of a tiny LM")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--eps", type=float)
    return parser


def _overrides(args: argparse.Namespace, flag_keys: dict[str, str]) -> list[str]:
    pairs = list(args.set)
    for dest, key in flag_keys.items():
        value = getattr(args, dest, None)
        if value is not None:
            pairs.append(f"{key}={value}")
    if args.seed is not None:
        pairs.append(f"seed={args.seed}")
    return pairs


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    handler, flag_keys = COMMANDS[args.command]
    clear_contextvars()
    bind_contextvars(command=args.command)
    log.info("Command started")
    try:
        config = load_config(args.config, _overrides(args, flag_keys))
        bind_contextvars(seed=config.seed)
        code = handler(args, config)
        log.info("Command finished", exit_code=code)
        return code
    except MultiFitException as e:
        log.error("Command failed", error=e.error_message, exit_code=e.exit_code)
        print(f"error: {e.error_message}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        # output files (metrics stream, result tables) that cannot be written
        log.error("Command failed", error=str(e), exit_code=EXIT_DATA)
        print(f"error: {e.filename or ''}: {e.strerror or e}", file=sys.stderr)
        return EXIT_DATA
    finally:
        clear_contextvars()


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
