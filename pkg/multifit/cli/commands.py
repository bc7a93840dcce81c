"""Subcommand handlers. Each takes the parsed arguments and the effective run
configuration and returns a process exit code."""
import argparse
from contextlib import ExitStack
from dataclasses import replace
from pathlib import Path

import numpy as np

from multifit.bootstrap import (
    bootstrap_train,
    ingest_teacher_predictions,
    noise_robustness_run,
)
from multifit.exception import ConfigError, DataError
from multifit.logger import GLOBAL_LOGGER as log
from multifit.network import ModelConfig, RecurrentState, build_language_model, lm_forward
from multifit.numerics import GradCheckReport, check_gradients, precision
from multifit.tokenizer import (
    TokenizerModel,
    UnigramTrainer,
    build_word_model,
    decode,
    encode,
    load_model,
    save_model,
)
from multifit.training import (
    cross_entropy,
    evaluate_classifier,
    finetune_classifier,
    finetune_lm,
    pretrain_lm,
    read_corpus,
    read_labeled_tsv,
    read_unlabeled_tsv,
)
from multifit.cli.speed import BenchDims, compare_cells
from multifit.utils.checkpoint import load_checkpoint, save_checkpoint
from multifit.utils.config_loader import RunConfig
from multifit.utils.metrics import MetricsLog


def _metrics(args: argparse.Namespace, config: RunConfig, stack: ExitStack) -> MetricsLog:
    if not getattr(args, "metrics", None):
        return MetricsLog()
    Path(args.metrics).parent.mkdir(parents=True, exist_ok=True)
    stream = stack.enter_context(open(args.metrics, "a", encoding="utf-8"))
    return MetricsLog(stream, config.settings())


def _model_config(config: RunConfig, tokenizer: TokenizerModel) -> ModelConfig:
    # the tokenizer decides the vocabulary size
    model = config.model_config()
    if model.vocab_size != tokenizer.vocab_size:
        log.info("Model vocab_size follows the tokenizer", configured=model.vocab_size, tokenizer=tokenizer.vocab_size)
        model = replace(model, vocab_size=tokenizer.vocab_size)
    return model


def _settings(config: RunConfig, model: ModelConfig) -> dict[str, str]:
    settings = config.settings()
    settings["model.vocab_size"] = str(model.vocab_size)
    return settings


# ---------- tokenizer ----------
def tok_train(args: argparse.Namespace, config: RunConfig) -> int:
    corpus = read_corpus(args.corpus)
    if not corpus:
        raise DataError(f"corpus {args.corpus} is empty")
    kind = config["tokenizer.kind"]
    if kind == "word":
        model = build_word_model(corpus, max_size=config["tokenizer.word_max_size"])
    elif kind == "unigram":
        trainer = UnigramTrainer(
            target_vocab=config["tokenizer.target_vocab"],
            char_coverage=config["tokenizer.char_coverage"],
            seed_multiplier=config["tokenizer.seed_multiplier"],
            max_piece_length=config["tokenizer.max_piece_length"],
            em_iterations=config["tokenizer.em_iterations"],
            prune_fraction=config["tokenizer.prune_fraction"],
        )
        model = trainer.train(corpus)
    else:
        raise ConfigError(f"tokenizer.kind must be 'unigram' or 'word', got {kind!r}")
    save_model(args.out, model)
    print(f"{kind} tokenizer with {model.vocab_size} pieces written to {args.out}")
    return 0


def tok_encode(args: argparse.Namespace, config: RunConfig) -> int:
    model = load_model(args.model)
    lines = [args.text] if args.text is not None else read_corpus(args.input)
    for line in lines:
        ids = encode(line, model, add_bos=args.bos, add_eos=args.eos)
        if args.pieces:
            print(" ".join(model.piece(i) for i in ids))
        elif args.decode:
            print(decode(ids, model))
        else:
            print(" ".join(str(i) for i in ids))
    return 0


# ---------- language model ----------
def lm_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    tokenizer = load_model(args.tokenizer)
    model = _model_config(config, tokenizer)
    corpus = read_corpus(args.corpus)
    valid = read_corpus(args.valid) if args.valid else None
    with ExitStack() as stack:
        metrics = _metrics(args, config, stack)
        result = pretrain_lm(corpus, tokenizer, model, config.train_config(), config.seed,
                             valid_corpus=valid, metrics=metrics, settings=_settings(config, model))
    save_checkpoint(args.out, result.checkpoint)
    print(f"language model written to {args.out}")
    return 0


def lm_finetune(args: argparse.Namespace, config: RunConfig) -> int:
    tokenizer = load_model(args.tokenizer)
    checkpoint = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args.corpus)
    valid = read_corpus(args.valid) if args.valid else None
    with ExitStack() as stack:
        metrics = _metrics(args, config, stack)
        result = finetune_lm(checkpoint, corpus, tokenizer, config.train_config(), config.seed,
                             valid_corpus=valid, metrics=metrics,
                             settings=_settings(config, checkpoint.model_config))
    save_checkpoint(args.out, result.checkpoint)
    print(f"fine-tuned language model written to {args.out}")
    return 0


# ---------- classification ----------
def clf_train(args: argparse.Namespace, config: RunConfig) -> int:
    tokenizer = load_model(args.tokenizer)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    train = read_labeled_tsv(args.train, split="train")
    valid = read_labeled_tsv(args.valid, class_names=train.class_names, split="valid")
    model = checkpoint.model_config if checkpoint else _model_config(config, tokenizer)
    with ExitStack() as stack:
        metrics = _metrics(args, config, stack)
        result = finetune_classifier(checkpoint, train, valid, tokenizer, config.train_config(), config.seed,
                                     model_config=model, metrics=metrics, settings=_settings(config, model))
    save_checkpoint(args.out, result.checkpoint)
    print(f"classifier written to {args.out} (best validation accuracy {result.best_accuracy})")
    if args.test:
        test = read_labeled_tsv(args.test, class_names=train.class_names, split="test")
        cp = result.checkpoint
        accuracy = evaluate_classifier(cp.params, cp.model_config, test, tokenizer,
                                       config["train.clf_batch"]).accuracy
        print(f"test accuracy {accuracy:.4f}")
    return 0


def bootstrap(args: argparse.Namespace, config: RunConfig) -> int:
    tokenizer = load_model(args.tokenizer)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    texts = read_unlabeled_tsv(args.texts)
    gold = read_labeled_tsv(args.gold, split="gold") if args.gold else None
    class_names = args.classes.split(",") if args.classes else (gold.class_names if gold else None)
    pseudo = ingest_teacher_predictions(args.teacher, n_classes=len(class_names) if class_names else None)
    model = checkpoint.model_config if checkpoint else _model_config(config, tokenizer)
    with ExitStack() as stack:
        metrics = _metrics(args, config, stack)
        result = bootstrap_train(
            checkpoint, texts, pseudo, tokenizer, config.train_config(), config.seed,
            gold=gold, class_names=class_names, model_config=model,
            valid_fraction=config["bootstrap.valid_fraction"],
            confidence_threshold=config["bootstrap.confidence_threshold"],
            metrics=metrics, settings=_settings(config, model),
        )
    save_checkpoint(args.out, result.training.checkpoint)
    print(f"student classifier written to {args.out}")
    if result.student_accuracy is not None:
        print(f"student accuracy {result.student_accuracy:.4f}")
    if result.teacher_accuracy is not None:
        print(f"teacher accuracy {result.teacher_accuracy:.4f}")
    return 0


def noise_bench(args: argparse.Namespace, config: RunConfig) -> int:
    tokenizer = load_model(args.tokenizer)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    train = read_labeled_tsv(args.train, split="train")
    test = read_labeled_tsv(args.test, class_names=train.class_names, split="test")
    seeds = [config.seed + i for i in range(config["noise.seeds"])]
    table = noise_robustness_run(
        checkpoint, train, test, tokenizer, config.train_config(),
        grid=config["noise.grid"], seeds=seeds,
        model_config=_model_config(config, tokenizer), workers=config["noise.workers"],
        valid_fraction=config["bootstrap.valid_fraction"], out_path=args.out, plot_path=args.plot,
    )
    print(table.to_csv(sep="\t", index=False, float_format="%.4f"), end="")
    return 0


# ---------- diagnostics ----------
def speed_bench(args: argparse.Namespace, config: RunConfig) -> int:
    bench = config.section("bench")
    dims = BenchDims(vocab_size=bench["vocab_size"], emb_dim=bench["emb_dim"], hidden=bench["hidden"],
                     n_layers=bench["n_layers"], bptt=bench["bptt"], batch=bench["batch"])
    cells = ("qrnn", "lstm") if bench["cell"] == "both" else (bench["cell"],)
    table = compare_cells(dims, cells, reps=bench["reps"], warmup=bench["warmup"], seed=config.seed,
                          out_path=args.out)
    for row in table.itertuples():
        print(f"{row.cell}\t{row.median_ms:.3f} ms/batch\tratio {row.ratio:.3f}")
    return 0


def lm_gradient_check(
    vocab_size: int = 40,
    emb_dim: int = 8,
    hidden_dim: int = 12,
    n_layers: int = 2,
    bptt: int = 5,
    batch: int = 2,
    seed: int = 0,
    eps: float = 1e-6,
    cell: str = "qrnn",
) -> GradCheckReport:
    """Finite-difference check of the full tied-weight LM loss in 64-bit."""
    config = ModelConfig(vocab_size=vocab_size, emb_dim=emb_dim, hidden_dim=hidden_dim, n_layers=n_layers, cell=cell)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, vocab_size, size=(bptt + 1, batch))
    with precision(np.float64):
        params = build_language_model(config, seed)

        def builder():
            def loss_fn():
                state = RecurrentState.zeros(config, batch)
                logits, _ = lm_forward(params, tokens[:-1], state, config)
                return cross_entropy(logits, tokens[1:])

            return params.stored(), loss_fn

        return check_gradients(builder, eps=eps)


def grad_check(args: argparse.Namespace, config: RunConfig) -> int:
    gc = config.section("gradcheck")
    report = lm_gradient_check(gc["vocab_size"], gc["emb_dim"], gc["hidden_dim"], gc["n_layers"],
                               gc["bptt"], gc["batch"], config.seed, gc["eps"])
    print("param\tsize\tmax_rel_err\tmax_abs_err")
    for line in report.lines():
        print(line)
    ok = report.passed(gc["tolerance"])
    print(f"max relative error {report.max_error:.3e} ({'ok' if ok else 'FAILED'}, tolerance {gc['tolerance']:.0e})")
    return 0 if ok else 3
