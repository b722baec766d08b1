"""Command-line surface.

Subcommands: preprocess, synth, train, eval, embed, interpret, verify.
Every command is deterministic given its input bytes, config, and seed.
Exit codes: 0 success, 1 verification failure, 2 usage or input error.

Run configuration is a JSON document with sections `pipeline`, `model`,
`train`, `data` plus a top-level `seed`; unknown keys are rejected and the
fully resolved config is echoed next to each run's outputs.
"""

from __future__ import annotations

import argparse
import os
import string
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .corpus import (
    CorpusError,
    EncodedCorpus,
    PipelineConfig,
    encode_corpus,
    label_table_hash,
    load_corpus,
    load_csv,
    load_newsgroups,
    save_corpus,
)
from .diff import LossConfig
from .interpret import RelevanceOptions, solve_relevance, top_words
from .model import (
    HyperParams,
    classify,
    class_probabilities,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .synth import (
    LdaTrueModel,
    PrototypeLabeler,
    default_benchmark_model,
    sample_corpus,
    save_latents,
)
from .train import TrainConfig, evaluate, train, write_history
from .verify import SUITES


class InputError(Exception):
    """User-facing problem with arguments, config, or input files."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "pipeline": {
        "lowercase": True,
        "punctuation": string.punctuation,
        "stopwords": "default",
        "stem": True,
        "min_count": 1,
        "max_doc_len": None,
    },
    "model": {
        "D": 10,
        "T": 1,
        "depth_z": 1,
        "depth_theta": 1,
        "dropout_w": 0.0,
        "dropout_z": 0.0,
        "dropout_theta": 0.0,
    },
    "train": {
        "batch_size": 100,
        "num_batches": 300,
        "learning_rate": 0.005,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "eval_every": 25,
        "val_fraction": 0.2,
        "class_weights": None,
    },
    "data": {
        "train": None,
        "val": None,
        "out": None,
    },
}


def _merge_config(user: dict, defaults: dict, prefix: str = "") -> dict:
    merged = {}
    for key, default_value in defaults.items():
        if key in user and isinstance(default_value, dict):
            if not isinstance(user[key], dict):
                raise InputError(f"config key '{prefix}{key}' must be an object")
            merged[key] = _merge_config(user[key], default_value, f"{prefix}{key}.")
        elif key in user:
            merged[key] = user[key]
        else:
            merged[key] = default_value
    for key in user:
        if key not in defaults:
            raise InputError(f"unknown config key: '{prefix}{key}'")
    return merged


def load_run_config(path: str | None, seed_override: int | None = None) -> dict:
    user: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {p}")
        try:
            user = serialize.loads(p.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise InputError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise InputError("config root must be a JSON object")
    cfg = _merge_config(user, DEFAULT_CONFIG)
    if seed_override is not None:
        cfg["seed"] = seed_override
    return cfg


def _pipeline_from_config(section: dict) -> PipelineConfig:
    stopwords = section["stopwords"]
    if stopwords == "default":
        from .stopwords import STOPWORDS
        stop_set = STOPWORDS
    elif isinstance(stopwords, list):
        stop_set = frozenset(str(s) for s in stopwords)
    else:
        raise InputError("pipeline.stopwords must be 'default' or a list of words")
    return PipelineConfig(
        lowercase=bool(section["lowercase"]),
        punctuation=str(section["punctuation"]),
        stopwords=stop_set,
        stem=bool(section["stem"]),
        max_doc_len=section["max_doc_len"],
    )


def _hp_from_config(section: dict, num_classes: int) -> HyperParams:
    return HyperParams(
        D=int(section["D"]),
        T=int(section["T"]),
        depth_z=int(section["depth_z"]),
        depth_theta=int(section["depth_theta"]),
        dropout_w=float(section["dropout_w"]),
        dropout_z=float(section["dropout_z"]),
        dropout_theta=float(section["dropout_theta"]),
        C=num_classes,
    )


def _echo_config(cfg: dict, path: Path) -> None:
    path.write_text(serialize.dumps(cfg), encoding="utf-8")


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args.seed)
    pipeline = _pipeline_from_config(cfg["pipeline"])
    if args.format == "newsgroups":
        raw = load_newsgroups(args.input)
    else:
        raw = load_csv(args.input)
    vocab = None
    if args.vocab_from:
        vocab = load_corpus(args.vocab_from).vocab
    corpus, rejected = encode_corpus(raw, pipeline, int(cfg["pipeline"]["min_count"]), vocab)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    Path(str(out) + ".vocab.txt").write_text(
        "\n".join(corpus.vocab.token_of) + "\n", encoding="utf-8")
    Path(str(out) + ".labels.txt").write_text(
        "\n".join(corpus.label_names) + "\n", encoding="utf-8")
    _echo_config(cfg, Path(str(out) + ".config.json"))
    mean_len = float(np.mean([d.length for d in corpus.docs])) if corpus.docs else 0.0
    print(f"V={corpus.vocab_size} M={corpus.num_docs} C={corpus.num_classes} "
          f"mean_doc_len={mean_len:.2f}")
    if raw.skipped:
        print(f"skipped {raw.skipped} malformed input rows "
              f"(lines {', '.join(map(str, raw.skipped_lines[:10]))}"
              f"{'...' if raw.skipped > 10 else ''})")
    if rejected:
        print(f"rejected {rejected} documents empty after encoding")
    return 0


def _model_from_spec(path: str | None) -> tuple[LdaTrueModel, PrototypeLabeler]:
    if path is None or path == "default":
        return default_benchmark_model()
    p = Path(path)
    if not p.is_file():
        raise InputError(f"model spec file not found: {p}")
    spec = serialize.loads(p.read_text(encoding="utf-8"))
    try:
        model = LdaTrueModel(np.array(spec["alpha"]), np.array(spec["beta"]))
        labeler = PrototypeLabeler(np.array(spec["prototypes"]))
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad model spec: {exc}") from exc
    return model, labeler


def cmd_synth(args: argparse.Namespace) -> int:
    model, labeler = _model_from_spec(args.model)
    corpus, latents = sample_corpus(model, args.docs, args.words, labeler, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out / "corpus.txt")
    save_latents(latents, out / "latent.txt")
    manifest = {
        "seed": args.seed,
        "docs": args.docs,
        "words": args.words,
        "topics": model.num_topics,
        "vocab_size": model.vocab_size,
        "alpha": model.alpha.tolist(),
        "class_counts": np.bincount(corpus.labels(), minlength=corpus.num_classes).tolist(),
    }
    (out / "synth_manifest.json").write_text(serialize.dumps(manifest), encoding="utf-8")
    print(f"sampled M={corpus.num_docs} N={args.words} "
          f"V={corpus.vocab_size} C={corpus.num_classes} -> {out}")
    return 0


def _split_validation(corpus: EncodedCorpus, fraction: float, seed: int
                      ) -> tuple[EncodedCorpus, EncodedCorpus | None]:
    if fraction <= 0:
        return corpus, None
    n_val = int(round(corpus.num_docs * fraction))
    if n_val < 1 or n_val >= corpus.num_docs:
        return corpus, None
    perm = np.random.default_rng(seed).permutation(corpus.num_docs)
    val_idx = set(perm[:n_val].tolist())
    train_docs = [d for i, d in enumerate(corpus.docs) if i not in val_idx]
    val_docs = [d for i, d in enumerate(corpus.docs) if i in val_idx]
    return (
        EncodedCorpus(train_docs, corpus.vocab, corpus.label_names),
        EncodedCorpus(val_docs, corpus.vocab, corpus.label_names),
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args.seed)
    corpus_path = args.corpus or cfg["data"]["train"]
    if corpus_path is None:
        raise InputError("no training corpus: pass --corpus or set data.train")
    corpus = load_corpus(corpus_path)
    val_path = args.val or cfg["data"]["val"]
    if val_path is not None:
        val = load_corpus(val_path)
        if val.vocab.token_of != corpus.vocab.token_of:
            raise InputError("validation corpus vocabulary differs from training")
        train_part = corpus
    else:
        train_part, val = _split_validation(
            corpus, float(cfg["train"]["val_fraction"]), int(cfg["seed"]))

    hp = _hp_from_config(cfg["model"], corpus.num_classes)
    weights = cfg["train"]["class_weights"]
    loss_cfg = LossConfig.for_classes(
        corpus.num_classes,
        np.array(weights, dtype=np.float64) if weights is not None else None,
    )
    train_cfg = TrainConfig(
        hp=hp,
        loss=loss_cfg,
        batch_size=int(cfg["train"]["batch_size"]),
        num_batches=int(cfg["train"]["num_batches"]),
        learning_rate=float(cfg["train"]["learning_rate"]),
        beta1=float(cfg["train"]["beta1"]),
        beta2=float(cfg["train"]["beta2"]),
        eps=float(cfg["train"]["eps"]),
        seed=int(cfg["seed"]),
        eval_every=int(cfg["train"]["eval_every"]),
    )
    out_dir = Path(args.out or cfg["data"]["out"] or "run")
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir / "config.json")

    result = train(train_part, train_cfg, val)
    for row in result.history:
        extra = ""
        if row.val_accuracy is not None:
            extra = f" val_acc={row.val_accuracy:.4f}"
            if row.val_auc is not None:
                extra += f" val_auc={row.val_auc:.4f}"
        print(f"batch {row.batch}: train_loss={row.train_loss:.4f}{extra}")

    table_hash = label_table_hash(corpus.label_names)
    save_checkpoint(out_dir / "checkpoint.bin", result.params, hp, table_hash)
    save_checkpoint(out_dir / "best_checkpoint.bin", result.best_params, hp, table_hash)
    write_history(result.history, out_dir / "history.csv")
    eval_docs = val.docs if val is not None else train_part.docs
    metrics = evaluate(result.params, eval_docs, hp, loss_cfg)
    (out_dir / "metrics.json").write_text(serialize.dumps(metrics.to_dict()), encoding="utf-8")
    print(f"final: accuracy={metrics.accuracy:.4f}"
          + (f" auc={metrics.auc:.4f}" if metrics.auc is not None else ""))
    return 0


def _load_checkpoint_for(corpus: EncodedCorpus, checkpoint_path: str):
    params, hp, meta = load_checkpoint(checkpoint_path)
    if meta["V"] != corpus.vocab_size:
        raise InputError(
            f"checkpoint vocabulary size {meta['V']} != corpus {corpus.vocab_size}")
    if meta["label_table_hash"] != label_table_hash(corpus.label_names):
        raise InputError("checkpoint label table does not match corpus label table")
    return params, hp


def cmd_eval(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    params, hp = _load_checkpoint_for(corpus, args.checkpoint)
    metrics = evaluate(params, corpus.docs, hp, LossConfig.for_classes(hp.C))
    text = serialize.dumps(metrics.to_dict())
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    params, hp = _load_checkpoint_for(corpus, args.checkpoint)
    lines = []
    for doc_id, doc in enumerate(corpus.docs):
        state = forward(doc, params, hp, mode="eval")
        values = "\t".join(serialize.fmt_float(x) for x in state.final_embedding)
        lines.append(f"{doc_id}\t{doc.label}\t{values}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} embeddings of dimension {hp.D} to {args.out}")
    return 0


def cmd_interpret(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    params, hp = _load_checkpoint_for(corpus, args.checkpoint)
    if not (0 <= args.doc < corpus.num_docs):
        raise InputError(f"--doc must be in [0, {corpus.num_docs})")
    doc = corpus.docs[args.doc]
    state = forward(doc, params, hp, mode="eval")
    candidate_ids = np.arange(corpus.vocab_size, dtype=np.int64)
    opts = RelevanceOptions(steps=args.steps, learning_rate=args.lr)
    result = solve_relevance(state.final_embedding, params, candidate_ids, opts)
    n = min(args.top, corpus.vocab_size)
    ranked = top_words(result, corpus.vocab, n)
    report = {
        "doc": args.doc,
        "label": doc.label,
        "objective_initial": result.initial_objective,
        "objective_final": result.objective,
        "iterations": result.iterations,
        "top_words": [{"token": tok, "weight": w} for tok, w in ranked],
    }
    text = serialize.dumps(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.trace:
        trace_lines = ["step,objective"] + [
            f"{i},{serialize.fmt_float(v)}" for i, v in enumerate(result.trace)]
        Path(args.trace).write_text("\n".join(trace_lines) + "\n", encoding="utf-8")
    print(text, end="")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    report = SUITES[args.suite]()
    for prop in report.properties:
        status = "PASS" if prop.passed else "FAIL"
        print(f"[{status}] {report.suite}.{prop.name}: "
              f"{serialize.fmt_float(prop.measured)} {prop.comparison} "
              f"{serialize.fmt_float(prop.bound)}")
    print(f"suite {report.suite}: {'PASS' if report.passed else 'FAIL'} "
          f"({report.elapsed_seconds:.1f}s)")
    if args.out:
        Path(args.out).write_text(serialize.dumps(report.to_dict()), encoding="utf-8")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cooplda",
        description="Cooperative embedding networks for supervised topic classification")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker cap for parallel sections (current build runs serially)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize and encode a raw corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["newsgroups", "csv"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab-from", help="encode against an existing corpus's vocabulary")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="sample a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="default",
                   help="'default' or a JSON file with alpha, beta, prototypes")
    p.add_argument("--docs", type=int, required=True)
    p.add_argument("--words", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier on an encoded corpus")
    p.add_argument("--corpus")
    p.add_argument("--val")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an encoded corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="export per-document embeddings as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("interpret", help="recover relevant words for a document embedding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--doc", type=int, required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--out")
    p.add_argument("--trace", help="write the objective trace CSV here")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("verify", help="run a randomized verification suite")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (InputError, CorpusError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
