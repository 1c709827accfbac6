"""Command-line pipeline: refine datasets, train, evaluate, analyze, gradcheck.

Settings resolve in precedence order: command-line flags, then a JSON config
file (--config), then built-in defaults. Every run echoes its resolved
configuration and derives all randomness from one root seed, so any artifact
can be reproduced from the echoed config alone. Input files are never mutated.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from .data import RefineConfig, RelationSchema, SchemaError, infer_schema
from .embedding import EmbeddingTable, Vocabulary, build_vocab, load_pretrained
from .evaluation import (
    f1_by_bucket,
    format_bucket_counts,
    format_report,
    macro_f1,
    semantic_profile,
)
from .synthetic import make_order_task
from .training import (
    ModelBundle,
    TrainConfig,
    build_model,
    encode_example,
    gradient_check,
    load_model,
    predict_label,
    save_model,
    train,
)

log = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4

# Best hidden sizes reported per encoder/mode/dataset combination.
DEFAULT_HIDDEN = {
    ("rnn", "pi", "semeval"): 800,
    ("rnn", "pf", "semeval"): 400,
    ("rnn", "pi", "kbp37"): 700,
    ("rnn", "pf", "kbp37"): 400,
    ("cnn", "pi", "semeval"): 400,
    ("cnn", "pf", "semeval"): 300,
    ("cnn", "pi", "kbp37"): 500,
    ("cnn", "pf", "kbp37"): 500,
}


@dataclass
class RunConfig:
    command: str
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    raw_path: str | None = None
    model_path: str | None = None
    vectors: str | None = None
    out: str = "out"
    encoder: str = "rnn"
    mode: str = "pi"
    hidden: int | None = None
    embed_dim: int = 50
    window: int = 3
    pf_dim: int = 5
    max_dist: int = 30
    epochs: int = 20
    lr: float = 0.01
    lr_warm: float = 0.1
    warm_epochs: int = 5
    seed: int = 1
    min_count: int = 1
    dev_fraction: float = 0.1
    lowercase: bool = False
    buckets: str | None = None
    include_neutral: bool = False
    clip: float | None = None
    min_direction_count: int = 100
    # gradcheck sizing
    check_hidden: int = 4
    check_embed_dim: int = 3
    check_classes: int = 4
    check_examples: int = 3
    epsilon: float = 1e-5

    def echo(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _resolve(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise SystemExit(f"error: cannot read config file {args.config}: {err}")
        unknown = set(overrides) - {f.name for f in dataclasses.fields(RunConfig)}
        if unknown:
            raise SystemExit(f"error: unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in overrides.items():
            setattr(cfg, key, value)
    for field in dataclasses.fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            setattr(cfg, field.name, value)
    return cfg


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise SystemExit(f"error: {what} path required")
    p = Path(path)
    if not p.is_file():
        raise SystemExit(f"error: {what} file not found: {p}")
    return p


def _parse_buckets(spec: str) -> list[int]:
    try:
        thresholds = [int(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise SystemExit(f"error: invalid bucket list {spec!r}")
    return thresholds


def _schema_kind(schema: RelationSchema) -> str:
    if schema == D.SEMEVAL_SCHEMA:
        return "semeval"
    if schema == D.KBP37_SCHEMA:
        return "kbp37"
    return "other"


def _default_hidden(cfg: RunConfig, schema: RelationSchema) -> int:
    key = (cfg.encoder, cfg.mode, _schema_kind(schema))
    return DEFAULT_HIDDEN.get(key, 100)


def _load_examples(path: Path, cfg: RunConfig, schema: RelationSchema | None = None):
    with open(path, encoding="utf-8") as fh:
        return D.parse_semeval(fh, schema=schema, lowercase=cfg.lowercase)


# ---------------------------------------------------------------------------
# Commands


def cmd_train(cfg: RunConfig) -> int:
    train_file = _require(cfg.train_path, "train")
    examples = _load_examples(train_file, cfg)
    if not examples:
        raise SystemExit(f"error: no records in {train_file}")
    schema = infer_schema([ex.label for ex in examples])

    if cfg.dev_path:
        dev = _load_examples(_require(cfg.dev_path, "dev"), cfg, schema=schema)
        train_set = examples
    else:
        # no official dev split: carve a held-out fraction off the shuffled data
        order = np.random.default_rng(cfg.seed).permutation(len(examples))
        n_dev = max(1, int(cfg.dev_fraction * len(examples)))
        dev = [examples[i] for i in order[:n_dev]]
        train_set = [examples[i] for i in order[n_dev:]]

    rng = np.random.default_rng(cfg.seed)
    sequences = [D.annotate(ex, cfg.mode, cfg.max_dist) for ex in train_set]
    vocab = build_vocab(sequences, min_count=cfg.min_count)
    table: EmbeddingTable | None = None
    if cfg.vectors:
        table = load_pretrained(_require(cfg.vectors, "vectors"), vocab, rng, dim=cfg.embed_dim)
    hidden = cfg.hidden if cfg.hidden is not None else _default_hidden(cfg, schema)
    bundle = build_model(
        schema,
        vocab,
        rng,
        encoder=cfg.encoder,
        mode=cfg.mode,
        hidden=hidden,
        embedding=table,
        embed_dim=cfg.embed_dim,
        window=cfg.window,
        pf_dim=cfg.pf_dim,
        max_dist=cfg.max_dist,
    )
    tcfg = TrainConfig(
        epochs=cfg.epochs,
        lr_initial=cfg.lr,
        lr_warm=cfg.lr_warm,
        warm_epochs=cfg.warm_epochs,
        seed=cfg.seed,
        grad_clip=cfg.clip,
    )
    best, history = train(bundle, train_set, dev, tcfg)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(best, out / "model.json")
    with open(out / "train_log.txt", "w", encoding="utf-8") as fh:
        for s in history:
            dev_score = "-" if s.dev_score is None else f"{s.dev_score:.4f}"
            fh.write(f"epoch {s.epoch}\tlr {s.lr}\tloss {s.train_loss:.6f}\tdev {dev_score}\n")
    with open(out / "dev_curve.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tdev_score\n")
        for s in history:
            fh.write(f"{s.epoch}\t{'' if s.dev_score is None else s.dev_score}\n")
    (out / "config.json").write_text(cfg.echo() + "\n")
    best_epoch = max(
        (s for s in history if s.dev_score is not None),
        key=lambda s: (s.dev_score, -s.epoch),
        default=history[-1],
    )
    print(cfg.echo())
    print(f"hidden size: {hidden}; classes: {schema.n_classes}; vocab: {len(vocab)}")
    print(f"best epoch: {best_epoch.epoch} (dev {best_epoch.dev_score})")
    print(f"model written to {out / 'model.json'}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    bundle = load_model(_require(cfg.model_path, "model"))
    test_file = _require(cfg.test_path, "test")
    examples = _load_examples(test_file, cfg)
    if not examples:
        raise SystemExit(f"error: no records in {test_file}")
    unknown = {ex.label for ex in examples} - set(bundle.schema.labels)
    if unknown:
        raise SystemExit(
            "error: test labels outside the model schema: "
            + ", ".join(sorted(unknown))
            + f" (model classes: {', '.join(bundle.schema.labels)})"
        )
    preds = [predict_label(bundle, ex) for ex in examples]
    report = macro_f1(
        [ex.label for ex in examples], preds, bundle.schema, include_neutral=cfg.include_neutral
    )
    if cfg.buckets:
        thresholds = _parse_buckets(cfg.buckets)
        report.bucketed_f1 = f1_by_bucket(examples, preds, thresholds, bundle.schema)
        counts = D.bucket_by_context(examples, thresholds)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    text = format_report(report)
    if cfg.buckets:
        text += format_bucket_counts(counts)
    (out / "eval_report.txt").write_text(text)
    (out / "config.json").write_text(cfg.echo() + "\n")
    print(cfg.echo())
    print(text, end="")
    return 0


def cmd_refine_kbp(cfg: RunConfig) -> int:
    raw_file = _require(cfg.raw_path, "raw corpus")
    with open(raw_file, encoding="utf-8") as fh:
        records = D.parse_kbp_raw(fh, lowercase=cfg.lowercase)
    refine_cfg = RefineConfig(min_direction_count=cfg.min_direction_count)
    refined = D.refine_kbp(records, seed=cfg.seed, config=refine_cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", refined.train), ("dev", refined.dev), ("test", refined.test)):
        (out / f"{name}.txt").write_text(D.serialize_examples(split), encoding="utf-8")
    stats = [
        f"records in: {len(records)}",
        f"relation classes: {refined.schema.n_classes}",
        f"train/dev/test: {len(refined.train)}/{len(refined.dev)}/{len(refined.test)}",
        "",
    ]
    counts = D.relation_counts(refined.train + refined.dev + refined.test)
    for label in refined.schema.labels:
        stats.append(f"{label}\t{counts.get(label, 0)}")
    (out / "stats.txt").write_text("\n".join(stats) + "\n", encoding="utf-8")
    (out / "config.json").write_text(cfg.echo() + "\n")
    print(cfg.echo())
    print("\n".join(stats[:3]))
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    bundle = load_model(_require(cfg.model_path, "model"))
    examples = _load_examples(_require(cfg.test_path, "sentences"), cfg)
    if not examples:
        raise SystemExit("error: no sentences to analyze")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    variances = []
    with open(out / "profiles.tsv", "w", encoding="utf-8") as fh:
        fh.write("sentence_id\tstep\ttoken\tcontribution\n")
        for ex in examples:
            seq = D.annotate(ex, bundle.mode, bundle.max_dist)
            profile = semantic_profile(encode_example(bundle, ex))
            variances.append(profile.variance_of_neighbors)
            for t, (token, c) in enumerate(zip(seq.tokens, profile.contributions)):
                fh.write(f"{ex.id}\t{t}\t{token}\t{c:.6f}\n")
    mean_var = float(np.mean(variances))
    summary = f"sentences: {len(examples)}\nmean neighbor variance: {mean_var:.6f}\n"
    (out / "variance.txt").write_text(summary)
    (out / "config.json").write_text(cfg.echo() + "\n")
    print(cfg.echo())
    print(summary, end="")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    task = make_order_task(cfg.check_examples, 0, seed=cfg.seed, separation=3)
    schema = task.schema
    sequences = [D.annotate(ex, cfg.mode, cfg.max_dist) for ex in task.train]
    vocab = build_vocab(sequences)
    bundle = build_model(
        schema,
        vocab,
        rng,
        encoder=cfg.encoder,
        mode=cfg.mode,
        hidden=cfg.check_hidden,
        embed_dim=cfg.check_embed_dim,
        window=cfg.window,
        pf_dim=2,
        max_dist=8,
    )
    report = gradient_check(bundle, task.train, epsilon=cfg.epsilon)
    print(cfg.echo())
    print(report)
    ok = report.max_relative_error < GRADCHECK_TOLERANCE
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="root seed for all randomness")
    p.add_argument("--out", help="output directory")
    p.add_argument("--lowercase", action="store_const", const=True, default=None)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder", choices=("rnn", "cnn"))
    p.add_argument("--mode", choices=("pi", "pf", "none"), help="nominal annotation style")
    p.add_argument("--hidden", type=int, help="feature dimension M")
    p.add_argument("--window", type=int, help="CNN window size (odd)")
    p.add_argument("--pf-dim", dest="pf_dim", type=int)
    p.add_argument("--max-dist", dest="max_dist", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relclass", description="relation classification toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and keep the best dev epoch")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--train", dest="train_path", help="training records")
    p.add_argument("--dev", dest="dev_path", help="development records")
    p.add_argument("--vectors", help="pretrained word vectors (text format)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate after warm epochs")
    p.add_argument("--lr-warm", dest="lr_warm", type=float)
    p.add_argument("--warm-epochs", dest="warm_epochs", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--dev-fraction", dest="dev_fraction", type=float)
    p.add_argument("--clip", type=float, help="optional global gradient-norm clip")

    p = sub.add_parser("evaluate", help="score a model on a test file")
    _add_common(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--test", dest="test_path")
    p.add_argument(
        "--buckets",
        nargs="?",
        const="10,15",
        help="comma-separated context-length cut points (default 10,15)",
    )
    p.add_argument("--include-neutral", dest="include_neutral", action="store_const", const=True,
                   default=None, help="add the neutral class to the macro average")

    p = sub.add_parser("refine-kbp", help="run the KBP refinement pipeline")
    _add_common(p)
    p.add_argument("--raw", dest="raw_path", help="raw annotated corpus")
    p.add_argument(
        "--min-direction-count",
        dest="min_direction_count",
        type=int,
        help="keep a relation only if both directions occur more often than this",
    )

    p = sub.add_parser("analyze", help="semantic-contribution profiles")
    _add_common(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--test", dest="test_path", help="sentences to profile")

    p = sub.add_parser("gradcheck", help="verify BPTT against finite differences")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--check-hidden", dest="check_hidden", type=int)
    p.add_argument("--check-embed-dim", dest="check_embed_dim", type=int)
    p.add_argument("--check-examples", dest="check_examples", type=int)
    p.add_argument("--epsilon", type=float)
    return parser


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "refine-kbp": cmd_refine_kbp,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    cfg = _resolve(args)
    try:
        return COMMANDS[cfg.command](cfg)
    except SystemExit:
        raise
    except (D.ParseError, SchemaError, ValueError, ArithmeticError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
