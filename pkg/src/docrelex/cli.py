"""Command-line interface.

Subcommands: ``train``, ``eval``, ``predict``, ``gen-data``, ``grad-check``,
``dump-context``. Config files are flat ``key = value`` lines whose keys
mirror TrainConfig (plus an optional ``relations`` list). Errors exit
nonzero with a machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import (Document, Entity, Mention, RelationLabel, RelationSchema,
                   collect_facts, generate_synthetic_corpus, load_corpus,
                   save_corpus, scan_relation_names)
from .errors import ConfigError, DataError, DocRelexError
from .metrics import save_predictions
from .model import RelationExtractionModel
from .encoder import Vocabulary
from .training import (Checkpoint, TrainConfig, dump_context_weights, evaluate,
                       predict, train)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message)


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    raise SystemExit(1)


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def load_train_config(path: str | None) -> tuple[TrainConfig, list[str] | None]:
    """Read a flat key=value config file; returns the config and the optional
    ``relations`` override."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    values: dict = {}
    relations = None
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key == "relations":
                relations = [r.strip() for r in raw.split(",") if r.strip()]
                continue
            if key not in fields:
                raise ConfigError(f"{path}: line {lineno}: unknown config key {key!r}")
            kind = fields[key] if isinstance(fields[key], type) else types[str(fields[key])]
            try:
                values[key] = _parse_value(raw, kind)
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"{path}: line {lineno}: bad value for {key}: {e}") from e
    return TrainConfig(**values), relations


def _resolve_schema(relations: list[str] | None, *paths: str) -> RelationSchema:
    if relations:
        return RelationSchema(relations)
    return RelationSchema(scan_relation_names(list(paths)))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train(args) -> int:
    config, relations = load_train_config(args.config)
    schema = _resolve_schema(relations, args.train, args.dev)
    train_docs = load_corpus(args.train, schema)
    dev_docs = load_corpus(args.dev, schema)
    result = train(config, train_docs, dev_docs, schema)
    result.checkpoint.save(args.out)
    print(json.dumps({"best_epoch": result.best_epoch,
                      "best_dev_f1": result.best_dev_f1,
                      "epochs": len(result.history),
                      "checkpoint": args.out}))
    return 0


def _cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    schema = ckpt.schema()
    docs = load_corpus(args.data, schema)
    facts = None
    if args.train_facts:
        facts = collect_facts(load_corpus(args.train_facts, schema), schema)
    report = evaluate(ckpt, docs, strategy=args.strategy, train_facts=facts)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    schema = ckpt.schema()
    docs = load_corpus(args.data, schema)
    records = predict(ckpt, docs, strategy=args.strategy)
    save_predictions(records, args.out, schema)
    print(json.dumps({"documents": len(docs), "records": len(records),
                      "out": args.out}))
    return 0


def _cmd_gen_data(args) -> int:
    schema = RelationSchema(args.relations.split(",")) if args.relations else None
    docs = generate_synthetic_corpus(args.seed, args.docs, schema=schema)
    from .data import default_schema
    save_corpus(docs, args.out, schema or default_schema())
    print(json.dumps({"documents": len(docs), "out": args.out, "seed": args.seed}))
    return 0


def _cmd_grad_check(args) -> int:
    config, _ = load_train_config(args.config)
    report = full_model_grad_check(config, samples_per_param=args.samples)
    print(report.summary())
    return 0 if report.passed else 1


def _cmd_dump_context(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    schema = ckpt.schema()
    docs = {d.doc_id: d for d in load_corpus(args.data, schema)}
    if args.doc not in docs:
        raise DataError(f"doc id {args.doc!r} not found in {args.data}")
    record = dump_context_weights(ckpt, docs[args.doc], args.subject, args.object)
    line = json.dumps(record, ensure_ascii=False)
    if args.out:
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


# ---------------------------------------------------------------------------
# full-model gradient check (also used by the test suite)


def toy_gradcheck_document() -> Document:
    """Two entities, three mentions, one gold label; exercises every path."""
    return Document(
        doc_id="toy",
        sentences=(("alpha", "founded", "beta"), ("alpha", "stayed", "small")),
        entities=(
            Entity(0, (Mention(0, 0, 1), Mention(1, 0, 1)), "ORG"),
            Entity(1, (Mention(0, 2, 3),), "ORG"),
        ),
        gold_labels=(RelationLabel(0, 1, 0),),
    )


def full_model_grad_check(config: TrainConfig | None = None,
                          samples_per_param: int | None = 8,
                          step: float = 1e-5, tol: float = 1e-4) -> ad.GradCheckReport:
    """Check the full training loss on a 2-entity toy document against
    central finite differences, sampling entries of every parameter block."""
    if config is None:
        config = TrainConfig(layers=2, heads=2, model_dim=16, ffn_dim=32, k=4)
    doc = toy_gradcheck_document()
    schema = RelationSchema(["founded", "acquired"])
    vocab = Vocabulary.from_corpus([doc])
    model = RelationExtractionModel(config.model_settings(), vocab, schema,
                                    seed=config.seed)

    def loss() -> ad.Tensor:
        return model.batch_loss([doc], train=False)  # dropout off: deterministic

    return ad.grad_check(loss, model.params, step=step, tol=tol,
                         samples_per_param=samples_per_param,
                         rng=np.random.default_rng(config.seed))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="docrelex",
                     description="Document-level relation extraction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--train", required=True, help="training corpus JSONL")
    p.add_argument("--dev", required=True, help="development corpus JSONL")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=["adaptive", "global", "per-class"],
                   default=None)
    p.add_argument("--train-facts", default=None,
                   help="training corpus JSONL for Ign F1 fact filtering")
    p.add_argument("--out", default=None, help="also write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write predictions for a corpus as JSONL")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=["adaptive", "global", "per-class"],
                   default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--docs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--relations", default=None,
                   help="comma-separated relation names (default built-in schema)")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("grad-check", help="finite-difference check of the full model")
    p.add_argument("--config", default=None)
    p.add_argument("--samples", type=int, default=8,
                   help="entries sampled per parameter block")
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("dump-context", help="context weights of one entity pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--doc", required=True)
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--object", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_dump_context)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "strategy", None) == "per-class":
        args.strategy = "per_class"
    try:
        return args.func(args)
    except DocRelexError as e:
        _fail(type(e).__name__, str(e))
    except OSError as e:
        _fail("IOError", str(e))


if __name__ == "__main__":
    sys.exit(main())
