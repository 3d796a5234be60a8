"""Training loop, optimizer, evaluation, and the checkpoint container.

Batches are whole documents: a document is encoded once and all of its
entity pairs share that encoding. The optimizer is decoupled-weight-decay
Adam with two learning-rate groups (encoder vs head), a linear warmup over
the first 6% of steps followed by linear decay to zero, and global-norm
gradient clipping. Early stopping keeps the epoch with the best dev F1.

Checkpoints are a single file: an 8-byte magic, a little-endian uint64
manifest length, a JSON manifest (config, schema, vocabulary, thresholds,
metric history, array directory), then the raw little-endian float64 array
sections. Loading restores bit-identical forward outputs.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Document, RelationSchema
from .encoder import EncoderConfig, Vocabulary
from .errors import ConfigError, DataError, TrainingDivergedError
from .metrics import (MetricsReport, PredictionRecord, bucket_by_entity_count,
                      evaluate_f1, evaluate_ign_f1)
from .model import ModelSettings, RelationExtractionModel
from .objective import (STRATEGIES, ScoredPair, ThresholdConfig,
                        relation_probabilities, tune_global_threshold,
                        tune_per_class_thresholds)

_CKPT_MAGIC = b"DRLX0001"


@dataclass
class TrainConfig:
    """Everything a run needs; every ablation switch lives here."""

    learning_rate_encoder: float = 1e-3
    learning_rate_head: float = 2e-3
    batch_size: int = 4
    epochs: int = 30
    warmup_fraction: float = 0.06
    clip_norm: float = 1.0
    dropout: float = 0.1
    seed: int = 0
    loss: str = "adaptive"                 # adaptive | bce
    strategy: str = "adaptive"             # adaptive | global | per_class
    context_pooling: bool = True
    pooling: str = "logsumexp"             # logsumexp | mean | max
    entity_markers: bool = True
    k: int = 4
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    max_len: int = 256
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_sweeps: int = 10                   # per-class tuner sweep cap

    def __post_init__(self):
        if self.learning_rate_encoder <= 0 or self.learning_rate_head <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(layers=self.layers, heads=self.heads,
                             model_dim=self.model_dim, ffn_dim=self.ffn_dim,
                             max_len=self.max_len, dropout_rate=self.dropout)

    def model_settings(self) -> ModelSettings:
        return ModelSettings(encoder=self.encoder_config(), k=self.k,
                             context_pooling=self.context_pooling,
                             pooling=self.pooling,
                             entity_markers=self.entity_markers,
                             loss=self.loss)


def lr_factor(step: int, total_steps: int, warmup_fraction: float) -> float:
    """Linear warmup to 1.0 over the first ``warmup_fraction`` of steps, then
    linear decay to 0 at ``total_steps``."""
    warm = warmup_fraction * total_steps
    if warm > 0 and step < warm:
        return step / warm
    if total_steps <= warm:
        return 1.0
    return (total_steps - step) / (total_steps - warm)


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Rescale all gradients so their global norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


class AdamW:
    """Adam with decoupled weight decay; one learning rate per parameter."""

    def __init__(self, params: list[tuple[Tensor, float]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p, _ in params]
        self.v = [np.zeros_like(p.data) for p, _ in params]

    def step(self, factor: float = 1.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (p, lr) in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)
            p.data -= lr * factor * (update + self.weight_decay * p.data)


# ---------------------------------------------------------------------------
# checkpoints


class Checkpoint:
    """Manifest plus named float64 parameter arrays; one portable file."""

    def __init__(self, manifest: dict, arrays: dict[str, np.ndarray]):
        self.manifest = manifest
        self.arrays = arrays

    def save(self, path: str | Path) -> None:
        directory = []
        blobs = []
        offset = 0
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype="<f8")
            raw = arr.tobytes()
            directory.append({"name": name, "shape": list(arr.shape),
                              "dtype": "<f8", "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        manifest = dict(self.manifest)
        manifest["arrays"] = directory
        payload = json.dumps(manifest, ensure_ascii=False).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
            for raw in blobs:
                fh.write(raw)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _CKPT_MAGIC:
                raise DataError(f"{path}: not a checkpoint file (bad magic {magic!r})")
            (length,) = struct.unpack("<Q", fh.read(8))
            manifest = json.loads(fh.read(length).decode("utf-8"))
            data = fh.read()
        arrays = {}
        for entry in manifest.pop("arrays"):
            raw = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
            arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(
                entry["shape"]).copy()
        return cls(manifest, arrays)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.manifest["config"])

    def schema(self) -> RelationSchema:
        return RelationSchema(self.manifest["relations"])

    def threshold_config(self, strategy: str | None = None) -> ThresholdConfig:
        chosen = strategy or self.manifest["thresholds"]["strategy"]
        stored = self.manifest["thresholds"]
        if chosen == "adaptive":
            return ThresholdConfig("adaptive")
        if chosen == "global":
            return ThresholdConfig("global", theta=stored["global_theta"])
        return ThresholdConfig("per_class",
                               per_class_thetas=tuple(stored["per_class_thetas"]))

    def build_model(self) -> RelationExtractionModel:
        config = self.train_config()
        vocab = Vocabulary(self.manifest["vocab"])
        model = RelationExtractionModel(config.model_settings(), vocab,
                                        self.schema(), seed=config.seed)
        params = model.params
        if set(params) != set(self.arrays):
            raise DataError("checkpoint arrays do not match the model's parameters")
        for name, tensor in params.items():
            arr = self.arrays[name]
            if arr.shape != tensor.data.shape:
                raise DataError(f"checkpoint array {name} has shape {arr.shape}, "
                                f"expected {tensor.data.shape}")
            tensor.data[...] = arr
        return model


# ---------------------------------------------------------------------------
# training and evaluation


def _document_predictions(model: RelationExtractionModel, docs: list[Document]
                          ) -> list[tuple[Document, list[tuple[int, int]], np.ndarray]]:
    rows = []
    for doc in docs:
        pairs, logits = model.document_scores(doc, train=False)
        rows.append((doc, pairs, logits.data.copy()))
    return rows


def _scored_pairs(rows, model) -> list[ScoredPair]:
    out = []
    for doc, pairs, logits in rows:
        gold = doc.positive_pairs()
        for i, pair in enumerate(pairs):
            out.append(ScoredPair(probs=tuple(relation_probabilities(logits[i])),
                                  gold=frozenset(gold.get(pair, ()))))
    return out


def _decide_rows(model, rows, thresholds: ThresholdConfig) -> list[PredictionRecord]:
    return [PredictionRecord(doc_id=doc.doc_id, subject_idx=s, object_idx=o,
                             relation_ids=frozenset(model.decide(logits[i], thresholds)))
            for doc, pairs, logits in rows for i, (s, o) in enumerate(pairs)]


def _dev_thresholds(model, rows, config: TrainConfig) -> ThresholdConfig:
    if config.strategy == "adaptive":
        return ThresholdConfig("adaptive")
    scored = _scored_pairs(rows, model)
    if config.strategy == "global":
        return ThresholdConfig("global", theta=tune_global_threshold(scored))
    thetas = tune_per_class_thresholds(scored, len(model.schema),
                                       max_sweeps=config.max_sweeps)
    return ThresholdConfig("per_class", per_class_thetas=thetas)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: RelationExtractionModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = 0.0


def train(config: TrainConfig, train_docs: list[Document], dev_docs: list[Document],
          schema: RelationSchema) -> TrainResult:
    """Full training run with early stopping on dev micro-F1."""
    if not train_docs or not dev_docs:
        raise DataError("training needs non-empty train and dev corpora")
    vocab = Vocabulary.from_corpus(train_docs)
    model = RelationExtractionModel(config.model_settings(), vocab, schema,
                                    seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)

    named = sorted(model.params.items())
    groups = [(t, config.learning_rate_encoder if name.startswith("encoder.")
               else config.learning_rate_head) for name, t in named]
    tensors = [t for t, _ in groups]
    optimizer = AdamW(groups, beta1=config.adam_beta1, beta2=config.adam_beta2,
                      eps=config.adam_eps, weight_decay=config.weight_decay)

    steps_per_epoch = math.ceil(len(train_docs) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    history: list[dict] = []
    best_f1, best_epoch, best_params = -1.0, -1, None
    step = 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_docs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_docs[i] for i in order[start:start + config.batch_size]]
            model.zero_grads()
            loss = model.batch_loss(batch, train=True, rng=rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, step {step}")
            epoch_losses.append(value)
            ad.backward(loss)
            clip_gradients(tensors, config.clip_norm)
            optimizer.step(lr_factor(step, total_steps, config.warmup_fraction))
            step += 1

        rows = _document_predictions(model, dev_docs)
        thresholds = _dev_thresholds(model, rows, config)
        report = evaluate_f1(_decide_rows(model, rows, thresholds), dev_docs)
        history.append({"epoch": epoch,
                        "train_loss": float(np.mean(epoch_losses)),
                        "dev_f1": report.f1,
                        "dev_precision": report.precision,
                        "dev_recall": report.recall})
        if report.f1 > best_f1:
            best_f1, best_epoch = report.f1, epoch
            best_params = {name: t.data.copy() for name, t in model.params.items()}

    for name, t in model.params.items():
        t.data[...] = best_params[name]

    # Store every strategy's tuned thresholds so evaluation is self-contained.
    rows = _document_predictions(model, dev_docs)
    scored = _scored_pairs(rows, model)
    thresholds = {
        "strategy": config.strategy,
        "global_theta": tune_global_threshold(scored),
        "per_class_thetas": list(tune_per_class_thresholds(
            scored, len(schema), max_sweeps=config.max_sweeps)),
    }
    manifest = {
        "format": "docrelex-checkpoint",
        "version": 1,
        "config": asdict(config),
        "relations": list(schema.names),
        "vocab": list(vocab.tokens),
        "thresholds": thresholds,
        "history": history,
        "best_epoch": best_epoch,
        "best_dev_f1": best_f1,
    }
    arrays = {name: t.data.copy() for name, t in model.params.items()}
    return TrainResult(checkpoint=Checkpoint(manifest, arrays), model=model,
                       history=history, best_epoch=best_epoch, best_dev_f1=best_f1)


def evaluate(checkpoint: Checkpoint, docs: list[Document],
             strategy: str | None = None,
             train_facts: set[tuple[str, str, str]] | None = None,
             bucket_size: int = 5) -> dict:
    """Metrics report for a corpus under the checkpoint's decision strategy."""
    schema = checkpoint.schema()
    model = checkpoint.build_model()
    thresholds = checkpoint.threshold_config(strategy)
    rows = _document_predictions(model, docs)
    predictions = _decide_rows(model, rows, thresholds)
    report = evaluate_f1(predictions, docs)
    out = {
        "strategy": thresholds.strategy,
        "n_documents": len(docs),
        **report.to_dict(),
        "buckets": [{"entities": f"{row.lo}-{row.hi}", "n_docs": row.n_docs,
                     **row.report.to_dict()} for row in
                    bucket_by_entity_count(predictions, docs, bucket_size)],
    }
    if train_facts is not None:
        out["ign_f1"] = evaluate_ign_f1(predictions, docs, train_facts, schema).to_dict()
    return out


def predict(checkpoint: Checkpoint, docs: list[Document],
            strategy: str | None = None) -> list[PredictionRecord]:
    model = checkpoint.build_model()
    thresholds = checkpoint.threshold_config(strategy)
    records = []
    for doc in docs:
        records.extend(model.predict_document(doc, thresholds))
    return records


def dump_context_weights(checkpoint: Checkpoint, doc: Document,
                         subject_idx: int, object_idx: int) -> dict:
    """Token/weight table for one pair, for external plotting."""
    model = checkpoint.build_model()
    tokens, weights = model.context_weights(doc, subject_idx, object_idx)
    return {"doc_id": doc.doc_id, "subject_idx": subject_idx,
            "object_idx": object_idx, "tokens": tokens,
            "weights": [float(w) for w in weights]}
