"""Micro-averaged F1 over (document, subject, object, relation) tuples.

NA pairs (empty relation sets) contribute nothing to the positive counts.
When nothing is predicted and nothing is gold, precision, recall and F1 are
all defined as 0 to avoid 0/0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .data import Document, RelationSchema
from .errors import DataError


@dataclass(frozen=True)
class PredictionRecord:
    doc_id: str
    subject_idx: int
    object_idx: int
    relation_ids: frozenset[int]


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass
class IgnF1Report(MetricsReport):
    removed_gold: int = 0
    removed_predicted: int = 0
    degenerate: bool = False  # every gold fact was shared with training

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update({"removed_gold": self.removed_gold,
                  "removed_predicted": self.removed_predicted,
                  "degenerate": self.degenerate})
        return d


def _tuple_sets(predictions: list[PredictionRecord], gold_docs: list[Document]):
    gold_ids = {d.doc_id for d in gold_docs}
    pred_ids = {p.doc_id for p in predictions}
    unknown = pred_ids - gold_ids
    if unknown:
        raise DataError(f"predictions reference unknown doc ids: {sorted(unknown)[:5]}")
    missing = gold_ids - pred_ids
    if missing:
        raise DataError(f"predictions missing for doc ids: {sorted(missing)[:5]}")
    seen_pairs = set()
    predicted = set()
    for p in predictions:
        key = (p.doc_id, p.subject_idx, p.object_idx)
        if key in seen_pairs:
            raise DataError(f"duplicate prediction record for pair {key}")
        seen_pairs.add(key)
        for r in p.relation_ids:
            predicted.add((p.doc_id, p.subject_idx, p.object_idx, r))
    gold = {(d.doc_id, lab.subject_idx, lab.object_idx, lab.relation_id)
            for d in gold_docs for lab in d.gold_labels}
    return predicted, gold


def _report(predicted: set, gold: set) -> MetricsReport:
    tp = len(predicted & gold)
    fp = len(predicted - gold)
    fn = len(gold - predicted)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)


def evaluate_f1(predictions: list[PredictionRecord], gold_docs: list[Document]) -> MetricsReport:
    """Micro P/R/F1; predictions must cover exactly the gold documents."""
    predicted, gold = _tuple_sets(predictions, gold_docs)
    return _report(predicted, gold)


def evaluate_ign_f1(predictions: list[PredictionRecord], gold_docs: list[Document],
                    train_facts: set[tuple[str, str, str]],
                    schema: RelationSchema) -> IgnF1Report:
    """Micro F1 after dropping tuples whose surface-form fact appears in
    ``train_facts``; with an empty fact set this equals plain F1."""
    predicted, gold = _tuple_sets(predictions, gold_docs)
    docs_by_id = {d.doc_id: d for d in gold_docs}

    def fact_of(t):
        doc = docs_by_id[t[0]]
        return (doc.surface_form(t[1]), schema.name_of(t[3]), doc.surface_form(t[2]))

    kept_pred = {t for t in predicted if fact_of(t) not in train_facts}
    kept_gold = {t for t in gold if fact_of(t) not in train_facts}
    base = _report(kept_pred, kept_gold)
    return IgnF1Report(**base.to_dict(),
                       removed_gold=len(gold) - len(kept_gold),
                       removed_predicted=len(predicted) - len(kept_pred),
                       degenerate=bool(gold) and not kept_gold)


@dataclass
class BucketRow:
    lo: int
    hi: int
    n_docs: int
    report: MetricsReport


def bucket_by_entity_count(predictions: list[PredictionRecord], gold_docs: list[Document],
                           bucket_size: int = 5) -> list[BucketRow]:
    """Per-bucket micro F1 for documents grouped by entity count (1-5, 6-10, ...).

    Buckets are disjoint and every document lands in exactly one.
    """
    predicted, gold = _tuple_sets(predictions, gold_docs)
    rows = []
    buckets: dict[int, list[Document]] = {}
    for doc in gold_docs:
        b = (max(len(doc.entities), 1) - 1) // bucket_size
        buckets.setdefault(b, []).append(doc)
    for b in sorted(buckets):
        ids = {d.doc_id for d in buckets[b]}
        rows.append(BucketRow(
            lo=b * bucket_size + 1, hi=(b + 1) * bucket_size,
            n_docs=len(buckets[b]),
            report=_report({t for t in predicted if t[0] in ids},
                           {t for t in gold if t[0] in ids})))
    return rows


def save_predictions(predictions: list[PredictionRecord], path: str | Path,
                     schema: RelationSchema) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in sorted(predictions, key=lambda r: (r.doc_id, r.subject_idx, r.object_idx)):
            rec = {"doc_id": p.doc_id, "subject_idx": p.subject_idx,
                   "object_idx": p.object_idx,
                   "relations": sorted(schema.name_of(r) for r in p.relation_ids)}
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


def load_predictions(path: str | Path, schema: RelationSchema) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON: {e}") from e
            records.append(PredictionRecord(
                doc_id=raw["doc_id"], subject_idx=raw["subject_idx"],
                object_idx=raw["object_idx"],
                relation_ids=frozenset(schema.id_of(n) for n in raw["relations"])))
    return records
