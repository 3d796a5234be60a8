"""Tests for micro-F1, Ign F1, entity-count buckets, and prediction IO."""

import pytest

from docrelex.data import Document, Entity, Mention, RelationLabel, RelationSchema
from docrelex.errors import DataError
from docrelex.metrics import (PredictionRecord, bucket_by_entity_count,
                              evaluate_f1, evaluate_ign_f1, load_predictions,
                              save_predictions)

SCHEMA = RelationSchema(["r_a", "r_b"])


def doc_with(doc_id, n_entities, labels):
    sentences = (tuple(f"e{i}" for i in range(n_entities)),)
    entities = tuple(Entity(i, (Mention(0, i, i + 1),), "X") for i in range(n_entities))
    return Document(doc_id=doc_id, sentences=sentences, entities=entities,
                    gold_labels=tuple(RelationLabel(*lab) for lab in labels))


def pred(doc_id, s, o, rels):
    return PredictionRecord(doc_id, s, o, frozenset(rels))


def full_na_cover(doc, overrides):
    """Records for every ordered pair; overrides maps (s, o) -> relation ids."""
    return [pred(doc.doc_id, s, o, overrides.get((s, o), ()))
            for s, o in doc.ordered_pairs()]


class TestEvaluateF1:
    def test_perfect_predictions(self):
        doc = doc_with("d", 3, [(0, 1, 0), (1, 2, 1)])
        records = full_na_cover(doc, {(0, 1): {0}, (1, 2): {1}})
        report = evaluate_f1(records, [doc])
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)

    def test_empty_predictions_zero_recall(self):
        doc = doc_with("d", 3, [(0, 1, 0)])
        report = evaluate_f1(full_na_cover(doc, {}), [doc])
        assert report.recall == 0.0 and report.f1 == 0.0

    def test_counting_oracle_case(self):
        # TP=3, FP=1, FN=2 -> P=0.75, R=0.6, F1~0.6667
        doc = doc_with("d", 4, [(0, 1, 0), (0, 2, 0), (1, 2, 1), (2, 3, 0), (3, 1, 1)])
        records = full_na_cover(doc, {(0, 1): {0}, (0, 2): {0}, (1, 2): {1},
                                      (1, 0): {1}})
        report = evaluate_f1(records, [doc])
        assert report.tp == 3 and report.fp == 1 and report.fn == 2
        assert report.precision == pytest.approx(0.75)
        assert report.recall == pytest.approx(0.6)
        assert report.f1 == pytest.approx(2 / 3, abs=1e-4)

    def test_zero_gold_zero_predicted_is_zero(self):
        doc = doc_with("d", 2, [])
        report = evaluate_f1(full_na_cover(doc, {}), [doc])
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)

    def test_relabeling_symmetry(self):
        doc1 = doc_with("d", 3, [(0, 1, 0), (1, 2, 1)])
        doc2 = doc_with("d", 3, [(0, 1, 1), (1, 2, 0)])  # ids swapped everywhere
        r1 = evaluate_f1(full_na_cover(doc1, {(0, 1): {0}, (2, 1): {1}}), [doc1])
        r2 = evaluate_f1(full_na_cover(doc2, {(0, 1): {1}, (2, 1): {0}}), [doc2])
        assert r1.to_dict() == r2.to_dict()

    def test_unknown_doc_rejected(self):
        doc = doc_with("d", 2, [])
        with pytest.raises(DataError, match="unknown"):
            evaluate_f1(full_na_cover(doc, {}) + [pred("ghost", 0, 1, ())], [doc])

    def test_missing_doc_rejected(self):
        doc = doc_with("d", 2, [])
        other = doc_with("d2", 2, [])
        with pytest.raises(DataError, match="missing"):
            evaluate_f1(full_na_cover(doc, {}), [doc, other])

    def test_duplicate_pair_rejected(self):
        doc = doc_with("d", 2, [])
        records = full_na_cover(doc, {}) + [pred("d", 0, 1, ())]
        with pytest.raises(DataError, match="duplicate"):
            evaluate_f1(records, [doc])


class TestIgnF1:
    def make(self):
        # 3 gold facts, distinct surfaces
        doc = doc_with("d", 4, [(0, 1, 0), (1, 2, 0), (2, 3, 1)])
        records = full_na_cover(doc, {(0, 1): {0}, (1, 2): {0}})
        return doc, records

    def test_empty_facts_equals_plain_f1(self):
        doc, records = self.make()
        plain = evaluate_f1(records, [doc])
        ign = evaluate_ign_f1(records, [doc], set(), SCHEMA)
        assert ign.f1 == plain.f1 and not ign.degenerate

    def test_all_facts_shared_is_degenerate_zero(self):
        doc, records = self.make()
        facts = {(f"e{s}", SCHEMA.name_of(r), f"e{o}")
                 for s, o, r in [(0, 1, 0), (1, 2, 0), (2, 3, 1)]}
        ign = evaluate_ign_f1(records, [doc], facts, SCHEMA)
        assert ign.f1 == 0.0 and ign.degenerate

    def test_one_shared_fact_removed_hand_recomputed(self):
        doc, records = self.make()
        ign = evaluate_ign_f1(records, [doc], {("e0", "r_a", "e1")}, SCHEMA)
        # remaining gold: (1,2,r_a), (2,3,r_b); remaining predicted: (1,2,r_a)
        assert ign.tp == 1 and ign.fp == 0 and ign.fn == 1
        assert ign.removed_gold == 1 and ign.removed_predicted == 1
        assert ign.precision == 1.0
        assert ign.recall == pytest.approx(0.5)
        assert ign.f1 == pytest.approx(2 / 3, abs=1e-9)
        assert not ign.degenerate

    def test_removal_never_increases_counts(self):
        doc, records = self.make()
        base = evaluate_f1(records, [doc])
        ign = evaluate_ign_f1(records, [doc], {("e1", "r_a", "e2")}, SCHEMA)
        assert ign.tp + ign.fp + ign.fn <= base.tp + base.fp + base.fn


class TestBuckets:
    def test_single_bucket_equals_overall(self):
        doc = doc_with("d", 3, [(0, 1, 0)])
        records = full_na_cover(doc, {(0, 1): {0}})
        rows = bucket_by_entity_count(records, [doc])
        overall = evaluate_f1(records, [doc])
        assert len(rows) == 1
        assert rows[0].report.f1 == overall.f1
        assert (rows[0].lo, rows[0].hi, rows[0].n_docs) == (1, 5, 1)

    def test_buckets_partition_documents(self):
        docs = [doc_with(f"d{i}", n, []) for i, n in enumerate([2, 5, 6, 11, 7])]
        records = [r for d in docs for r in full_na_cover(d, {})]
        rows = bucket_by_entity_count(records, docs)
        assert sum(r.n_docs for r in rows) == len(docs)
        spans = [(r.lo, r.hi) for r in rows]
        assert spans == sorted(spans)
        assert all(a[1] < b[0] for a, b in zip(spans, spans[1:]))

    def test_two_bucket_hand_counts(self):
        small = doc_with("s", 2, [(0, 1, 0)])
        big = doc_with("b", 6, [(0, 1, 0), (1, 2, 1)])
        records = (full_na_cover(small, {(0, 1): {0}})
                   + full_na_cover(big, {(0, 1): {0}, (1, 2): {0}}))
        rows = bucket_by_entity_count(records, [small, big])
        by_span = {(r.lo, r.hi): r.report for r in rows}
        assert by_span[(1, 5)].tp == 1 and by_span[(1, 5)].f1 == 1.0
        r = by_span[(6, 10)]
        assert (r.tp, r.fp, r.fn) == (1, 1, 1)


class TestPredictionIO:
    def test_roundtrip(self, tmp_path):
        doc = doc_with("d", 3, [])
        records = full_na_cover(doc, {(0, 1): {0, 1}})
        path = tmp_path / "preds.jsonl"
        save_predictions(records, path, SCHEMA)
        loaded = load_predictions(path, SCHEMA)
        assert sorted(loaded, key=str) == sorted(records, key=str)
        first = path.read_text().splitlines()[0]
        assert '"doc_id"' in first and '"relations"' in first
