"""Tests for tokenization, marker insertion, and the transformer encoder."""

import numpy as np
import numpy.testing as npt
import pytest

import docrelex.autodiff as ad
from docrelex.data import Document, Entity, Mention
from docrelex.encoder import (EncoderConfig, TransformerEncoder, Vocabulary,
                              insert_markers)
from docrelex.errors import ConfigError, DataError


def make_doc(sentences, entity_mentions, doc_id="t0"):
    entities = tuple(Entity(i, tuple(Mention(*m) for m in ms), "X")
                     for i, ms in enumerate(entity_mentions))
    return Document(doc_id=doc_id, sentences=tuple(tuple(s) for s in sentences),
                    entities=entities, gold_labels=())


class TestVocabulary:
    def test_reserved_ids(self):
        v = Vocabulary.from_corpus([make_doc([["b", "a"]], [[(0, 0, 1)]])])
        assert (v.pad_id, v.unk_id, v.marker_id) == (0, 1, 2)
        assert v.tokens[:3] == ["[PAD]", "[UNK]", "*"]
        assert v.tokens[3:] == ["a", "b"]  # sorted corpus tokens after reserved

    def test_unknown_maps_to_unk(self):
        v = Vocabulary.from_corpus([make_doc([["a"]], [[(0, 0, 1)]])])
        assert v.to_ids(["a", "zzz"]) == [3, v.unk_id]

    def test_file_roundtrip(self, tmp_path):
        v = Vocabulary.from_corpus([make_doc([["b", "a", "c"]], [[(0, 0, 1)]])])
        path = tmp_path / "vocab.txt"
        v.save(path)
        lines = path.read_text().splitlines()
        assert lines == v.tokens  # id = line number
        loaded = Vocabulary.load(path)
        assert loaded.tokens == v.tokens
        assert loaded.to_ids(["c"]) == v.to_ids(["c"])

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ConfigError):
            Vocabulary(["[PAD]", "[UNK]", "*", "a", "a"])


class TestInsertMarkers:
    def test_single_mention(self):
        doc = make_doc([["a", "b", "c"]], [[(0, 1, 2)]])
        marked = insert_markers(doc)
        assert list(marked.tokens) == ["a", "*", "b", "*", "c"]
        assert marked.anchors == ((1,),)
        assert marked.spans == (((2, 3),),)

    def test_two_disjoint_mentions(self):
        doc = make_doc([["a", "b", "c", "d"]], [[(0, 0, 1)], [(0, 2, 3)]])
        marked = insert_markers(doc)
        assert list(marked.tokens).count("*") == 4
        flat_anchors = [a for ent in marked.anchors for a in ent]
        assert flat_anchors == sorted(flat_anchors)
        assert flat_anchors[0] < flat_anchors[1]
        for ent in marked.anchors:
            for a in ent:
                assert marked.tokens[a] == "*"

    def test_remapping_brute_force_realignment(self):
        # oracle: after insertion, each remapped span must reproduce the
        # mention's surface form, with a marker on each side.
        doc = make_doc([["x", "y", "z"], ["w", "y", "q", "r"]],
                       [[(0, 1, 2), (1, 1, 2)], [(1, 2, 4)]], doc_id="t3")
        marked = insert_markers(doc)
        flat = doc.flat_tokens()
        for ei, ent in enumerate(doc.entities):
            for mi, m in enumerate(ent.mentions):
                s, e = doc.flat_span(m)
                surface = flat[s:e]
                ns, ne = marked.spans[ei][mi]
                assert list(marked.tokens[ns:ne]) == surface
                assert marked.tokens[ns - 1] == "*"
                assert marked.tokens[ne] == "*"
                assert marked.anchors[ei][mi] == ns - 1

    def test_identical_spans_share_markers(self):
        doc = make_doc([["a", "b"]], [[(0, 0, 1)], [(0, 0, 1)]])
        marked = insert_markers(doc)
        assert list(marked.tokens) == ["*", "a", "*", "b"]
        assert marked.anchors[0] == marked.anchors[1] == (0,)

    def test_partial_overlap_rejected(self):
        doc = make_doc([["a", "b", "c"]], [[(0, 0, 2)], [(0, 1, 3)]])
        with pytest.raises(DataError, match="overlap"):
            insert_markers(doc)

    def test_overlap_within_entity_rejected(self):
        doc = make_doc([["a", "b", "c"]], [[(0, 0, 2), (0, 0, 2)]])
        with pytest.raises(DataError, match="overlap"):
            insert_markers(doc)

    def test_out_of_bounds_span_names_document(self):
        doc = Document(doc_id="bad", sentences=(("a",),),
                       entities=(Entity(0, (Mention(0, 0, 5),), "X"),),
                       gold_labels=())
        with pytest.raises(DataError, match="bad"):
            insert_markers(doc)

    def test_markers_disabled_uses_flat_positions(self):
        doc = make_doc([["a", "b"], ["c", "d"]], [[(1, 0, 1)]])
        marked = insert_markers(doc, use_markers=False)
        assert list(marked.tokens) == ["a", "b", "c", "d"]
        assert marked.anchors == ((2,),)


@pytest.fixture(scope="module")
def small_encoder():
    config = EncoderConfig(layers=2, heads=2, model_dim=16, ffn_dim=24, max_len=32,
                           dropout_rate=0.1)
    return TransformerEncoder(config, vocab_size=11, rng=np.random.default_rng(0))


class TestEncode:
    def test_output_shapes(self, small_encoder):
        enc = small_encoder.encode([3, 4, 5, 6])
        assert enc.hidden.shape == (4, 16)
        assert enc.attention.shape == (2, 4, 4)

    def test_attention_rows_are_distributions(self, small_encoder):
        enc = small_encoder.encode([3, 4, 5, 6, 7, 8])
        a = enc.attention.data
        assert np.all(a >= 0)
        npt.assert_allclose(a.sum(axis=2), 1.0, atol=1e-9)

    def test_deterministic_without_dropout(self, small_encoder):
        e1 = small_encoder.encode([3, 4, 5])
        e2 = small_encoder.encode([3, 4, 5])
        npt.assert_array_equal(e1.hidden.data, e2.hidden.data)
        npt.assert_array_equal(e1.attention.data, e2.attention.data)

    def test_same_seed_same_init(self):
        config = EncoderConfig(layers=1, heads=2, model_dim=8, ffn_dim=8, max_len=16)
        a = TransformerEncoder(config, 7, np.random.default_rng(42))
        b = TransformerEncoder(config, 7, np.random.default_rng(42))
        for name in a.params:
            npt.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_too_long_errors_without_truncate_flag(self, small_encoder):
        ids = [3] * 33
        with pytest.raises(DataError, match="max_len"):
            small_encoder.encode(ids)
        enc = small_encoder.encode(ids, truncate=True)
        assert enc.hidden.shape[0] == 32

    def test_pad_tail_content_does_not_leak(self, small_encoder):
        # With masking enabled, anything sitting in the tail positions is
        # invisible to the real tokens.
        real = [3, 4, 5]
        e1 = small_encoder.encode(real + [0, 0, 0], n_real=3)
        e2 = small_encoder.encode(real + [9, 7, 8], n_real=3)
        npt.assert_array_equal(e1.hidden.data[:3], e2.hidden.data[:3])
        npt.assert_array_equal(e1.attention.data[:, :3, :3],
                               e2.attention.data[:, :3, :3])
        assert np.all(e1.attention.data[:, :, 3:] == 0.0)

    def test_dropout_requires_rng(self, small_encoder):
        with pytest.raises(ConfigError):
            small_encoder.encode([3, 4], train=True)

    def test_dropout_is_seed_deterministic(self, small_encoder):
        e1 = small_encoder.encode([3, 4, 5], train=True, rng=np.random.default_rng(5))
        e2 = small_encoder.encode([3, 4, 5], train=True, rng=np.random.default_rng(5))
        npt.assert_array_equal(e1.hidden.data, e2.hidden.data)

    def test_embedding_gradient_vs_finite_differences(self):
        config = EncoderConfig(layers=1, heads=2, model_dim=8, ffn_dim=8, max_len=8,
                               dropout_rate=0.0)
        encoder = TransformerEncoder(config, 6, np.random.default_rng(1))
        ids = [2, 3, 4]

        def loss():
            return ad.mean(encoder.encode(ids).hidden)

        report = ad.grad_check(loss, {"tok": encoder.params["embed.token"]},
                               tol=1e-4, samples_per_param=12,
                               rng=np.random.default_rng(0))
        assert report.passed, report.summary()

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            EncoderConfig(model_dim=10, heads=4)
        with pytest.raises(ConfigError):
            EncoderConfig(dropout_rate=1.0)

    def test_empty_sequence_rejected(self, small_encoder):
        with pytest.raises(DataError):
            small_encoder.encode([])
