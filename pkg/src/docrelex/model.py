"""The full relation extraction model: encoder, pooling and scoring head.

A document is encoded once; every ordered entity pair is scored from the
same contextual embeddings. The pair path is vectorized, with per-pair
functions in :mod:`pooling` and :mod:`head` providing the reference
semantics (tests pin the two paths together).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import pooling
from .autodiff import Tensor
from .data import Document, RelationSchema
from .encoder import EncodedDocument, EncoderConfig, TransformerEncoder, Vocabulary, insert_markers
from .errors import ConfigError, DataError
from .head import TH_INDEX, RelationHead
from .metrics import PredictionRecord
from .objective import (LabelSets, ThresholdConfig, adaptive_threshold_loss_batch,
                        bce_loss, decide_adaptive, decide_global, decide_per_class,
                        relation_probabilities)


@dataclass
class ModelSettings:
    """Architecture and ablation switches of the full model."""

    encoder: EncoderConfig
    k: int = 4
    context_pooling: bool = True
    pooling: str = "logsumexp"
    entity_markers: bool = True
    loss: str = "adaptive"

    def __post_init__(self):
        if self.pooling not in pooling.POOLING_KINDS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.loss not in ("adaptive", "bce"):
            raise ConfigError(f"loss must be 'adaptive' or 'bce', got {self.loss!r}")


class RelationExtractionModel:
    def __init__(self, settings: ModelSettings, vocab: Vocabulary,
                 schema: RelationSchema, seed: int = 0):
        self.settings = settings
        self.vocab = vocab
        self.schema = schema
        rng = np.random.default_rng(seed)
        self.encoder = TransformerEncoder(settings.encoder, len(vocab), rng)
        self.head = RelationHead(settings.encoder.model_dim, len(schema), settings.k,
                                 rng, context_pooling=settings.context_pooling)
        # Keyed by object identity: distinct corpora may reuse doc ids.
        self._token_cache: dict[int, tuple[Document, list[int], tuple[tuple[int, ...], ...]]] = {}

    @property
    def params(self) -> dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def tokenize(self, doc: Document) -> tuple[list[int], tuple[tuple[int, ...], ...]]:
        """Token ids plus per-entity mention anchor positions (cached per doc)."""
        cached = self._token_cache.get(id(doc))
        if cached is not None and cached[0] is doc:
            return cached[1], cached[2]
        marked = insert_markers(doc, use_markers=self.settings.entity_markers)
        ids = self.vocab.to_ids(list(marked.tokens))
        self._token_cache[id(doc)] = (doc, ids, marked.anchors)
        return ids, marked.anchors

    def encode_document(self, doc: Document, train: bool = False,
                        rng: np.random.Generator | None = None) -> EncodedDocument:
        ids, anchors = self.tokenize(doc)
        enc = self.encoder.encode(ids, train=train, rng=rng)
        enc.anchors = anchors
        return enc

    def _entity_tensors(self, enc: EncodedDocument) -> tuple[Tensor, Tensor]:
        """Stacked entity embeddings [n_ent, d] and attentions [n_ent, heads, len]."""
        pooled, attn = [], []
        for entity_anchors in enc.anchors:
            if not entity_anchors:
                raise DataError("entity has no mention anchors")
            ments = pooling.mention_embeddings(enc, entity_anchors)
            pooled.append(pooling.entity_pool(ments, self.settings.pooling))
            attn.append(pooling.entity_attention(enc, entity_anchors))
        return ad.stack(pooled, axis=0), ad.stack(attn, axis=0)

    def document_scores(self, doc: Document, train: bool = False,
                        rng: np.random.Generator | None = None,
                        enc: EncodedDocument | None = None
                        ) -> tuple[list[tuple[int, int]], Tensor]:
        """Logits [n_pairs, n_relations + 1] for every ordered entity pair."""
        pairs = doc.ordered_pairs()
        if not pairs:
            raise DataError(f"doc {doc.doc_id!r} has fewer than two entities")
        if enc is None:
            enc = self.encode_document(doc, train=train, rng=rng)
        entity_emb, entity_attn = self._entity_tensors(enc)
        sidx = np.array([s for s, _ in pairs], dtype=np.intp)
        oidx = np.array([o for _, o in pairs], dtype=np.intp)
        h_s = ad.take(entity_emb, sidx, axis=0)
        h_o = ad.take(entity_emb, oidx, axis=0)
        contexts = None
        if self.settings.context_pooling:
            _, contexts = pooling.pair_contexts_batched(enc, entity_attn, sidx, oidx)
        return pairs, self.head.scores(h_s, h_o, contexts)

    def _label_sets(self, doc: Document, pairs: list[tuple[int, int]]) -> list[LabelSets]:
        gold = doc.positive_pairs()
        n = len(self.schema)
        return [LabelSets.from_positives(gold.get(p, ()), n) for p in pairs]

    def batch_loss(self, docs: list[Document], train: bool = True,
                   rng: np.random.Generator | None = None) -> Tensor:
        """Mean per-pair loss across all pairs of all documents in the batch."""
        total, n_pairs = None, 0
        for doc in docs:
            pairs, logits = self.document_scores(doc, train=train, rng=rng)
            labels = self._label_sets(doc, pairs)
            if self.settings.loss == "adaptive":
                doc_loss = ad.scale(adaptive_threshold_loss_batch(logits, labels),
                                    float(len(pairs)))
            else:
                probs = ad.sigmoid(_relation_logits(logits))
                targets = np.zeros((len(pairs), len(self.schema)))
                for i, ls in enumerate(labels):
                    for r in ls.positives:
                        targets[i, r] = 1.0
                doc_loss = ad.scale(bce_loss(probs, targets), float(len(pairs)))
            total = doc_loss if total is None else ad.add(total, doc_loss)
            n_pairs += len(pairs)
        return ad.scale(total, 1.0 / n_pairs)

    def decide(self, logits_row: np.ndarray, thresholds: ThresholdConfig) -> set[int]:
        if thresholds.strategy == "adaptive":
            return decide_adaptive(logits_row)
        probs = relation_probabilities(logits_row)
        if thresholds.strategy == "global":
            return decide_global(probs, thresholds.theta)
        return decide_per_class(probs, thresholds.per_class_thetas)

    def predict_document(self, doc: Document, thresholds: ThresholdConfig
                         ) -> list[PredictionRecord]:
        """One record per ordered pair, empty relation sets (NA) included."""
        pairs, logits = self.document_scores(doc, train=False)
        return [PredictionRecord(doc_id=doc.doc_id, subject_idx=s, object_idx=o,
                                 relation_ids=frozenset(self.decide(logits.data[i], thresholds)))
                for i, (s, o) in enumerate(pairs)]

    def context_weights(self, doc: Document, subject_idx: int, object_idx: int
                        ) -> tuple[list[str], np.ndarray]:
        """Tokens and localized context weights a for one pair, in position order."""
        n = len(doc.entities)
        if not (0 <= subject_idx < n and 0 <= object_idx < n and subject_idx != object_idx):
            raise DataError(f"doc {doc.doc_id!r}: invalid pair "
                            f"({subject_idx}, {object_idx}) for {n} entities")
        marked = insert_markers(doc, use_markers=self.settings.entity_markers)
        enc = self.encode_document(doc, train=False)
        a_s = pooling.entity_attention(enc, enc.anchors[subject_idx])
        a_o = pooling.entity_attention(enc, enc.anchors[object_idx])
        ctx = pooling.pair_context(enc, a_s, a_o, subject_idx, object_idx)
        return list(marked.tokens), ctx.a.data.copy()


def _relation_logits(logits: Tensor) -> Tensor:
    """Drop the TH column: graph-side equivalent of relation_probabilities."""
    n, c = logits.shape
    keep = np.array([i for i in range(c) if i != TH_INDEX], dtype=np.intp)
    return ad.take(logits, keep, axis=1)
