"""Entity representations from token-level encoder output.

Mention embeddings are the hidden rows at the mentions' start markers.
Entities pool their mentions with elementwise logsumexp (a smooth maximum;
mean and max exist as ablation baselines). Entity-level attention averages
the markers' attention rows, and a pair's localized context weights are the
head-summed elementwise product of the two entities' attention, normalized
into a distribution over tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncodedDocument
from .errors import ConfigError, DataError

ZERO_OVERLAP_EPS = 1e-12

POOLING_KINDS = ("logsumexp", "mean", "max")


@dataclass
class EntityEmbedding:
    entity_id: int
    h_e: Tensor  # [model_dim]


@dataclass
class EntityAttention:
    entity_id: int
    a_e: Tensor  # [heads, len], one probability row per head


@dataclass
class PairContext:
    subject_id: int
    object_id: int
    a: Tensor  # [len] context weights, nonnegative, summing to 1
    c: Tensor  # [model_dim] weighted average of token embeddings


def mention_embeddings(enc: EncodedDocument, anchors: Sequence[int]) -> Tensor:
    """Rows of the hidden matrix at each mention's start-marker position."""
    l = enc.hidden.shape[0]
    for p in anchors:
        if not 0 <= p < l:
            raise DataError(f"mention anchor {p} outside sequence of length {l}")
    return ad.take(enc.hidden, np.asarray(anchors, dtype=np.intp), axis=0)


def entity_pool(mentions: Tensor, kind: str = "logsumexp") -> Tensor:
    """Aggregate mention embeddings [n_mentions, d] into one entity vector."""
    if mentions.data.ndim != 2 or mentions.shape[0] < 1:
        raise DataError(f"entity_pool needs a non-empty [n_mentions, d] tensor, "
                        f"got shape {mentions.shape}")
    if kind == "logsumexp":
        return ad.logsumexp(mentions, axis=0)
    if kind == "mean":
        return ad.mean(mentions, axis=0)
    if kind == "max":
        return ad.amax(mentions, axis=0)
    raise ConfigError(f"unknown pooling kind {kind!r}; expected one of {POOLING_KINDS}")


def entity_attention(enc: EncodedDocument, anchors: Sequence[int]) -> Tensor:
    """Per-head attention from an entity to all tokens: its mentions' marker
    rows averaged over mentions. Rows stay probability distributions."""
    if len(anchors) < 1:
        raise DataError("entity_attention needs at least one mention anchor")
    rows = ad.take(enc.attention, np.asarray(anchors, dtype=np.intp), axis=1)
    return ad.mean(rows, axis=1)  # [heads, len]


def pair_context(enc: EncodedDocument, a_subject: Tensor, a_object: Tensor,
                 subject_id: int = -1, object_id: int = -1) -> PairContext:
    """Localized context for one pair from the two entity attentions [heads, len].

    Per head, the two attention rows are multiplied elementwise; the product
    is summed over heads and normalized to a distribution, which then weights
    the token embeddings. If the overlap is numerically zero everywhere, the
    weights fall back to uniform over the real (non-pad) tokens.
    """
    if a_subject.shape != a_object.shape:
        raise DataError(f"entity attention shapes differ: {a_subject.shape} "
                        f"vs {a_object.shape}")
    q = ad.sum_(ad.mul(a_subject, a_object), axis=0)  # [len]
    total = float(q.data.sum())
    l = q.shape[0]
    if total < ZERO_OVERLAP_EPS:
        weights = np.zeros(l)
        weights[:enc.n_real] = 1.0 / enc.n_real
        a = Tensor(weights)
    else:
        a = ad.normalize_sum(q, axis=0)
    c = ad.reshape(ad.matmul(ad.reshape(a, (1, l)), enc.hidden), (enc.hidden.shape[1],))
    return PairContext(subject_id=subject_id, object_id=object_id, a=a, c=c)


def pair_contexts_batched(enc: EncodedDocument, entity_attn: Tensor,
                          subject_idx: np.ndarray, object_idx: np.ndarray) -> tuple[Tensor, Tensor]:
    """Vectorized localized context for many pairs at once.

    ``entity_attn`` stacks per-entity attention as [n_entities, heads, len].
    Returns weights [n_pairs, len] and contexts [n_pairs, d]. Softmax
    attention makes every overlap strictly positive, so the uniform fallback
    of :func:`pair_context` cannot trigger here; a zero overlap is an error.
    """
    subj = ad.take(entity_attn, subject_idx, axis=0)
    obj = ad.take(entity_attn, object_idx, axis=0)
    q = ad.sum_(ad.mul(subj, obj), axis=1)  # [n_pairs, len]
    a = ad.normalize_sum(q, axis=1)
    c = ad.matmul(a, enc.hidden)
    return a, c
