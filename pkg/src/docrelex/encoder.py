"""Tokenization with mention markers and a small trainable transformer encoder.

The encoder returns contextual embeddings for every token plus the last
layer's per-head attention probabilities, which downstream pooling turns
into entity representations and pair-specific context weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Document
from .errors import ConfigError, DataError

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
MARKER_TOKEN = "*"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, MARKER_TOKEN)

_NEG_INF = -1e30


class Vocabulary:
    """Dense 0-based token ids; PAD, UNK and the mention marker come first."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:3]) != RESERVED_TOKENS:
            raise ConfigError(f"vocabulary must start with {RESERVED_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def marker_id(self) -> int:
        return 2

    @classmethod
    def from_corpus(cls, docs: list[Document]) -> "Vocabulary":
        seen = {t for doc in docs for sent in doc.sentences for t in sent}
        seen -= set(RESERVED_TOKENS)
        return cls(list(RESERVED_TOKENS) + sorted(seen))

    def to_ids(self, tokens: list[str]) -> list[int]:
        unk = self.unk_id
        return [self._ids.get(t, unk) for t in tokens]

    def save(self, path: str | Path) -> None:
        # One token per line; the line number is the id.
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


# ---------------------------------------------------------------------------
# mention markers


@dataclass(frozen=True)
class MarkedDocument:
    """Flat token sequence after marker insertion, plus remapped mention info.

    ``anchors[e][m]`` is the position of the start marker of mention ``m``
    of entity ``e`` (its first token when markers are disabled);
    ``spans[e][m]`` is the remapped (start, end) of the mention text itself.
    """

    tokens: tuple[str, ...]
    anchors: tuple[tuple[int, ...], ...]
    spans: tuple[tuple[tuple[int, int], ...], ...]


def insert_markers(doc: Document, use_markers: bool = True) -> MarkedDocument:
    """Insert one ``*`` before and after every mention span of the document.

    Mentions of the same entity must not overlap; across entities, spans may
    coincide exactly (they then share one marker pair) or be disjoint.
    """
    flat = doc.flat_tokens()
    spans_per_entity: list[list[tuple[int, int]]] = []
    for ei, ent in enumerate(doc.entities):
        spans = []
        for mi, m in enumerate(ent.mentions):
            s, e = doc.flat_span(m)
            if not (0 <= s < e <= len(flat)):
                raise DataError(f"doc {doc.doc_id!r}: entities[{ei}].mentions[{mi}] span "
                                f"({s}, {e}) out of bounds for {len(flat)} tokens")
            spans.append((s, e))
        for (s1, e1), (s2, e2) in zip(sorted(spans), sorted(spans)[1:]):
            if s2 < e1:
                raise DataError(f"doc {doc.doc_id!r}: entity {ei} has overlapping mentions "
                                f"({s1},{e1}) and ({s2},{e2})")
        spans_per_entity.append(spans)

    distinct = sorted({sp for spans in spans_per_entity for sp in spans})
    for (s1, e1), (s2, e2) in zip(distinct, distinct[1:]):
        if s2 < e1:
            raise DataError(f"doc {doc.doc_id!r}: mentions ({s1},{e1}) and ({s2},{e2}) "
                            "overlap without being identical")

    if not use_markers:
        anchors = tuple(tuple(s for s, _ in spans) for spans in spans_per_entity)
        spans_out = tuple(tuple(spans) for spans in spans_per_entity)
        return MarkedDocument(tuple(flat), anchors, spans_out)

    new_tokens: list[str] = []
    anchor_of: dict[tuple[int, int], int] = {}
    newspan_of: dict[tuple[int, int], tuple[int, int]] = {}
    pos = 0
    for s, e in distinct:
        new_tokens.extend(flat[pos:s])
        anchor_of[(s, e)] = len(new_tokens)
        new_tokens.append(MARKER_TOKEN)
        new_tokens.extend(flat[s:e])
        newspan_of[(s, e)] = (anchor_of[(s, e)] + 1, anchor_of[(s, e)] + 1 + (e - s))
        new_tokens.append(MARKER_TOKEN)
        pos = e
    new_tokens.extend(flat[pos:])

    anchors = tuple(tuple(anchor_of[sp] for sp in spans) for spans in spans_per_entity)
    spans_out = tuple(tuple(newspan_of[sp] for sp in spans) for spans in spans_per_entity)
    return MarkedDocument(tuple(new_tokens), anchors, spans_out)


# ---------------------------------------------------------------------------
# transformer encoder


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    max_len: int = 256
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by "
                              f"heads {self.heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class EncodedDocument:
    """Encoder output for one document.

    ``attention`` stacks the last layer's post-softmax (pre-dropout) head
    probabilities as [heads, len, len]; ``attention_heads`` exposes the same
    nodes per head. ``anchors`` is filled by the caller that tokenized the
    document.
    """

    token_ids: tuple[int, ...]
    n_real: int
    hidden: Tensor                     # [len, model_dim]
    attention: Tensor                  # [heads, len, len]
    attention_heads: list[Tensor] = field(default_factory=list)
    anchors: tuple[tuple[int, ...], ...] | None = None


def _sinusoid_table(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


class TransformerEncoder:
    """Learned token + position embeddings, post-norm self-attention stack."""

    def __init__(self, config: EncoderConfig, vocab_size: int,
                 rng: np.random.Generator):
        self.config = config
        self.vocab_size = vocab_size
        d, f = config.model_dim, config.ffn_dim
        self.params: dict[str, Tensor] = {}

        def param(name, shape, init="normal"):
            if init == "normal":
                data = rng.normal(0.0, 0.02, size=shape)
            elif init == "zeros":
                data = np.zeros(shape)
            elif init == "sinusoid":
                # Learned like every other parameter, but starting from the
                # classic sinusoid so relative-offset attention patterns are
                # cheap to pick up for a small model.
                data = 0.02 * _sinusoid_table(shape[0], shape[1])
            else:
                data = np.ones(shape)
            t = Tensor(data, requires_grad=True)
            self.params[name] = t
            return t

        param("embed.token", (vocab_size, d))
        param("embed.position", (config.max_len, d), "sinusoid")
        param("embed.ln.gamma", (d,), "ones")
        param("embed.ln.beta", (d,), "zeros")
        for i in range(config.layers):
            p = f"layer{i}"
            for m in ("wq", "wk", "wv", "wo"):
                param(f"{p}.attn.{m}", (d, d))
            for m in ("bq", "bk", "bv", "bo"):
                param(f"{p}.attn.{m}", (d,), "zeros")
            param(f"{p}.ln1.gamma", (d,), "ones")
            param(f"{p}.ln1.beta", (d,), "zeros")
            param(f"{p}.ffn.w1", (d, f))
            param(f"{p}.ffn.b1", (f,), "zeros")
            param(f"{p}.ffn.w2", (f, d))
            param(f"{p}.ffn.b2", (d,), "zeros")
            param(f"{p}.ln2.gamma", (d,), "ones")
            param(f"{p}.ln2.beta", (d,), "zeros")

    def _dropout(self, x: Tensor, train: bool, rng: np.random.Generator | None) -> Tensor:
        rate = self.config.dropout_rate
        if not train or rate <= 0.0:
            return x
        if rng is None:
            raise ConfigError("training-mode encoding needs an rng for dropout")
        keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
        return ad.mul(x, Tensor(keep))

    def encode(self, token_ids: list[int], *, train: bool = False,
               rng: np.random.Generator | None = None,
               n_real: int | None = None,
               truncate: bool = False) -> EncodedDocument:
        """Run the stack; over-long input is an error unless ``truncate`` is set."""
        cfg = self.config
        ids = list(token_ids)
        if len(ids) > cfg.max_len:
            if not truncate:
                raise DataError(f"sequence of length {len(ids)} exceeds max_len "
                                f"{cfg.max_len}; pass truncate=True to cut it")
            ids = ids[:cfg.max_len]
        if not ids:
            raise DataError("cannot encode an empty token sequence")
        l = len(ids)
        if n_real is None:
            n_real = l
        if not 0 < n_real <= l:
            raise DataError(f"n_real {n_real} outside (0, {l}]")

        d, heads = cfg.model_dim, cfg.heads
        dk = d // heads
        head_cols = [np.arange(h * dk, (h + 1) * dk) for h in range(heads)]

        x = ad.add(ad.take(self.params["embed.token"], ids),
                   ad.take(self.params["embed.position"], np.arange(l)))
        x = ad.layer_norm(x, self.params["embed.ln.gamma"], self.params["embed.ln.beta"])
        x = self._dropout(x, train, rng)

        mask = None
        if n_real < l:
            m = np.zeros((l, l))
            m[:, n_real:] = _NEG_INF  # keys at pad positions are unreachable
            mask = Tensor(m)

        attn_heads: list[Tensor] = []
        for i in range(cfg.layers):
            p = self.params
            pre = f"layer{i}"
            q = ad.add_bias(ad.matmul(x, p[f"{pre}.attn.wq"]), p[f"{pre}.attn.bq"])
            k = ad.add_bias(ad.matmul(x, p[f"{pre}.attn.wk"]), p[f"{pre}.attn.bk"])
            v = ad.add_bias(ad.matmul(x, p[f"{pre}.attn.wv"]), p[f"{pre}.attn.bv"])
            attn_heads = []
            ctx_sum = None
            for h in range(heads):
                qh = ad.take(q, head_cols[h], axis=1)
                kh = ad.take(k, head_cols[h], axis=1)
                vh = ad.take(v, head_cols[h], axis=1)
                scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(dk))
                if mask is not None:
                    scores = ad.add(scores, mask)
                probs = ad.softmax(scores, axis=1)
                attn_heads.append(probs)
                ctx = ad.matmul(probs, vh)
                wo_rows = ad.take(p[f"{pre}.attn.wo"], head_cols[h], axis=0)
                contrib = ad.matmul(ctx, wo_rows)
                ctx_sum = contrib if ctx_sum is None else ad.add(ctx_sum, contrib)
            attn_out = ad.add_bias(ctx_sum, p[f"{pre}.attn.bo"])
            attn_out = self._dropout(attn_out, train, rng)
            x = ad.layer_norm(ad.add(x, attn_out),
                              p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"])
            ff = ad.gelu(ad.add_bias(ad.matmul(x, p[f"{pre}.ffn.w1"]), p[f"{pre}.ffn.b1"]))
            ff = ad.add_bias(ad.matmul(ff, p[f"{pre}.ffn.w2"]), p[f"{pre}.ffn.b2"])
            ff = self._dropout(ff, train, rng)
            x = ad.layer_norm(ad.add(x, ff),
                              p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"])

        return EncodedDocument(token_ids=tuple(ids), n_real=n_real, hidden=x,
                               attention=ad.stack(attn_heads, axis=0),
                               attention_heads=attn_heads)
