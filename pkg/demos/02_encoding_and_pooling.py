"""From a raw document to entity embeddings and pair-specific context.

Shows marker insertion, encoding, logsumexp entity pooling, and the
localized context weights that highlight tokens relevant to one pair.

Run:  python demos/02_encoding_and_pooling.py
"""

import numpy as np

from docrelex import pooling
from docrelex.data import Document, Entity, Mention, RelationLabel, RelationSchema
from docrelex.encoder import EncoderConfig, Vocabulary, insert_markers
from docrelex.model import ModelSettings, RelationExtractionModel

schema = RelationSchema(["founded"])
doc = Document(
    doc_id="demo",
    sentences=(
        ("hoker", "founded", "nelin"),
        ("analysts", "watched", "hoker"),
        ("markets", "were", "calm"),
    ),
    entities=(
        Entity(0, (Mention(0, 0, 1), Mention(1, 2, 3)), "ORG"),
        Entity(1, (Mention(0, 2, 3),), "ORG"),
    ),
    gold_labels=(RelationLabel(0, 1, 0),),
)

# Each mention is wrapped in '*' markers; the start marker is its anchor.
marked = insert_markers(doc)
print("marked tokens:", " ".join(marked.tokens))
print("anchors per entity:", marked.anchors)

settings = ModelSettings(encoder=EncoderConfig(layers=2, heads=4, model_dim=64,
                                               ffn_dim=128, max_len=64))
model = RelationExtractionModel(settings, Vocabulary.from_corpus([doc]), schema, seed=7)
enc = model.encode_document(doc)
print("\nhidden shape:", enc.hidden.shape, " attention shape:", enc.attention.shape)

# Entity embedding = elementwise logsumexp over its mention anchors.
ments = pooling.mention_embeddings(enc, enc.anchors[0])
h_e = pooling.entity_pool(ments)
print("entity 0 pooled from", ments.shape[0], "mentions ->", h_e.shape)

# Pair context: multiply the two entities' attention, normalize, weight tokens.
a_s = pooling.entity_attention(enc, enc.anchors[0])
a_o = pooling.entity_attention(enc, enc.anchors[1])
ctx = pooling.pair_context(enc, a_s, a_o, 0, 1)
print("\ncontext weights (sum = %.6f):" % ctx.a.data.sum())
order = np.argsort(ctx.a.data)[::-1][:5]
for pos in order:
    print(f"  {marked.tokens[pos]:>10s}  {ctx.a.data[pos]:.4f}")
