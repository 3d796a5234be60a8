"""Corpus data model, JSONL persistence, and synthetic corpus generation.

A corpus file holds one JSON document per line:

    {"doc_id": ..., "sentences": [[tok, ...], ...],
     "entities": [{"type": ..., "mentions": [[sent, start, end], ...]}, ...],
     "labels": [{"subject": i, "object": j, "relation": name,
                 "evidence": [sent, ...]?}, ...]}

Entity ids are list positions. Labels name relations by their schema name.
All invariants are enforced at load time; errors carry the doc id and the
offending field path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class Mention:
    sentence_idx: int
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class Entity:
    entity_id: int
    mentions: tuple[Mention, ...]
    type_tag: str = ""


@dataclass(frozen=True)
class RelationLabel:
    subject_idx: int
    object_idx: int
    relation_id: int
    evidence: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[tuple[str, ...], ...]
    entities: tuple[Entity, ...]
    gold_labels: tuple[RelationLabel, ...]

    def flat_tokens(self) -> list[str]:
        return [t for sent in self.sentences for t in sent]

    def sentence_offsets(self) -> list[int]:
        offsets, pos = [], 0
        for sent in self.sentences:
            offsets.append(pos)
            pos += len(sent)
        return offsets

    def flat_span(self, m: Mention) -> tuple[int, int]:
        off = self.sentence_offsets()[m.sentence_idx]
        return off + m.start, off + m.end

    def surface_form(self, entity_idx: int) -> str:
        """First mention's text; the entity's identity for fact matching."""
        m = self.entities[entity_idx].mentions[0]
        return " ".join(self.sentences[m.sentence_idx][m.start:m.end])

    def positive_pairs(self) -> dict[tuple[int, int], set[int]]:
        pairs: dict[tuple[int, int], set[int]] = {}
        for lab in self.gold_labels:
            pairs.setdefault((lab.subject_idx, lab.object_idx), set()).add(lab.relation_id)
        return pairs

    def ordered_pairs(self) -> list[tuple[int, int]]:
        n = len(self.entities)
        return [(s, o) for s in range(n) for o in range(n) if s != o]


class RelationSchema:
    """Ordered relation names; NA is the absence of any relation, never a member."""

    def __init__(self, names: list[str] | tuple[str, ...]):
        names = list(names)
        if len(names) < 1:
            raise ConfigError("relation schema needs at least one relation")
        if len(set(names)) != len(names):
            raise ConfigError(f"relation names must be unique, got {names}")
        self.names: tuple[str, ...] = tuple(names)
        self._ids = {name: i for i, name in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, RelationSchema) and self.names == other.names

    def id_of(self, name: str) -> int:
        if name not in self._ids:
            raise DataError(f"unknown relation name {name!r}; schema has {self.names}")
        return self._ids[name]

    def name_of(self, relation_id: int) -> str:
        if not 0 <= relation_id < len(self.names):
            raise DataError(f"relation id {relation_id} outside schema of size {len(self.names)}")
        return self.names[relation_id]


# ---------------------------------------------------------------------------
# validation and persistence


def _validate_document(doc: Document, schema: RelationSchema) -> None:
    did = doc.doc_id
    for si, sent in enumerate(doc.sentences):
        if len(sent) == 0:
            raise DataError(f"doc {did!r}: sentences[{si}] is empty")
    for ei, ent in enumerate(doc.entities):
        if len(ent.mentions) == 0:
            raise DataError(f"doc {did!r}: entities[{ei}] has no mentions")
        for mi, m in enumerate(ent.mentions):
            path = f"entities[{ei}].mentions[{mi}]"
            if not 0 <= m.sentence_idx < len(doc.sentences):
                raise DataError(f"doc {did!r}: {path}: sentence index {m.sentence_idx} out of range")
            if not m.start < m.end:
                raise DataError(f"doc {did!r}: {path}: start {m.start} must precede end {m.end}")
            if not (0 <= m.start and m.end <= len(doc.sentences[m.sentence_idx])):
                raise DataError(f"doc {did!r}: {path}: span ({m.start}, {m.end}) exceeds "
                                f"sentence length {len(doc.sentences[m.sentence_idx])}")
    n_ent = len(doc.entities)
    seen = set()
    for li, lab in enumerate(doc.gold_labels):
        path = f"labels[{li}]"
        for side, idx in (("subject", lab.subject_idx), ("object", lab.object_idx)):
            if not 0 <= idx < n_ent:
                raise DataError(f"doc {did!r}: {path}.{side} index {idx} out of range "
                                f"(document has {n_ent} entities)")
        if lab.subject_idx == lab.object_idx:
            raise DataError(f"doc {did!r}: {path}: subject and object coincide ({lab.subject_idx})")
        if not 0 <= lab.relation_id < len(schema):
            raise DataError(f"doc {did!r}: {path}: relation id {lab.relation_id} outside schema")
        key = (lab.subject_idx, lab.object_idx, lab.relation_id)
        if key in seen:
            raise DataError(f"doc {did!r}: {path}: duplicate label {key}")
        seen.add(key)
        if lab.evidence is not None:
            for ev in lab.evidence:
                if not 0 <= ev < len(doc.sentences):
                    raise DataError(f"doc {did!r}: {path}.evidence: sentence {ev} out of range")


def _parse_document(raw: dict, schema: RelationSchema, lineno: int) -> Document:
    did = raw.get("doc_id")
    if not isinstance(did, str) or not did:
        raise DataError(f"line {lineno}: field 'doc_id' must be a non-empty string")

    def bad(path: str, why: str):
        return DataError(f"doc {did!r}: {path}: {why}")

    sentences = raw.get("sentences")
    if not isinstance(sentences, list) or not all(
            isinstance(s, list) and all(isinstance(t, str) for t in s) for s in sentences):
        raise bad("sentences", "must be a list of token lists")

    entities = []
    raw_entities = raw.get("entities")
    if not isinstance(raw_entities, list):
        raise bad("entities", "must be a list")
    for ei, re in enumerate(raw_entities):
        if not isinstance(re, dict):
            raise bad(f"entities[{ei}]", "must be an object")
        raw_mentions = re.get("mentions")
        if not isinstance(raw_mentions, list):
            raise bad(f"entities[{ei}].mentions", "must be a list")
        mentions = []
        for mi, rm in enumerate(raw_mentions):
            if (not isinstance(rm, list) or len(rm) != 3
                    or not all(isinstance(v, int) for v in rm)):
                raise bad(f"entities[{ei}].mentions[{mi}]",
                          "must be an [sentence, start, end] integer triple")
            mentions.append(Mention(*rm))
        entities.append(Entity(entity_id=ei, mentions=tuple(mentions),
                               type_tag=str(re.get("type", ""))))

    labels = []
    raw_labels = raw.get("labels")
    if not isinstance(raw_labels, list):
        raise bad("labels", "must be a list")
    for li, rl in enumerate(raw_labels):
        if not isinstance(rl, dict):
            raise bad(f"labels[{li}]", "must be an object")
        for key in ("subject", "object"):
            if not isinstance(rl.get(key), int):
                raise bad(f"labels[{li}].{key}", "must be an integer entity index")
        rel = rl.get("relation")
        if not isinstance(rel, str):
            raise bad(f"labels[{li}].relation", "must be a relation name string")
        evidence = rl.get("evidence")
        if evidence is not None and (not isinstance(evidence, list)
                                     or not all(isinstance(v, int) for v in evidence)):
            raise bad(f"labels[{li}].evidence", "must be a list of sentence indices")
        labels.append(RelationLabel(rl["subject"], rl["object"], schema.id_of(rel),
                                    tuple(evidence) if evidence is not None else None))

    doc = Document(doc_id=did,
                   sentences=tuple(tuple(s) for s in sentences),
                   entities=tuple(entities),
                   gold_labels=tuple(labels))
    _validate_document(doc, schema)
    return doc


def load_corpus(path: str | Path, schema: RelationSchema) -> list[Document]:
    """Read and validate a JSONL corpus; every invariant is checked here."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON: {e}") from e
            if not isinstance(raw, dict):
                raise DataError(f"line {lineno}: expected a JSON object")
            docs.append(_parse_document(raw, schema, lineno))
    return docs


def document_to_json(doc: Document, schema: RelationSchema) -> dict:
    labels = []
    for lab in doc.gold_labels:
        rec = {"subject": lab.subject_idx, "object": lab.object_idx,
               "relation": schema.name_of(lab.relation_id)}
        if lab.evidence is not None:
            rec["evidence"] = list(lab.evidence)
        labels.append(rec)
    return {
        "doc_id": doc.doc_id,
        "sentences": [list(s) for s in doc.sentences],
        "entities": [{"type": e.type_tag, "mentions": [[m.sentence_idx, m.start, m.end]
                                                       for m in e.mentions]}
                     for e in doc.entities],
        "labels": labels,
    }


def save_corpus(docs: list[Document], path: str | Path, schema: RelationSchema) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_json(doc, schema), ensure_ascii=False))
            fh.write("\n")


def scan_relation_names(paths: list[str | Path]) -> list[str]:
    """Sorted union of relation names appearing in raw corpus files.

    Used to build a schema when none is configured; runs before full
    validation, so it only needs well-formed JSON lines.
    """
    names: set[str] = set()
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}: line {lineno}: invalid JSON: {e}") from e
                for lab in raw.get("labels", []) if isinstance(raw, dict) else []:
                    if isinstance(lab, dict) and isinstance(lab.get("relation"), str):
                        names.add(lab["relation"])
    if not names:
        raise DataError(f"no relation names found in {list(map(str, paths))}")
    return sorted(names)


def collect_facts(docs: list[Document], schema: RelationSchema) -> set[tuple[str, str, str]]:
    """(subject surface, relation name, object surface) triples of a corpus."""
    facts = set()
    for doc in docs:
        for lab in doc.gold_labels:
            facts.add((doc.surface_form(lab.subject_idx),
                       schema.name_of(lab.relation_id),
                       doc.surface_form(lab.object_idx)))
    return facts


# ---------------------------------------------------------------------------
# synthetic corpus generation

# Entity names come from a pool large enough that subject-object pairs seen
# in training cover only a sliver of the possible combinations (so pair
# memorization cannot generalize) yet small enough that every name token is
# frequent and gets a trained embedding.
_NAME_PREFIXES = "ba do fe ga ho ji ka lu mo ne pi ro".split()
_NAME_SUFFIXES = "dal ker lin mor nev rak sol tam vik wen zor".split()
_NAME_POOL = tuple(p + s for p in _NAME_PREFIXES for s in _NAME_SUFFIXES)

# Width of every generated sentence after entity markers are inserted.
_SENTENCE_WIDTH = 8

# Mention slots keep entity names away from the sentence positions that
# subject and object names occupy in trigger sentences, so an incidental
# mention never mimics a relation role.
_MENTION_TEMPLATES = (
    ("then", "{}", "expanded"),
    ("analysts", "watched", "{}"),
    ("reports", "said", "{}", "grew"),
    ("soon", "{}", "made", "news"),
)

_DISTRACTORS = (
    ("the", "quarter", "ended", "quietly"),
    ("markets", "were", "calm"),
    ("several", "filings", "arrived", "late"),
)


def default_schema() -> RelationSchema:
    return RelationSchema(["founded", "acquired", "employs", "visited"])


@dataclass
class SyntheticConfig:
    """Knobs for the generator; defaults give a small learnable corpus."""

    entities_per_doc: tuple[int, int] = (4, 8)
    mentions_per_entity: tuple[int, int] = (1, 3)
    positive_pairs_per_doc: tuple[int, int] = (4, 7)
    multi_label_rate: float = 0.07
    distractors_per_doc: tuple[int, int] = (1, 2)


def generate_synthetic_corpus(seed: int, n_docs: int,
                              schema: RelationSchema | None = None,
                              config: SyntheticConfig | None = None) -> list[Document]:
    """Deterministic corpus where each relation is signalled by its trigger token.

    Every positive (subject, object, relation) gets one sentence of the form
    ``subject <trigger> object``, so the relation and its direction are
    recoverable from surface context. Extra mention and distractor sentences
    create multi-mention entities and guaranteed NA pairs.
    """
    if schema is None:
        schema = default_schema()
    if config is None:
        config = SyntheticConfig()
    if len(schema) < 2:
        raise ConfigError("synthetic corpus needs a schema with at least 2 relations")
    for name in schema.names:
        if " " in name:
            raise ConfigError(f"relation name {name!r} must be a single token")

    rng = np.random.default_rng(seed)
    docs = []
    for di in range(n_docs):
        lo, hi = config.entities_per_doc
        n_ent = int(rng.integers(lo, hi + 1))
        names = [[str(n)] for n in rng.choice(_NAME_POOL, size=n_ent, replace=False)]

        all_pairs = [(s, o) for s in range(n_ent) for o in range(n_ent) if s != o]
        lo, hi = config.positive_pairs_per_doc
        n_pos = min(int(rng.integers(lo, hi + 1)), len(all_pairs) - 1)
        pair_idx = rng.choice(len(all_pairs), size=n_pos, replace=False)
        positives: list[tuple[int, int, int]] = []
        for pi in pair_idx:
            s, o = all_pairs[pi]
            first = int(rng.integers(len(schema)))
            positives.append((s, o, first))
            if rng.random() < config.multi_label_rate:
                second = int(rng.integers(len(schema) - 1))
                if second >= first:
                    second += 1
                positives.append((s, o, second))

        # (sentence tokens, [(entity, start, end), ...]); every sentence is
        # padded so that, after marker insertion, it spans exactly
        # _SENTENCE_WIDTH tokens. Constant-width sentences put each template
        # role at a fixed position modulo the width, which a small encoder
        # can read straight off its position embeddings.
        sentences: list[tuple[list[str], list[tuple[int, int, int]]]] = []

        def pad_to_width(tokens: list[str], n_mentions: int) -> list[str]:
            post = len(tokens) + (2 * n_mentions if pad_for_markers else 0)
            return tokens + ["."] * ((-post) % _SENTENCE_WIDTH)

        pad_for_markers = True
        occurrences = [0] * n_ent
        for s, o, r in positives:
            tokens = names[s] + [schema.name_of(r)] + names[o]
            w = len(names[s])
            sentences.append((pad_to_width(tokens, 2),
                              [(s, 0, w), (o, w + 1, w + 1 + len(names[o]))]))
            occurrences[s] += 1
            occurrences[o] += 1

        lo, hi = config.mentions_per_entity
        for e in range(n_ent):
            target = int(rng.integers(lo, hi + 1))
            for _ in range(max(target - occurrences[e], 1 - occurrences[e], 0)):
                tpl = _MENTION_TEMPLATES[int(rng.integers(len(_MENTION_TEMPLATES)))]
                slot = tpl.index("{}")
                tokens = list(tpl[:slot]) + names[e] + list(tpl[slot + 1:])
                sentences.append((pad_to_width(tokens, 1),
                                  [(e, slot, slot + len(names[e]))]))
                occurrences[e] += 1

        lo, hi = config.distractors_per_doc
        for _ in range(int(rng.integers(lo, hi + 1))):
            tokens = list(_DISTRACTORS[int(rng.integers(len(_DISTRACTORS)))])
            sentences.append((pad_to_width(tokens, 0), []))

        order = rng.permutation(len(sentences))
        mentions_by_entity: list[list[Mention]] = [[] for _ in range(n_ent)]
        final_sentences = []
        for new_idx, old_idx in enumerate(order):
            tokens, ments = sentences[old_idx]
            final_sentences.append(tuple(tokens))
            for e, start, end in ments:
                mentions_by_entity[e].append(Mention(new_idx, start, end))

        entities = tuple(Entity(entity_id=e, mentions=tuple(mentions_by_entity[e]),
                                type_tag="ORG")
                         for e in range(n_ent))
        labels = tuple(RelationLabel(s, o, r) for s, o, r in positives)
        doc = Document(doc_id=f"s{seed}d{di:05d}", sentences=tuple(final_sentences),
                       entities=entities, gold_labels=labels)
        _validate_document(doc, schema)
        _assert_triggers_present(doc, schema)
        if len(doc.positive_pairs()) >= len(all_pairs):
            raise DataError(f"doc {doc.doc_id}: no NA pair left")  # unreachable by construction
        docs.append(doc)
    return docs


def _assert_triggers_present(doc: Document, schema: RelationSchema) -> None:
    # Generator self-check: the trigger sentence of every label must exist.
    sentences = [list(s) for s in doc.sentences]
    for lab in doc.gold_labels:
        expected = (doc.surface_form(lab.subject_idx).split()
                    + [schema.name_of(lab.relation_id)]
                    + doc.surface_form(lab.object_idx).split())
        n = len(expected)
        if not any(sent[i:i + n] == expected
                   for sent in sentences for i in range(len(sent) - n + 1)):
            raise DataError(f"doc {doc.doc_id}: trigger sentence missing for "
                            f"label {expected}")
