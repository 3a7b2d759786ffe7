"""Argument-cloze document/query instance generation."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .corpus import (
    DocumentRecord,
    EventRecord,
    EventToken,
    TokenKind,
    event_to_tokens,
    placeholder_token,
)
from .exceptions import CorpusParseError


@dataclass(frozen=True)
class ClozeInstance:
    doc_tokens: tuple
    query_tokens: tuple
    answer_positions: tuple
    candidate_positions: tuple
    target_role: str
    meta: dict = field(default_factory=dict, compare=False)
    supervision: Optional[tuple] = None

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_positions)

    @property
    def n_answers(self) -> int:
        return len(self.answer_positions)


def _qualifying(event: EventRecord, seen_entities: Counter) -> list[int]:
    return [
        j for j, arg in enumerate(event.args)
        if arg.entity_id is not None and seen_entities[arg.entity_id] > 0
    ]


def _positions_of(doc_tokens: list, entity_ids) -> tuple:
    return tuple(i for i, t in enumerate(doc_tokens) if t.kind is TokenKind.ARGUMENT and t.entity_id in entity_ids)


def _query(event: EventRecord, target: int, missing=()) -> tuple:
    tokens = event_to_tokens(event)
    # token 0 is the predicate, argument j sits at j + 1
    for j in missing:
        tokens[j + 1] = placeholder_token(event.args[j].role, TokenKind.MISSING)
    tokens[target + 1] = placeholder_token(event.args[target].role, TokenKind.TARGET)
    return tuple(tokens)


def _walk(doc: DocumentRecord):
    """Yield (event_index, event, preceding tokens, preceding entity counts)."""
    prefix: list = []
    seen: Counter = Counter()
    for i, event in enumerate(doc.events):
        yield i, event, prefix, seen
        tokens = event_to_tokens(event)
        prefix = prefix + tokens
        for t in tokens:
            if t.entity_id is not None:
                seen[t.entity_id] += 1


def _make(doc, i, event, prefix, target, missing=(), supervision=None) -> ClozeInstance:
    entity = event.args[target].entity_id
    doc_tokens = tuple(prefix)
    candidates = tuple(k for k, t in enumerate(doc_tokens) if t.kind is TokenKind.ARGUMENT)
    meta = {"doc_id": doc.doc_id, "event_index": i, "entity_id": entity}
    return ClozeInstance(
        doc_tokens=doc_tokens,
        query_tokens=_query(event, target, missing),
        answer_positions=_positions_of(prefix, {entity}),
        candidate_positions=candidates,
        target_role=event.args[target].role,
        meta=meta,
        supervision=supervision,
    )


def generate_instances(doc: DocumentRecord) -> list[ClozeInstance]:
    """One instance per argument that corefers with a preceding argument."""
    out = []
    for i, event, prefix, seen in _walk(doc):
        for j in _qualifying(event, seen):
            out.append(_make(doc, i, event, prefix, j))
    return out


def generate_multi_arg_instances(doc: DocumentRecord) -> list[ClozeInstance]:
    """Instances for events with two or more qualifying arguments.

    All qualifying arguments are removed from the query; each one becomes the
    target in turn while the others are marked missing. ``supervision`` holds
    the document positions of every mention of every removed entity.
    """
    out = []
    for i, event, prefix, seen in _walk(doc):
        qualifying = _qualifying(event, seen)
        if len(qualifying) < 2:
            continue
        removed = {event.args[j].entity_id for j in qualifying}
        supervision = _positions_of(prefix, removed)
        for j in qualifying:
            others = [k for k in qualifying if k != j]
            inst = _make(doc, i, event, prefix, j, others, supervision)
            inst.meta["removed_entity_ids"] = sorted(removed)
            out.append(inst)
    return out


def generate(docs: Iterable[DocumentRecord], multi_arg: bool = False) -> Iterator[ClozeInstance]:
    gen = generate_multi_arg_instances if multi_arg else generate_instances
    for doc in docs:
        yield from gen(doc)


def keep_probability(count: int, threshold: int) -> float:
    if count <= threshold:
        return 1.0
    return math.sqrt(threshold / count)


def downsample_verbs(corpus: Iterable[DocumentRecord], threshold: int, seed: int = 0) -> Iterator[DocumentRecord]:
    """Thin out events of very frequent predicates.

    An event whose predicate occurs ``c > threshold`` times in the corpus is kept
    with probability ``sqrt(threshold / c)``.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    docs = list(corpus)
    counts = Counter(ev.predicate_lemma for doc in docs for ev in doc.events)
    rng = np.random.default_rng(seed)
    for doc in docs:
        kept = []
        for ev in doc.events:
            p = keep_probability(counts[ev.predicate_lemma], threshold)
            if p >= 1.0 or rng.random() < p:
                kept.append(ev)
        yield DocumentRecord(doc.doc_id, tuple(kept), doc.entity_count)


@dataclass(frozen=True)
class DatasetStats:
    n: int
    avg_candidates: Optional[float]
    avg_correct: Optional[float]

    def to_json(self) -> dict:
        return {"n": self.n, "avg_candidates": self.avg_candidates, "avg_correct": self.avg_correct}

    def format(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.2f}"
        return (
            f"# test cases       {self.n}\n"
            f"Avg # candidates   {fmt(self.avg_candidates)}\n"
            f"Avg # correct      {fmt(self.avg_correct)}\n"
        )


def dataset_stats(instances: Iterable[ClozeInstance]) -> DatasetStats:
    instances = list(instances)
    if not instances:
        return DatasetStats(0, None, None)
    n = len(instances)
    return DatasetStats(
        n,
        sum(x.n_candidates for x in instances) / n,
        sum(x.n_answers for x in instances) / n,
    )


# --------------------------------------------------------------------------
# instance file IO


def _token_to_json(t: EventToken) -> dict:
    return {"s": t.surface, "k": t.kind.value, "e": t.entity_id}


def _token_from_json(obj) -> EventToken:
    kind = TokenKind(obj["k"])
    surface = obj["s"]
    role = None
    if kind is TokenKind.ARGUMENT:
        role = surface.rsplit("-", 1)[1]
    elif kind is not TokenKind.PREDICATE:
        role = surface.split("-", 1)[1]
    return EventToken(surface, kind, role, obj.get("e"))


def instance_to_json(inst: ClozeInstance) -> dict:
    return {
        "doc": [_token_to_json(t) for t in inst.doc_tokens],
        "query": [_token_to_json(t) for t in inst.query_tokens],
        "answers": list(inst.answer_positions),
        "candidates": list(inst.candidate_positions),
        "supervision": None if inst.supervision is None else list(inst.supervision),
        "meta": dict(inst.meta, target_role=inst.target_role),
    }


def instance_from_json(obj, line: Optional[int] = None) -> ClozeInstance:
    try:
        doc = tuple(_token_from_json(t) for t in obj["doc"])
        query = tuple(_token_from_json(t) for t in obj["query"])
        meta = dict(obj.get("meta") or {})
        target_role = meta.pop("target_role", None)
        if target_role is None:
            target_role = next(t.role for t in query if t.kind is TokenKind.TARGET)
        sup = obj.get("supervision")
        return ClozeInstance(
            doc_tokens=doc,
            query_tokens=query,
            answer_positions=tuple(int(i) for i in obj["answers"]),
            candidate_positions=tuple(int(i) for i in obj["candidates"]),
            target_role=target_role,
            meta=meta,
            supervision=None if sup is None else tuple(int(i) for i in sup),
        )
    except (KeyError, TypeError, ValueError, IndexError, StopIteration) as exc:
        raise CorpusParseError(f"malformed instance: {exc!r}", line) from None


def write_instances(instances: Iterable[ClozeInstance], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_json(inst), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_instances(path) -> list[ClozeInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"invalid JSON: {exc.msg}", lineno) from None
            out.append(instance_from_json(obj, lineno))
    return out
