"""Event-sequence data model, corpus file IO and vocabulary.

A corpus file holds one document per line::

    {"doc_id": str, "entity_count": int,
     "events": [{"pred": str, "neg": bool, "particle": str | null,
                 "args": [{"role": str, "lemma": str,
                           "entity_id": int | null, "mention_id": int}]}]}
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .exceptions import CorpusParseError, MalformedInputError, ValidationError

ROLE_PATTERN = re.compile(r"^(subj|dobj|prep_[a-z][a-z0-9_]*)$")
UNKNOWN = "<UNK>"

# dependency labels accepted by normalize_event, mapped to (active, passive) slots
_ACTIVE_LABELS = {"subj": "subj", "nsubj": "subj", "dobj": "dobj", "obj": "dobj"}
_PASSIVE_SUBJECT_LABELS = {"nsubjpass", "subjpass", "subj", "nsubj"}
_AGENT_LABELS = {"agent", "prep_by"}


def is_valid_role(role: str) -> bool:
    return isinstance(role, str) and bool(ROLE_PATTERN.match(role))


def role_rank(role: str) -> int:
    return {"subj": 0, "dobj": 1}.get(role, 2)


class TokenKind(str, Enum):
    PREDICATE = "predicate"
    ARGUMENT = "argument"
    TARGET = "placeholder_target"
    MISSING = "placeholder_missing"


@dataclass(frozen=True)
class ArgumentMention:
    role: str
    lemma: str
    entity_id: Optional[int]
    mention_id: int

    def __post_init__(self):
        if not is_valid_role(self.role):
            raise MalformedInputError(f"invalid role {self.role!r}")
        if not self.lemma:
            raise MalformedInputError("argument lemma must be non-empty")


@dataclass(frozen=True)
class EventRecord:
    predicate_lemma: str
    negated: bool = False
    particle: Optional[str] = None
    args: tuple = ()

    def __post_init__(self):
        if not self.predicate_lemma:
            raise MalformedInputError("predicate lemma must be non-empty")
        roles = [a.role for a in self.args]
        if len(set(roles)) != len(roles):
            raise MalformedInputError(f"duplicate role in event {self.predicate_lemma!r}: {roles}")
        object.__setattr__(self, "args", canonical_order(self.args))


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    events: tuple
    entity_count: int

    def mentions(self) -> Iterator[ArgumentMention]:
        for event in self.events:
            yield from event.args


@dataclass(frozen=True)
class EventToken:
    surface: str
    kind: TokenKind
    role: Optional[str] = None
    entity_id: Optional[int] = None
    mention_id: Optional[int] = None

    @property
    def is_candidate(self) -> bool:
        return self.kind is TokenKind.ARGUMENT


def canonical_order(args: Iterable[ArgumentMention]) -> tuple:
    """subj, dobj, then prepositional slots in their original order."""
    return tuple(sorted(args, key=lambda a: role_rank(a.role)))


# --------------------------------------------------------------------------
# normalization


@dataclass
class RawEvent:
    """An annotation tuple as produced by an upstream parser.

    ``args`` holds ``(dependency_label, lemma, entity_id, mention_id)``.
    """

    pred: Optional[str]
    args: Sequence[tuple] = ()
    passive: bool = False
    negated: bool = False
    particle: Optional[str] = None


def normalize_event(raw: RawEvent, doc_id: str = "?", index: int = 0) -> EventRecord:
    """Lowercase, fold negation/particles and undo passive voice."""
    where = f"document {doc_id!r}, event {index}"
    if not raw.pred or not str(raw.pred).strip():
        raise MalformedInputError(f"{where}: missing predicate lemma")
    pred = str(raw.pred).strip().lower()
    particle = raw.particle.strip().lower() if raw.particle else None
    if particle:
        pred = f"{pred}_{particle}"

    args = []
    for label, lemma, entity_id, mention_id in raw.args:
        label = str(label).lower()
        if raw.passive and label in _PASSIVE_SUBJECT_LABELS:
            role = "dobj"
        elif raw.passive and label in _AGENT_LABELS:
            role = "subj"
        else:
            role = _ACTIVE_LABELS.get(label, label)
        if not is_valid_role(role):
            raise MalformedInputError(f"{where}: unsupported argument label {label!r}")
        if not lemma:
            raise MalformedInputError(f"{where}: empty argument lemma for {label!r}")
        args.append(ArgumentMention(role, str(lemma).lower(), entity_id, mention_id))
    try:
        return EventRecord(pred, bool(raw.negated), particle, tuple(args))
    except MalformedInputError as exc:
        raise MalformedInputError(f"{where}: {exc}") from None


def predicate_surface(event: EventRecord) -> str:
    return f"not-{event.predicate_lemma}" if event.negated else event.predicate_lemma


def event_to_tokens(event: EventRecord) -> list[EventToken]:
    tokens = [EventToken(predicate_surface(event), TokenKind.PREDICATE)]
    for arg in event.args:
        tokens.append(
            EventToken(f"{arg.lemma}-{arg.role}", TokenKind.ARGUMENT, arg.role, arg.entity_id, arg.mention_id)
        )
    return tokens


def placeholder_token(role: str, kind: TokenKind) -> EventToken:
    prefix = "TARGET" if kind is TokenKind.TARGET else "MISSING"
    return EventToken(f"{prefix}-{role}", kind, role)


# --------------------------------------------------------------------------
# corpus IO


def _require(cond, message, line):
    if not cond:
        raise CorpusParseError(message, line)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def document_from_json(obj: Mapping, line: Optional[int] = None) -> DocumentRecord:
    _require(isinstance(obj, dict), "document must be a JSON object", line)
    _require(isinstance(obj.get("doc_id"), str), "doc_id must be a string", line)
    _require(_is_int(obj.get("entity_count")) and obj["entity_count"] >= 0,
             "entity_count must be a non-negative integer", line)
    _require(isinstance(obj.get("events"), list), "events must be a list", line)
    doc_id, entity_count = obj["doc_id"], obj["entity_count"]

    events, seen_mentions = [], set()
    for i, ev in enumerate(obj["events"]):
        _require(isinstance(ev, dict), f"event {i} must be an object", line)
        _require(isinstance(ev.get("pred"), str) and ev["pred"], f"event {i}: pred must be a non-empty string", line)
        _require(isinstance(ev.get("neg", False), bool), f"event {i}: neg must be a boolean", line)
        particle = ev.get("particle")
        _require(particle is None or isinstance(particle, str), f"event {i}: particle must be string or null", line)
        _require(isinstance(ev.get("args", []), list), f"event {i}: args must be a list", line)
        args = []
        for j, a in enumerate(ev.get("args", [])):
            _require(isinstance(a, dict), f"event {i} arg {j} must be an object", line)
            _require(is_valid_role(a.get("role")), f"event {i} arg {j}: invalid role {a.get('role')!r}", line)
            _require(isinstance(a.get("lemma"), str) and a["lemma"], f"event {i} arg {j}: lemma must be non-empty", line)
            eid = a.get("entity_id")
            _require(eid is None or (_is_int(eid) and eid >= 0), f"event {i} arg {j}: bad entity_id", line)
            _require(_is_int(a.get("mention_id")), f"event {i} arg {j}: mention_id must be an integer", line)
            if eid is not None and eid >= entity_count:
                raise ValidationError(f"event {i} arg {j}: entity_id {eid} >= entity_count {entity_count}", line)
            if a["mention_id"] in seen_mentions:
                raise ValidationError(f"duplicate mention_id {a['mention_id']}", line)
            seen_mentions.add(a["mention_id"])
            args.append(ArgumentMention(a["role"], a["lemma"], eid, a["mention_id"]))
        try:
            events.append(EventRecord(ev["pred"], ev.get("neg", False), particle, tuple(args)))
        except MalformedInputError as exc:
            raise ValidationError(f"event {i}: {exc}", line) from None
    return DocumentRecord(doc_id, tuple(events), entity_count)


def document_to_json(doc: DocumentRecord) -> dict:
    return {
        "doc_id": doc.doc_id,
        "entity_count": doc.entity_count,
        "events": [
            {
                "pred": ev.predicate_lemma,
                "neg": ev.negated,
                "particle": ev.particle,
                "args": [
                    {"role": a.role, "lemma": a.lemma, "entity_id": a.entity_id, "mention_id": a.mention_id}
                    for a in ev.args
                ],
            }
            for ev in doc.events
        ],
    }


def read_corpus(path) -> Iterator[DocumentRecord]:
    """Yield documents from a JSON-lines corpus, in file order."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"invalid JSON: {exc.msg}", lineno) from None
            yield document_from_json(obj, lineno)


def write_corpus(docs: Iterable[DocumentRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_json(doc), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    """Dense surface -> index map. Index 0 is always UNKNOWN."""

    surfaces: list = field(default_factory=lambda: [UNKNOWN])

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.surfaces)}

    def __len__(self):
        return len(self.surfaces)

    def __contains__(self, surface):
        return surface in self._index

    def __getitem__(self, surface: str) -> int:
        return self._index.get(surface, 0)

    def lookup(self, surfaces: Iterable[str]) -> list[int]:
        return [self._index.get(s, 0) for s in surfaces]

    @property
    def placeholder_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.surfaces) if s.startswith(("TARGET-", "MISSING-"))]

    def to_json(self) -> dict:
        return {"surfaces": list(self.surfaces)}

    @classmethod
    def from_json(cls, obj) -> "Vocabulary":
        surfaces = obj["surfaces"]
        if not surfaces or surfaces[0] != UNKNOWN:
            raise ValidationError("vocabulary must start with the UNKNOWN entry")
        return cls(list(surfaces))

    def digest(self) -> str:
        payload = json.dumps(self.surfaces, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def vocabulary_from_counts(counts: Counter, roles: Iterable[str], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    roles = sorted(set(roles), key=lambda r: (role_rank(r), r))
    placeholders = [f"{p}-{r}" for p in ("TARGET", "MISSING") for r in roles]
    reserved = set(placeholders) | {UNKNOWN}
    kept = sorted(
        (s for s, c in counts.items() if c >= min_count and s not in reserved),
        key=lambda s: (-counts[s], s),
    )
    return Vocabulary([UNKNOWN] + placeholders + kept)


def build_vocabulary(corpus: Iterable[DocumentRecord], min_count: int = 1) -> Vocabulary:
    """Vocabulary over event-token surfaces, most frequent first."""
    counts: Counter = Counter()
    roles = set()
    for doc in corpus:
        for event in doc.events:
            for token in event_to_tokens(event):
                counts[token.surface] += 1
                if token.role:
                    roles.add(token.role)
    return vocabulary_from_counts(counts, roles, min_count)
