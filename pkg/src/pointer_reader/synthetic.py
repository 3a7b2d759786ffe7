"""Synthetic corpora with known structure, for tests and smoke runs."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .corpus import ArgumentMention, DocumentRecord, EventRecord

NOUNS = (
    "company", "mill", "plant", "worker", "bank", "city", "team", "player", "court", "judge",
    "market", "price", "school", "student", "army", "river", "ship", "crew", "film", "actor",
)
VERBS = (
    "build", "buy", "sell", "grow", "close", "open", "hire", "fire", "win", "lose",
    "visit", "leave", "attack", "defend", "watch", "join", "own", "move", "find", "help",
)
PREPS = ("prep_to", "prep_for", "prep_in", "prep_with")


class _DocBuilder:
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        self.events: list = []
        self.entities = 0
        self.mentions = 0

    def entity(self) -> int:
        self.entities += 1
        return self.entities - 1

    def event(self, pred: str, args, negated: bool = False) -> None:
        mentions = []
        for role, lemma, entity in args:
            mentions.append(ArgumentMention(role, lemma, entity, self.mentions))
            self.mentions += 1
        self.events.append(EventRecord(pred, negated, None, tuple(mentions)))

    def build(self) -> DocumentRecord:
        return DocumentRecord(self.doc_id, tuple(self.events), self.entities)


def random_document(rng: np.random.Generator, doc_id: str, n_events=(3, 8), p_new=0.35,
                    p_none=0.1, nouns=NOUNS, verbs=VERBS) -> DocumentRecord:
    """Events with random predicates whose arguments reuse entities at random."""
    b = _DocBuilder(doc_id)
    lemmas: list = []
    for _ in range(int(rng.integers(n_events[0], n_events[1] + 1))):
        roles = ["subj"]
        if rng.random() < 0.7:
            roles.append("dobj")
        if rng.random() < 0.3:
            roles.append(str(rng.choice(PREPS)))
        args = []
        for role in roles:
            u = rng.random()
            if u < p_none:
                args.append((role, str(rng.choice(nouns)), None))
            elif u < p_none + p_new or not lemmas:
                e = b.entity()
                lemmas.append(str(rng.choice(nouns)))
                args.append((role, lemmas[e], e))
            else:
                e = int(rng.integers(len(lemmas)))
                args.append((role, lemmas[e], e))
        b.event(str(rng.choice(verbs)), args, negated=bool(rng.random() < 0.05))
    return b.build()


def random_corpus(n_docs: int, seed: int = 0, **kwargs) -> list[DocumentRecord]:
    rng = np.random.default_rng(seed)
    return [random_document(rng, f"rand-{i}", **kwargs) for i in range(n_docs)]


def planted_pair_document(rng: np.random.Generator, doc_id: str, n_pairs: int = 3, n_fillers: int = 4,
                          nouns=NOUNS[:6]) -> DocumentRecord:
    """Document whose final event has two implicit arguments that depend on each other.

    Each pair ``i`` is introduced by ``own(subj=a_i, dobj=b_i)`` and one ``a_j``
    is singled out by ``pick(subj=a_j)``; these and some ``wait`` filler events
    appear in random order. The document ends with ``give(subj=a_j, dobj=b_j)``.
    The removed object ``b_j`` can only be told apart from the other ``b_i``
    through the identity of the co-missing subject. Lemmas are drawn per
    document, so the link has to be read from context.
    """
    b = _DocBuilder(doc_id)
    lemmas = list(rng.choice(nouns, size=2 * n_pairs, replace=False))
    pairs = [(b.entity(), b.entity()) for _ in range(n_pairs)]
    j = int(rng.integers(n_pairs))
    events = [("own", [("subj", lemmas[2 * i], a), ("dobj", lemmas[2 * i + 1], o)])
              for i, (a, o) in enumerate(pairs)]
    events.append(("pick", [("subj", lemmas[2 * j], pairs[j][0])]))
    for _ in range(n_fillers):
        events.append(("wait", [("subj", str(rng.choice(NOUNS[len(nouns):])), None)]))
    for k in rng.permutation(len(events)):
        b.event(*events[k])
    a, o = pairs[j]
    b.event("give", [("subj", lemmas[2 * j], a), ("dobj", lemmas[2 * j + 1], o)])
    return b.build()


def planted_pair_corpus(n_docs: int, seed: int = 0, **kwargs) -> list[DocumentRecord]:
    rng = np.random.default_rng(seed)
    return [planted_pair_document(rng, f"pair-{i}", **kwargs) for i in range(n_docs)]


def planted_frequency_document(rng: np.random.Generator, doc_id: str, n_entities: int = 6,
                               n_events: int = 12, hot_weight: float = 6.0) -> DocumentRecord:
    """One dominant entity plus several rare ones; mentions follow fixed weights."""
    b = _DocBuilder(doc_id)
    ents = [b.entity() for _ in range(n_entities)]
    lemmas = list(rng.choice(NOUNS, size=n_entities, replace=False))
    w = np.ones(n_entities)
    w[0] = hot_weight
    w /= w.sum()
    for _ in range(n_events):
        e1, e2 = rng.choice(n_entities, size=2, replace=False, p=w)
        b.event(str(rng.choice(VERBS)), [("subj", lemmas[e1], ents[e1]), ("dobj", lemmas[e2], ents[e2])])
    return b.build()


def planted_frequency_corpus(n_docs: int, seed: int = 0, **kwargs) -> list[DocumentRecord]:
    rng = np.random.default_rng(seed)
    return [planted_frequency_document(rng, f"freq-{i}", **kwargs) for i in range(n_docs)]


def toy_instance(rng: np.random.Generator, max_doc_len: int = 12, vocab: int = 30,
                 multi_arg: bool = False) -> Optional[object]:
    """Random tiny instance for gradient checks (document of at most ``max_doc_len`` tokens).

    With ``multi_arg`` the instance comes from the multi-argument variant and
    carries supervision positions.
    """
    from .clozegen import generate_instances, generate_multi_arg_instances

    make = generate_multi_arg_instances if multi_arg else generate_instances
    nouns = NOUNS[: max(2, vocab // 4)]
    verbs = VERBS[: max(2, vocab // 6)]
    while True:
        doc = random_document(rng, "toy", n_events=(2, 4), p_new=0.3, nouns=nouns, verbs=verbs)
        insts = [x for x in make(doc) if len(x.doc_tokens) <= max_doc_len and x.supervision != ()]
        if insts:
            return insts[int(rng.integers(len(insts)))]
