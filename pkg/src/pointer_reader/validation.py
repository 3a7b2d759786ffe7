"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from typing import Iterable

from .clozegen import ClozeInstance, instance_from_json
from .corpus import TokenKind
from .exceptions import ContractViolation


def check_instances(X, allow_empty: bool = True) -> list[ClozeInstance]:
    """Coerce ``X`` to a list of ClozeInstance.

    Accepts instances or instance-file JSON records (dicts).
    """
    if isinstance(X, (ClozeInstance, dict)):
        raise TypeError("expected a sequence of instances, got a single instance")
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of instances, got {type(X).__name__}") from None
    out = []
    for i, x in enumerate(items):
        if isinstance(x, dict):
            x = instance_from_json(x)
        elif not isinstance(x, ClozeInstance):
            raise TypeError(f"item {i} is {type(x).__name__}, not a ClozeInstance")
        out.append(x)
    if not allow_empty and not out:
        raise ValueError("at least one instance is required")
    return out


def check_instance(inst: ClozeInstance) -> None:
    """Raise ContractViolation if the instance breaks a structural invariant."""
    cands = set(inst.candidate_positions)
    expected = {i for i, t in enumerate(inst.doc_tokens) if t.kind is TokenKind.ARGUMENT}
    if cands != expected:
        raise ContractViolation("candidate positions must be exactly the argument tokens")
    if not inst.answer_positions:
        raise ContractViolation("instance has no answers")
    if not set(inst.answer_positions) <= cands:
        raise ContractViolation("answers must be candidates")
    entity = inst.meta.get("entity_id")
    if entity is not None and any(inst.doc_tokens[p].entity_id != entity for p in inst.answer_positions):
        raise ContractViolation("answer token entity differs from the removed entity")
    if sum(t.kind is TokenKind.TARGET for t in inst.query_tokens) != 1:
        raise ContractViolation("query must hold exactly one target placeholder")


def answer_sets(instances: Iterable[ClozeInstance]) -> list[frozenset]:
    return [frozenset(x.answer_positions) for x in instances]
