"""Random and most-frequent-entity baselines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .validation import check_instances


class _PointerBaseline(BaseEstimator):
    """Shared fit/score for baselines that need no training."""

    def fit(self, X, y=None):
        check_instances(X)
        self.fitted_ = True
        return self

    def score(self, X, y=None):
        X = check_instances(X)
        if not X:
            return float("nan")
        pred = self.predict(X)
        return float(np.mean([p in x.answer_positions for p, x in zip(pred, X)]))


class RandomBaseline(_PointerBaseline):
    """Uniform choice among candidates; instance ``i`` uses its own stream."""

    def __init__(self, seed=0):
        self.seed = seed

    def predict(self, X):
        X = check_instances(X)
        out = np.empty(len(X), dtype=np.intp)
        for i, x in enumerate(X):
            rng = np.random.default_rng([self.seed, i])
            out[i] = x.candidate_positions[rng.integers(len(x.candidate_positions))]
        return out


def most_frequent_choice(inst) -> int:
    """Latest mention of the entity with most preceding mentions.

    Mentions without an entity form their own group. Ties between groups go to
    the one mentioned most recently.
    """
    groups: dict = {}
    for p in inst.candidate_positions:
        e = inst.doc_tokens[p].entity_id
        key = ("e", e) if e is not None else ("m", p)
        groups.setdefault(key, []).append(p)
    best = max(groups.values(), key=lambda ps: (len(ps), max(ps)))
    return max(best)


class MostFrequentBaseline(_PointerBaseline):
    def predict(self, X):
        X = check_instances(X)
        return np.array([most_frequent_choice(x) for x in X], dtype=np.intp)
