"""scikit-learn style estimator wrapping the pointer reader."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Vocabulary, vocabulary_from_counts
from .exceptions import ContractViolation
from .model import ParConfig, ParParams, encode_instance, predict
from .trainer import AdagradState, TrainConfig, train
from .validation import check_instances

logger = logging.getLogger(__name__)


def vocabulary_from_instances(instances, min_count=1) -> Vocabulary:
    """Vocabulary over document and query surfaces of a set of instances."""
    counts, roles = Counter(), set()
    for x in instances:
        for t in x.doc_tokens + x.query_tokens:
            if t.role:
                roles.add(t.role)
            if t.is_candidate or t.role is None:
                counts[t.surface] += 1
    return vocabulary_from_counts(counts, roles, min_count)


class PointerAttentiveReader(BaseEstimator):
    """Selects the filler of a removed argument by pointing into the document.

    ``X`` is a sequence of :class:`~pointer_reader.clozegen.ClozeInstance`
    (answers travel inside the instances, so ``y`` is ignored). ``predict``
    returns the chosen document position for every instance.

    Parameters
    ----------
    embedding_dim, hidden_dim, attention_dim : int
        Layer sizes; ``hidden_dim`` is per GRU direction and ``attention_dim``
        defaults to ``2 * hidden_dim``.
    num_hops : {1, 2}
        Two hops update the query with an attention-weighted document summary
        before the pointer attention.
    kl_weight : float
        Weight of the first-hop supervision term (2-hop only, and only for
        instances that carry supervision positions).
    vocabulary : Vocabulary or None
        Fixed vocabulary; built from the training instances when None.
    """

    def __init__(
        self,
        embedding_dim=32,
        hidden_dim=32,
        attention_dim=None,
        num_hops=1,
        dropout_rate=0.2,
        kl_weight=1.0,
        kl_direction="target_pred",
        batch_size=16,
        epochs=10,
        learning_rate=0.01,
        adagrad_epsilon=1e-8,
        l2_weight=0.0,
        shuffle=True,
        seed=0,
        workers=1,
        min_count=1,
        vocabulary=None,
    ):
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.attention_dim = attention_dim
        self.num_hops = num_hops
        self.dropout_rate = dropout_rate
        self.kl_weight = kl_weight
        self.kl_direction = kl_direction
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.adagrad_epsilon = adagrad_epsilon
        self.l2_weight = l2_weight
        self.shuffle = shuffle
        self.seed = seed
        self.workers = workers
        self.min_count = min_count
        self.vocabulary = vocabulary

    def _configs(self):
        model_config = ParConfig(
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            attention_dim=self.attention_dim,
            num_hops=self.num_hops,
            dropout_rate=self.dropout_rate,
            kl_weight=self.kl_weight,
            kl_direction=self.kl_direction,
        )
        train_config = TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            adagrad_epsilon=self.adagrad_epsilon,
            seed=self.seed,
            l2_weight=self.l2_weight,
            shuffle=self.shuffle,
            workers=self.workers,
        )
        return model_config, train_config

    def _encode(self, X, skip=True):
        out = []
        for i, x in enumerate(X):
            try:
                out.append(encode_instance(x, self.vocabulary_))
            except ContractViolation as exc:
                if not skip:
                    raise
                logger.warning("skipping instance %d: %s", i, exc)
                out.append(None)
        return out

    def initialize(self, X=()):
        """Set up vocabulary and fresh parameters without training."""
        X = check_instances(X)
        self.config_, self.train_config_ = self._configs()
        vocab = self.vocabulary
        if vocab is None:
            vocab = vocabulary_from_instances(X, self.min_count)
        self.vocabulary_ = vocab
        rng = np.random.default_rng(self.seed)
        self.params_ = ParParams.initialize(self.config_, len(vocab), vocab.placeholder_indices, rng)
        self.adagrad_state_ = AdagradState.zeros_like(self.params_.arrays())
        self.loss_curve_ = []
        self.n_epochs_ = 0
        return self

    def fit(self, X, y=None, on_epoch_end=None):
        X = check_instances(X, allow_empty=False)
        self.initialize(X)
        encoded = self._encode(X)
        self.n_skipped_ = sum(e is None for e in encoded)
        result = train(self.params_, self.config_, encoded, self.train_config_,
                       state=self.adagrad_state_, on_epoch_end=on_epoch_end)
        self.loss_curve_ = [r["loss"] for r in result.log]
        self.train_log_ = result.log
        self.n_epochs_ = result.epochs_done
        return self

    def attention_traces(self, X):
        check_is_fitted(self, "params_")
        X = check_instances(X)
        encoded = self._encode(X, skip=False)

        def run(e):
            return predict(self.params_, self.config_, e)[1]

        if self.workers > 1 and len(encoded) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(run, encoded))
        return [run(e) for e in encoded]

    def predict(self, X):
        return np.array([t.pointer for t in self.attention_traces(X)], dtype=np.intp)

    def predict_proba(self, X):
        """Final-hop attention over document positions, one array per instance."""
        return [t.attention() for t in self.attention_traces(X)]

    def score(self, X, y=None):
        X = check_instances(X)
        if not X:
            return float("nan")
        pred = self.predict(X)
        return float(np.mean([p in x.answer_positions for p, x in zip(pred, X)]))

    @classmethod
    def from_parts(cls, params, config: ParConfig, vocabulary: Vocabulary, **kwargs):
        """Estimator around already trained parameters (e.g. a loaded checkpoint)."""
        est = cls(
            embedding_dim=config.embedding_dim,
            hidden_dim=config.hidden_dim,
            attention_dim=config.attention_dim,
            num_hops=config.num_hops,
            dropout_rate=config.dropout_rate,
            kl_weight=config.kl_weight,
            kl_direction=config.kl_direction,
            vocabulary=vocabulary,
            **kwargs,
        )
        est.config_, est.train_config_ = est._configs()
        est.vocabulary_ = vocabulary
        est.params_ = params
        return est
