import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pointer_reader import model as M
from pointer_reader import trainer
from pointer_reader.clozegen import generate_instances, generate_multi_arg_instances
from pointer_reader.corpus import read_corpus
from pointer_reader.estimator import PointerAttentiveReader, vocabulary_from_instances
from pointer_reader.model import ParConfig, ParParams
from pointer_reader.trainer import AdagradState, TrainConfig, adagrad_step, train

from .conftest import SAMPLE_CORPUS


@pytest.fixture(scope="module")
def sample_instances():
    docs = list(read_corpus(SAMPLE_CORPUS))
    return [x for d in docs for x in generate_instances(d)]


@pytest.fixture(scope="module")
def multi_instances():
    docs = list(read_corpus(SAMPLE_CORPUS))
    return [x for d in docs for x in generate_multi_arg_instances(d)]


def test_adagrad_first_step():
    theta = {"w": np.array([0.0])}
    state = AdagradState()
    adagrad_step(theta, {"w": np.array([1.0])}, state, 0.01, 1e-8)
    assert theta["w"][0] == pytest.approx(-0.01, rel=1e-7)


def test_adagrad_zero_gradient_is_noop():
    theta = {"w": np.array([0.3, -0.2])}
    state = AdagradState({"w": np.array([4.0, 1.0])})
    adagrad_step(theta, {"w": np.zeros(2)}, state, 0.01, 1e-8)
    assert theta["w"].tolist() == [0.3, -0.2]
    assert state.accumulators["w"].tolist() == [4.0, 1.0]


def test_adagrad_two_steps():
    lr, eps = 0.01, 1e-8
    theta = {"w": np.array([0.0])}
    state = AdagradState()
    adagrad_step(theta, {"w": np.array([3.0])}, state, lr, eps)
    before = theta["w"][0]
    adagrad_step(theta, {"w": np.array([4.0])}, state, lr, eps)
    assert state.accumulators["w"][0] == 25.0
    assert theta["w"][0] - before == pytest.approx(-lr * 4 / (5 + eps), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)))
def test_adagrad_accumulator_monotone(g):
    theta = {"w": np.zeros((3, 4))}
    state = AdagradState()
    prev = np.zeros((3, 4))
    for k in range(3):
        adagrad_step(theta, {"w": g * (k - 1)}, state, 0.1, 1e-8)
        acc = state.accumulators["w"]
        assert np.all(acc >= prev) and np.all(acc >= 0)
        prev = acc.copy()


def _setup(instances, hops=1, dropout=0.0, seed=0, **cfg):
    vocab = vocabulary_from_instances(instances)
    config = ParConfig(embedding_dim=8, hidden_dim=8, num_hops=hops, dropout_rate=dropout, **cfg)
    params = ParParams.initialize(config, len(vocab), vocab.placeholder_indices, np.random.default_rng(seed))
    encoded = [M.encode_instance(x, vocab) for x in instances]
    return config, params, encoded


def test_overfit_single_instance(sample_instances):
    config, params, encoded = _setup(sample_instances[4:5])
    result = train(params, config, encoded, TrainConfig(batch_size=1, epochs=60, learning_rate=0.1))
    losses = [r["loss"] for r in result.log]
    warmup = 5
    assert all(b <= a for a, b in zip(losses[warmup:], losses[warmup + 1:]))
    assert losses[-1] < 0.01


def test_same_seed_same_trajectory(sample_instances):
    logs = []
    for _ in range(2):
        config, params, encoded = _setup(sample_instances, dropout=0.2)
        logs.append(train(params, config, encoded, TrainConfig(epochs=3, batch_size=4, seed=11)).log)
    assert logs[0][0]["loss"] == logs[1][0]["loss"]
    assert logs[0] == logs[1]


def test_workers_do_not_change_results(multi_instances):
    out = []
    for workers in (1, 4):
        config, params, encoded = _setup(multi_instances, hops=2, dropout=0.2)
        res = train(params, config, encoded, TrainConfig(epochs=2, batch_size=3, workers=workers))
        out.append((res.log, {k: v.tobytes() for k, v in params.arrays().items()}))
    assert out[0] == out[1]


def test_large_batch_is_one_step_per_epoch(sample_instances, monkeypatch):
    calls = []
    real = trainer.adagrad_step
    monkeypatch.setattr(trainer, "adagrad_step", lambda *a: (calls.append(1), real(*a)))
    config, params, encoded = _setup(sample_instances)
    train(params, config, encoded, TrainConfig(epochs=3, batch_size=len(encoded) + 10))
    assert len(calls) == 3


def test_kl_weight_zero_reduces_to_pointer_loss(multi_instances):
    config, params, encoded = _setup(multi_instances, hops=2, kl_weight=0.0)
    for enc in encoded:
        loss, _ = M.instance_loss(params, config, enc)
        a, _, _ = M.forward(params, config, enc)
        assert float(loss.value) == float(M.loss_max_correct(a, enc.answers).value)


def test_l2_term_enters_loss(sample_instances):
    config, params, encoded = _setup(sample_instances)
    base = train(params.copy(), config, encoded, TrainConfig(epochs=1, shuffle=False)).log[0]["loss"]
    reg = train(params.copy(), config, encoded, TrainConfig(epochs=1, shuffle=False, l2_weight=0.5)).log[0]["loss"]
    assert reg > base


def test_bad_instances_are_skipped(sample_instances, caplog):
    config, params, encoded = _setup(sample_instances)
    # an answer mask with no true entry violates the loss contract at training time
    broken = M.EncodedInstance(encoded[0].doc_ids, encoded[0].query_ids, encoded[0].candidates,
                               np.zeros_like(encoded[0].answers), None)
    with caplog.at_level(logging.WARNING):
        res = train(params, config, [broken, None] + encoded, TrainConfig(epochs=1))
    assert "skipping instance 0" in caplog.text
    assert np.isfinite(res.log[0]["loss"])


def test_checkpoint_round_trip_and_resume(tmp_path, multi_instances):
    tc = TrainConfig(epochs=3, batch_size=2, seed=3)
    config, params, encoded = _setup(multi_instances, hops=2, dropout=0.2)
    full = train(params, config, encoded, tc).log

    config, params, encoded = _setup(multi_instances, hops=2, dropout=0.2)
    first = train(params, config, encoded, TrainConfig(epochs=2, batch_size=2, seed=3))
    trainer.save_checkpoint(tmp_path / "ck", params, first.state, config, tc, 2, "hash")
    params2, state2, config2, sidecar = trainer.load_checkpoint(tmp_path / "ck")
    assert config2 == config and sidecar["epochs_done"] == 2
    for k, v in params.arrays().items():
        assert params2.arrays()[k].tobytes() == v.tobytes()
    resumed = train(params2, config2, encoded, tc, state=state2, start_epoch=2).log
    assert resumed == full[2:]


def test_estimator_fit_predict(sample_instances):
    est = PointerAttentiveReader(embedding_dim=6, hidden_dim=6, epochs=2, batch_size=4)
    est.fit(sample_instances)
    pred = est.predict(sample_instances)
    assert pred.shape == (len(sample_instances),)
    for p, x in zip(pred, sample_instances):
        assert p in x.candidate_positions
    assert 0.0 <= est.score(sample_instances) <= 1.0
    assert len(est.loss_curve_) == 2
    probs = est.predict_proba(sample_instances[:2])
    assert all(abs(p.sum() - 1) < 1e-12 for p in probs)


def test_estimator_params_round_trip():
    from sklearn.base import clone

    est = PointerAttentiveReader(hidden_dim=7, num_hops=2, kl_weight=0.3)
    assert clone(est).get_params() == est.get_params()
    assert est.set_params(epochs=4).epochs == 4


def test_estimator_requires_fit(sample_instances):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        PointerAttentiveReader().predict(sample_instances)


def test_estimator_rejects_bad_input():
    with pytest.raises(TypeError):
        PointerAttentiveReader().fit([1, 2, 3])
    with pytest.raises(ValueError):
        PointerAttentiveReader().fit([])
