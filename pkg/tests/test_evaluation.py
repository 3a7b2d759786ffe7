import json
import math

import pytest

from pointer_reader.baselines import MostFrequentBaseline, RandomBaseline, most_frequent_choice
from pointer_reader.clozegen import ClozeInstance, generate
from pointer_reader.corpus import EventToken, TokenKind
from pointer_reader.estimator import PointerAttentiveReader
from pointer_reader.evaluation import (
    baseline_most_freq,
    baseline_random,
    evaluate,
    export_traces,
    expected_random_accuracy,
    frequency_breakdown,
    write_breakdown_csv,
)
from pointer_reader.synthetic import planted_frequency_corpus, random_corpus

Z99 = 2.5758293035489004  # two-sided 99% normal quantile


def handmade(entities, answers, doc_id="h"):
    """Instance whose document has one argument token per entry of ``entities``."""
    doc = []
    for e in entities:
        doc.append(EventToken("p", TokenKind.PREDICATE))
        doc.append(EventToken(f"x{e}-subj", TokenKind.ARGUMENT, "subj", e))
    cands = tuple(range(1, 2 * len(entities), 2))
    query = (EventToken("q", TokenKind.PREDICATE), EventToken("TARGET-subj", TokenKind.TARGET, "subj"))
    return ClozeInstance(tuple(doc), query, tuple(cands[i] for i in answers), cands, "subj", {"doc_id": doc_id})


@pytest.fixture(scope="module")
def synthetic_set():
    return list(generate(random_corpus(400, seed=21)))


def test_all_single_candidates_are_correct():
    insts = [handmade([0], [0]) for _ in range(5)]
    assert evaluate(RandomBaseline(), insts).accuracy == 1.0
    assert evaluate(MostFrequentBaseline(), insts).accuracy == 1.0


def test_empty_report():
    r = evaluate(RandomBaseline(), [])
    assert r.n == 0 and r.accuracy is None


def test_evaluate_is_order_invariant(synthetic_set):
    est = PointerAttentiveReader(embedding_dim=4, hidden_dim=4, epochs=0).initialize(synthetic_set)
    a = evaluate(est, synthetic_set[:200])
    b = evaluate(est, synthetic_set[:200][::-1])
    assert a.accuracy == b.accuracy and a.by_frequency == b.by_frequency


def test_untrained_model_near_random(synthetic_set):
    est = PointerAttentiveReader(embedding_dim=8, hidden_dim=8, seed=3).initialize(synthetic_set)
    report = evaluate(est, synthetic_set)
    n = report.n
    assert n >= 1000
    p = expected_random_accuracy(synthetic_set)
    half = Z99 * math.sqrt(p * (1 - p) / n)
    assert abs(report.accuracy - p) <= half, (report.accuracy, p, half)


def test_random_expectation_per_instance():
    assert expected_random_accuracy([handmade([0, 1, 2, 3], [2])]) == 0.25


def test_random_monte_carlo():
    inst = handmade(list(range(10)), [0, 4, 7])
    hits = sum(p in inst.answer_positions for p in
               (RandomBaseline(seed=s).predict([inst])[0] for s in range(10_000)))
    assert abs(hits / 10_000 - 0.30) <= 0.015


def test_random_baseline_report(synthetic_set):
    r = baseline_random(synthetic_set, seed=4)
    assert r.expected_accuracy == pytest.approx(expected_random_accuracy(synthetic_set))
    assert baseline_random(synthetic_set, seed=4).accuracy == r.accuracy


def test_most_freq_picks_largest_chain():
    inst = handmade([5, 5, 9, 5], [0, 1, 3])
    assert most_frequent_choice(inst) == inst.candidate_positions[3]
    assert evaluate(MostFrequentBaseline(), [inst]).accuracy == 1.0


def test_most_freq_tie_goes_to_latest_mention():
    # chains: 1 -> slots {0, 3}, 2 -> slots {1, 4}, 3 -> slot {2}
    # tie between 1 and 2 (two mentions each); chain 2 is mentioned last (slot 4)
    inst = handmade([1, 2, 3, 1, 2], [0, 3])
    assert most_frequent_choice(inst) == inst.candidate_positions[4]
    assert evaluate(MostFrequentBaseline(), [inst]).accuracy == 0.0


def test_most_freq_entityless_mentions_are_singletons():
    inst = handmade([None, None, 4], [2])
    # three singleton groups; latest one wins
    assert most_frequent_choice(inst) == inst.candidate_positions[2]


def test_most_freq_deterministic(synthetic_set):
    assert (MostFrequentBaseline().predict(synthetic_set) == MostFrequentBaseline().predict(synthetic_set)).all()


def test_breakdown_single_bucket():
    insts = [handmade([0, 1], [0]) for _ in range(4)]
    br = frequency_breakdown(insts, [True, False, True, True])
    assert br == {"1": {"n": 4, "accuracy": 0.75}}


def test_breakdown_counts_sum_to_n(synthetic_set):
    r = baseline_most_freq(synthetic_set)
    assert sum(b["n"] for b in r.by_frequency.values()) == r.n


def test_breakdown_cap():
    insts = [handmade([0] * 12, list(range(12))), handmade([0, 1], [0])]
    br = frequency_breakdown(insts, [True, False], cap=10)
    assert list(br) == ["1", "10+"]


def test_most_freq_improves_with_entity_frequency():
    insts = list(generate(planted_frequency_corpus(300, seed=5)))
    br = baseline_most_freq(insts, cap=6).by_frequency
    accs = [br[k]["accuracy"] for k in br if br[k]["n"] >= 30]
    assert len(accs) >= 4
    assert all(b >= a for a, b in zip(accs, accs[1:])), br


def test_breakdown_csv(tmp_path):
    write_breakdown_csv({"1": {"n": 3, "accuracy": 0.5}, "2": {"n": 1, "accuracy": 1.0}}, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text() == "bucket,n,accuracy\n1,3,0.5\n2,1,1.0\n"


@pytest.mark.parametrize("hops", [1, 2])
def test_export_traces(tmp_path, synthetic_set, hops):
    insts = synthetic_set[:20]
    est = PointerAttentiveReader(embedding_dim=4, hidden_dim=4, num_hops=hops).initialize(insts)
    n = export_traces(est, insts, tmp_path / "t.jsonl")
    rows = [json.loads(l) for l in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert n == len(rows) == 20
    traces = est.attention_traces(insts)
    for row, inst, trace in zip(rows, insts, traces):
        assert len(row["attention"]) == hops
        for h, vec in enumerate(row["attention"]):
            assert abs(sum(vec[c] for c in inst.candidate_positions) - 1) < 1e-12
            assert vec == trace.attention(h).tolist()
        assert row["pointer"] == trace.pointer
        assert row["doc"] == [t.surface for t in inst.doc_tokens]


def test_export_traces_io_error_names_path(tmp_path, synthetic_set):
    est = PointerAttentiveReader(embedding_dim=4, hidden_dim=4).initialize(synthetic_set[:2])
    with pytest.raises(OSError, match="missing"):
        export_traces(est, synthetic_set[:2], tmp_path / "missing" / "t.jsonl")
