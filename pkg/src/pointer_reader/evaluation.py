"""Accuracy reports, baselines, entity-frequency breakdown and trace export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import MostFrequentBaseline, RandomBaseline
from .clozegen import ClozeInstance
from .validation import check_instances

DEFAULT_BUCKET_CAP = 10


@dataclass
class EvalReport:
    accuracy: Optional[float]
    n: int
    correct: int
    by_frequency: dict = field(default_factory=dict)
    expected_accuracy: Optional[float] = None
    per_instance: Optional[list] = None

    def to_json(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "n": self.n,
            "correct": self.correct,
            "by_frequency": self.by_frequency,
        }
        if self.expected_accuracy is not None:
            out["expected_accuracy"] = self.expected_accuracy
        if self.per_instance is not None:
            out["per_instance"] = self.per_instance
        return out


def bucket_label(n_answers: int, cap: int = DEFAULT_BUCKET_CAP) -> str:
    return f"{cap}+" if n_answers >= cap else str(n_answers)


def frequency_breakdown(instances: Sequence[ClozeInstance], correct: Sequence[bool],
                        cap: int = DEFAULT_BUCKET_CAP) -> dict:
    """Accuracy grouped by the number of preceding mentions of the answer entity."""
    buckets: dict = {}
    for x, ok in zip(instances, correct):
        n = min(len(x.answer_positions), cap)
        hits = buckets.setdefault(n, [0, 0])
        hits[0] += 1
        hits[1] += bool(ok)
    return {
        bucket_label(k, cap): {"n": n, "accuracy": c / n}
        for k, (n, c) in sorted(buckets.items())
    }


def write_breakdown_csv(breakdown: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bucket", "n", "accuracy"])
        for label, row in breakdown.items():
            writer.writerow([label, row["n"], repr(row["accuracy"])])


def report_from_predictions(instances, pointers, per_instance=False, cap=DEFAULT_BUCKET_CAP) -> EvalReport:
    correct = [int(p) in x.answer_positions for p, x in zip(pointers, instances)]
    n = len(instances)
    report = EvalReport(
        accuracy=sum(correct) / n if n else None,
        n=n,
        correct=int(sum(correct)),
        by_frequency=frequency_breakdown(instances, correct, cap),
    )
    if per_instance:
        report.per_instance = [{"pointer": int(p), "correct": bool(c)} for p, c in zip(pointers, correct)]
    return report


def evaluate(model, instances, per_instance=False, cap=DEFAULT_BUCKET_CAP) -> EvalReport:
    """Accuracy of ``model.predict`` against the answer positions."""
    instances = check_instances(instances)
    pointers = model.predict(instances) if instances else []
    return report_from_predictions(instances, pointers, per_instance, cap)


def expected_random_accuracy(instances) -> Optional[float]:
    if not instances:
        return None
    return float(np.mean([len(x.answer_positions) / len(x.candidate_positions) for x in instances]))


def baseline_random(instances, seed: int = 0, **kwargs) -> EvalReport:
    instances = check_instances(instances)
    report = evaluate(RandomBaseline(seed).fit(instances), instances, **kwargs)
    report.expected_accuracy = expected_random_accuracy(instances)
    return report


def baseline_most_freq(instances, **kwargs) -> EvalReport:
    instances = check_instances(instances)
    return evaluate(MostFrequentBaseline().fit(instances), instances, **kwargs)


def trace_record(inst: ClozeInstance, trace) -> dict:
    return {
        "doc": [t.surface for t in inst.doc_tokens],
        "query": [t.surface for t in inst.query_tokens],
        "candidates": [int(c) for c in trace.candidates],
        "answers": list(inst.answer_positions),
        "attention": [trace.attention(h).tolist() for h in range(len(trace.hops))],
        "pointer": trace.pointer,
        "meta": inst.meta,
    }


def export_traces(model, instances, path) -> int:
    """Write one JSON line of per-hop attention per instance."""
    instances = check_instances(instances)
    traces = model.attention_traces(instances)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for inst, trace in zip(instances, traces):
                fh.write(json.dumps(trace_record(inst, trace), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write traces to {Path(path)}: {exc.strerror or exc}") from exc
    return len(traces)
