"""Pointer Attentive Reader for implicit argument prediction."""

from .baselines import MostFrequentBaseline, RandomBaseline
from .clozegen import ClozeInstance, generate_instances, generate_multi_arg_instances
from .corpus import DocumentRecord, EventRecord, Vocabulary, build_vocabulary, read_corpus
from .estimator import PointerAttentiveReader
from .evaluation import EvalReport, baseline_most_freq, baseline_random, evaluate
from .model import ParConfig
from .trainer import TrainConfig

__all__ = [
    "ClozeInstance",
    "DocumentRecord",
    "EvalReport",
    "EventRecord",
    "MostFrequentBaseline",
    "ParConfig",
    "PointerAttentiveReader",
    "RandomBaseline",
    "TrainConfig",
    "Vocabulary",
    "baseline_most_freq",
    "baseline_random",
    "build_vocabulary",
    "evaluate",
    "generate_instances",
    "generate_multi_arg_instances",
    "read_corpus",
]

__version__ = "0.1.0"
