from pathlib import Path

import numpy as np
import pytest

import pointer_reader

SAMPLE_CORPUS = Path(pointer_reader.__file__).parent / "data" / "sample_corpus.jsonl"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
