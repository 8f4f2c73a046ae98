import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmsearch.engine import EngineConfig, SearchEngine
from mmsearch.synth import synthetic_dataset

from oracle import BruteForce


@pytest.fixture(scope="session")
def small_dataset():
    """800 objects with shared blob structure; session-wide, do not mutate."""
    return synthetic_dataset(800, seed=13, blobs=5)


@pytest.fixture(scope="session")
def small_engine(small_dataset):
    engine = SearchEngine(small_dataset, EngineConfig(leaf_capacity=64, seed=13))
    engine.build_all()
    return engine


@pytest.fixture(scope="session")
def small_oracle(small_dataset):
    return BruteForce(small_dataset)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(1234))
