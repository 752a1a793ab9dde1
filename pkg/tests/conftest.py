from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from fwlsynth.bench import load_benchmark

ROOT = Path(__file__).resolve().parents[1]
BENCH = ROOT / "benchmarks"

# gains of the third-order worked example: the first candidate and the final one
K_FIRST = (0.24609375, -0.125, 0.1484375)
K_FINAL = (0.23828125, -0.17578125, 0.109375)

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def illustrative():
    return load_benchmark(BENCH / "illustrative3.json")


@pytest.fixture(scope="session")
def illustrative_plant(illustrative):
    return illustrative.plant(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
