import numpy as np
import pytest

from hkidqg.core import make_rng
from hkidqg.synthetic import make_corpus


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def corpus():
    """The 64-record synthetic corpus used by the demo (seed 7)."""
    return make_corpus(64, seed=7)


def naive_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in range(len(a))]
    for i in range(len(a)):
        for j in range(len(b[0])):
            out[i][j] = sum(a[i][k] * b[k][j] for k in range(len(b)))
    return np.array(out)
