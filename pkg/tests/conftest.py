import pytest

from logicbeam.eval import train_toy_lm
from logicbeam.scorer import Vocab


@pytest.fixture
def vocab():
    return Vocab(["a", "b", "c", "red", "onion", "shallot"])


@pytest.fixture(scope="session")
def toy_lm():
    return train_toy_lm()


def naive_border(pattern, stream):
    """Longest proper prefix of ``pattern`` that is a suffix of ``stream``."""
    pattern, stream = tuple(pattern), tuple(stream)
    for p in range(len(pattern) - 1, 0, -1):
        if len(stream) >= p and stream[len(stream) - p:] == pattern[:p]:
            return p
    return 0
