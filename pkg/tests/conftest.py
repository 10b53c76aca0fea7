import numpy as np
import pytest

from bspml.weights import WeightState, XiTable


def make_classes(sizes):
    out, start = [], 0
    for n in sizes:
        out.append(np.arange(start, start + n))
        start += n
    return out


def random_state(rng, sizes, lam=None, mu=None, w=None):
    """Weight state with random xi values and weights."""
    classes = make_classes(sizes)
    n = sum(sizes)
    xi = XiTable(rng.uniform(0, 2, n), rng.uniform(0, 1, n))
    w = rng.uniform(0, 1, n) if w is None else np.asarray(w, dtype=float)
    lam = rng.uniform(0, 2) if lam is None else lam
    mu = rng.uniform(0, 2) if mu is None else mu
    return WeightState(w, classes, xi, lam=lam, mu=mu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
