import math
import os

import numpy as np
import pytest
from hypothesis import strategies as st

from mechanism import FiniteKernel, PrivacyParams, rr_kernel
from metric_core import discrete_metric_space

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")

LN2 = math.log(2.0)

# shared (epsilon, delta) grid of the randomized-response sweeps
EPSILONS = [0.0, LN2, 1.0, 2.0]
DELTAS = [0.0, 0.1, 0.5]
PRIVACY_GRID = [PrivacyParams(e, d) for e in EPSILONS for d in DELTAS]


def data_path(name: str) -> str:
    return os.path.join(DATA_DIR, name)


def golden_path(name: str) -> str:
    return os.path.join(GOLDEN_DIR, name)


def random_kernel(rng: np.random.Generator, size: int, output_size: int = None) -> FiniteKernel:
    """Dirichlet rows over a discrete space, with zeros sprinkled in"""
    output_size = output_size or size
    labels = [f"x{i}" for i in range(max(size, output_size))]
    probs = rng.dirichlet(np.ones(output_size), size=size)
    if rng.random() < 0.3:
        probs[rng.integers(size), rng.integers(output_size)] = 0.0
        probs /= probs.sum(axis=1, keepdims=True)
    space = discrete_metric_space(labels[:size])
    output_space = discrete_metric_space(labels[:output_size]) if output_size != size else None
    return FiniteKernel(space, probs, output_space)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def space2():
    return discrete_metric_space(["a", "b"])


@pytest.fixture
def space4():
    return discrete_metric_space(["a", "b", "c", "d"])


@pytest.fixture
def rr_p03(space2):
    """The two-point kernel that breaks (ln 2, 0)-DP"""
    return rr_kernel(space2, 0.3)


@pytest.fixture
def rr_p02(space4):
    """The four-point kernel that is exactly (ln 2, 0)-DP"""
    return rr_kernel(space4, 0.2)


@st.composite
def metric_matrices(draw, max_points: int = 6):
    """Shortest-path closures of random positive weights: always a metric"""
    n = draw(st.integers(min_value=2, max_value=max_points))
    weights = draw(st.lists(st.floats(min_value=0.5, max_value=10.0, allow_nan=False),
                            min_size=n * n, max_size=n * n))
    dist = np.array(weights).reshape(n, n)
    dist = np.minimum(dist, dist.T)
    np.fill_diagonal(dist, 0.0)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    return dist
