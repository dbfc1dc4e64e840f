import numpy as np
import pytest

from monodens import BoundsAB, Linear, MonotoneHistogram


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_monotone_histogram(rng, bounds: BoundsAB, max_cells: int = 6) -> MonotoneHistogram:
    """Random member of D_[a,b] by rejection on the renormalized box."""
    for _ in range(500):
        m = int(rng.integers(1, max_cells + 1))
        bp = np.concatenate(([0.0], np.sort(rng.uniform(0.02, 0.98, m - 1)), [1.0]))
        if np.any(np.diff(bp) <= 1e-4):
            continue
        h = np.sort(rng.uniform(bounds.a, bounds.b, m))[::-1]
        mass = float(np.diff(bp) @ h)
        h = h / mass
        if np.all(h >= bounds.a) and np.all(h <= bounds.b):
            return MonotoneHistogram(bp, h, renormalize=True)
    raise AssertionError("failed to draw a random histogram in the box")


def random_linear(rng) -> Linear:
    d0 = float(rng.uniform(0.0, 1.0))
    return Linear(d0, 2.0 - d0)


def draw_stream(rng, q, n: int) -> np.ndarray:
    return q.ppf(rng.random(n))
