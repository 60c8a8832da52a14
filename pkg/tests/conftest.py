import numpy as np
import pytest

from ntree import NTree, NTreeParams, Trajectory, euclidean2d
from ntree.datasets import generate

_ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion."""

    def _report(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_trajectory(rng, n_units=None, t0=None, gaps=False, scale=100.0):
    m = int(n_units or rng.integers(1, 12))
    dt = rng.uniform(1.0, 30.0, size=m)
    t = (t0 if t0 is not None else rng.uniform(-500, 500)) + np.concatenate([[0.0], np.cumsum(dt)])
    xy = np.cumsum(rng.normal(size=(m + 1, 2)) * scale, axis=0)
    if not gaps or m < 2:
        return Trajectory.from_samples(t, xy)
    # drop every other unit to open temporal and spatial gaps
    keep = [i for i in range(m) if i % 2 == 0]
    return Trajectory([t[i] for i in keep], [t[i + 1] for i in keep],
                      [xy[i] for i in keep], [xy[i + 1] + rng.normal(size=2) for i in keep])


@pytest.fixture
def make_traj(rng):
    def _make(**kw):
        return random_trajectory(rng, **kw)

    return _make


@pytest.fixture(scope="session")
def clustered_10k():
    return generate("points2d-clustered", 10_000, seed=7).objects


@pytest.fixture(scope="session")
def clustered_tree(clustered_10k):
    return NTree.build(clustered_10k, euclidean2d, NTreeParams(seed=3))


@pytest.fixture
def small_points(rng):
    return [tuple(p) for p in np.round(rng.uniform(0, 100, size=(600, 2)), 2)]
