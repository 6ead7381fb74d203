import numpy as np
import pytest

from jkoflow import EmpiricalSnapshot, PopulationTrajectory, uniform_snapshot


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_snapshot(rng, n, d, time_index=0, uniform=True):
    points = rng.normal(size=(n, d))
    if uniform:
        return uniform_snapshot(points, time_index)
    w = rng.uniform(0.1, 1.0, size=n)
    return EmpiricalSnapshot(points, w / w.sum(), time_index)


def random_trajectory(rng, n=12, d=2, steps=3, tau=0.1, drift=0.05):
    """A wandering cloud, no model behind it. Good enough for IO and OT plumbing."""
    points = rng.normal(size=(n, d))
    snaps = []
    for t in range(steps + 1):
        snaps.append(uniform_snapshot(points, t))
        points = points + drift * rng.normal(size=(n, d))
    return PopulationTrajectory(snaps, tau)
