import numpy as np
import pytest
from hypothesis import settings

from ipstable.metric import GenSpec, MetricSpace, generate, rng_from_seed

settings.register_profile("suite", deadline=None, max_examples=40)
settings.load_profile("suite")


def line_space(coords):
    """1-D euclidean space from a list of coordinates."""
    return MetricSpace.from_points(np.asarray(coords, dtype=float).reshape(-1, 1))


def random_space(n, seed, kind="euclidean_mixture", k=4, dim=3):
    return generate(GenSpec(kind, n=n, k=min(k, n), dim=dim, seed=seed)).space


def random_matrix_space(n, seed):
    return generate(GenSpec("random_shortest_path", n=n, seed=seed)).space


@pytest.fixture
def rng():
    return rng_from_seed(1234)


def perturbed_planted(n, k, separation, seed, moves=3):
    """Well-separated instance plus a clustering with a few points reassigned
    into cluster 0; their envy ratio is about 1/separation, far above any
    log-scale alpha, so local searches must take real steps."""
    from ipstable.clustering import Clustering

    out = generate(GenSpec("planted_separated", n=n, k=k, separation=separation, seed=seed))
    a = out.planted.assignment.copy()
    groups = out.planted.members()
    moved = 0
    for depth in range(n):
        for g in range(1, k):
            if moved >= moves:
                break
            if depth < len(groups[g]) and (a == g).sum() > 1:
                a[groups[g][depth]] = 0
                moved += 1
        if moved >= moves:
            break
    return out.space, out.planted, Clustering(a, k)


def merge_heavy_instance(width=200.0):
    """A wide cluster holds nearly all potential while a tight pair envies a
    coincident clump; the violator's own average sits below the swap
    threshold, forcing a merge-and-split step."""
    from ipstable.clustering import Clustering

    coords = [1000.0 + width * i for i in range(20)]
    coords += [0.0, 0.5]
    coords += [0.001] * 5
    space = MetricSpace.from_points(np.array(coords).reshape(-1, 1))
    bad = Clustering(np.array([0] * 20 + [1] * 2 + [2] * 5), 3)
    return space, bad
