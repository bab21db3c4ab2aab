import numpy as np
import pytest

from regionvpr.synth import gen_cluster_scene, gen_geo_index


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene():
    return gen_cluster_scene(seed=11, n_clusters=4, grid=(6, 6), noise_sigma=0.0)


@pytest.fixture(scope="session")
def small_geo():
    return gen_geo_index(seed=5, size=60, n_queries=10)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
