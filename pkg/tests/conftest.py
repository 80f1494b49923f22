import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from minegeo import synthetic

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def scene():
    """Default synthetic scene (60 db / 20 query views, 50k points)."""
    return synthetic.generate_scene(synthetic.SceneParams(seed=0))


@pytest.fixture(scope="session")
def small_scene():
    return synthetic.generate_scene(synthetic.SceneParams(grid_nx=96, grid_ny=96, n_db=12, n_query=6,
                                                          n_objects=4, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
