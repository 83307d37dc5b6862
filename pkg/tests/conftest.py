import numpy as np
import pytest
from hypothesis import settings

from affine_hilbert.families import make_family, shipped_specs

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def shipped():
    return {k: make_family(v) for k, v in shipped_specs().items()}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
