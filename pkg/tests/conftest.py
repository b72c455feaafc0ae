import numpy as np
import pytest
from hypothesis import settings

from sodavit.tensor import set_debug

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")

set_debug(True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
