import numpy as np
import pytest

from babylon import generate_sk


@pytest.fixture
def sk6():
    return generate_sk(6, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
