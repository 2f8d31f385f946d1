import numpy as np
import pytest

from stochpatch.tensor import DescriptorMatrix, GridShape


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_matrix(rng, n, d, h=None):
    shape = GridShape(h, n // h, d) if h else GridShape.for_count(n, d)
    return DescriptorMatrix(shape, rng.standard_normal((n, d)))
