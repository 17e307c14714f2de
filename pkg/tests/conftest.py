import numpy as np
import pytest

from orthoflow.manifold import Quadrature, orthonormalize
from orthoflow.models import Grid1D, KohnSham1DSpec

LIH_NUCLEI = ((3.0, -1.5), (1.0, 1.5))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def lih_spec(n_points=128, n_orb=2, length=20.0, **kw):
    return KohnSham1DSpec(Grid1D.centered(n_points, length), n_orb, LIH_NUCLEI, **kw)


def random_frame(rng, n, k, w):
    return orthonormalize(rng.standard_normal((n, k)), w)


def uniform(n, h=0.5):
    return Quadrature.uniform(n, h)
