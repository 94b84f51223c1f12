import numpy as np
import pytest

from maxlab.grid import Domain, GridFunction, make_test_function


def line(lo=-4.0, hi=4.0, h=2.0 ** -7):
    return Domain.from_box(lo, hi, h, d=1)


def square(lo=-1.0, hi=1.0, h=2.0 ** -5):
    return Domain.from_box([lo, lo], [hi, hi], h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def triangle_1d():
    return make_test_function("triangle", line(-2.0, 2.0, 2.0 ** -7))


@pytest.fixture
def zero_2d():
    dom = square()
    return GridFunction(dom, np.zeros(dom.dims))


@pytest.fixture
def bump_2d():
    return make_test_function("gaussian_bump", square(), sigma=0.0625)


@pytest.fixture
def random_2d(rng):
    dom = Domain(2, (40, 40), 1 / 32, (-0.625, -0.625))
    return GridFunction(dom, rng.standard_normal(dom.dims))
