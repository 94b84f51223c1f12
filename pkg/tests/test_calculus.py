import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxlab.calculus import GradientField, gradient, gradient_of_modulus, lq_norm, w11_norm
from maxlab.errors import DomainTooSmallError, InvalidExponentError
from maxlab.grid import Domain, GridFunction, make_test_function

from conftest import line, square


def test_constant_has_zero_gradient():
    dom = square()
    g = gradient(GridFunction(dom, np.full(dom.dims, 3.5)))
    assert all(not c.any() for c in g.components)


def test_affine_is_exact():
    dom = square(h=1 / 16)
    x1 = dom.mesh()[0]
    g = gradient(GridFunction(dom, x1))
    assert np.max(np.abs(g.components[0][1:-1, 1:-1] - 1.0)) <= 1e-12
    assert np.max(np.abs(g.components[1])) <= 1e-12


def test_second_order_convergence():
    errs = []
    sigma = 0.25
    for h in (2.0 ** -6, 2.0 ** -7):
        f = make_test_function("gaussian_bump", line(-4, 4, h), sigma=sigma)
        x = f.domain.axis_coords(0)
        exact = -x / sigma ** 2 * np.exp(-x ** 2 / (2 * sigma ** 2))
        errs.append(np.max(np.abs(gradient(f).components[0][1:-1] - exact[1:-1])))
    assert 4 * 0.8 <= errs[0] / errs[1] <= 4 * 1.2


def test_too_small_domain():
    with pytest.raises(DomainTooSmallError):
        gradient(GridFunction(Domain(2, (2, 5), 0.1, (0, 0)), np.zeros((2, 5))))


def test_modulus_gradient_of_nonnegative(bump_2d):
    a, b = gradient_of_modulus(bump_2d), gradient(bump_2d)
    supp = bump_2d.values > 0
    assert all(np.array_equal(x[supp], y[supp]) for x, y in zip(a.components, b.components))


def test_modulus_gradient_of_odd_function():
    tri = make_test_function("triangle", line(-8, 8, 1 / 64), center=-1.5)
    f = tri - GridFunction(tri.domain, tri.values[::-1])
    g = gradient_of_modulus(f)
    # |f| is even: its derivative is odd and the magnitude even
    assert np.max(np.abs(g.components[0] + g.components[0][::-1])) <= 1e-12
    m = g.magnitude().values
    assert np.max(np.abs(m - m[::-1])) <= 1e-12


def test_modulus_preserves_total_variation():
    h = 2.0 ** -7
    f = make_test_function("two_bumps", square(-1, 1, h), sigma=0.04, separation=0.2, signs=(1.0, -1.0))
    a = lq_norm(gradient_of_modulus(f), 1)
    b = lq_norm(gradient(f), 1)
    assert abs(a - b) <= 10 * h
    assert np.all(gradient_of_modulus(f).magnitude().values <= gradient(f).magnitude().values + 1e-15)


def test_norms():
    dom = square(-2, 2, 2.0 ** -7)
    ind = make_test_function("indicator_ball", dom)
    assert lq_norm(ind, 2) == pytest.approx(math.sqrt(math.pi), abs=0.05)
    assert lq_norm(GridFunction(dom, np.zeros(dom.dims)), 3) == 0.0
    tri = make_test_function("triangle", line(-4, 4, 2.0 ** -10))
    assert abs(lq_norm(tri, 1) - 1.0) <= 1e-3
    with pytest.raises(InvalidExponentError):
        lq_norm(tri, 0.5)


def test_masked_norm(bump_2d):
    from maxlab.grid import RegionMask
    full = RegionMask.full(bump_2d.domain)
    assert lq_norm(bump_2d, 1, full) == lq_norm(bump_2d, 1)
    assert lq_norm(bump_2d, 1, full.complement()) == 0.0


def test_w11_norm_closed_forms():
    tri = make_test_function("triangle", line(-4, 4, 2.0 ** -10))
    assert abs(w11_norm(tri) - 3.0) <= 1e-2
    assert w11_norm(tri * 0.0) == 0.0
    sigma = 0.25
    g = make_test_function("gaussian_bump", line(-4, 4, 2.0 ** -10), sigma=sigma)
    # |f|_1 = sigma sqrt(2 pi), |f'|_1 = 2
    assert w11_norm(g) == pytest.approx(sigma * math.sqrt(2 * math.pi) + 2.0, rel=0.01)


def test_gradient_field_ops(bump_2d):
    g = gradient(bump_2d)
    diff = g - g
    assert isinstance(diff, GradientField)
    assert not diff.magnitude().values.any()
    assert np.array_equal(g.component(1).values, g.components[1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1.0, 1.5, 2.0, 4.0]))
def test_norm_homogeneity(seed, q):
    vals = np.random.default_rng(seed).standard_normal((9, 7))
    f = GridFunction(Domain(2, (9, 7), 0.125, (0, 0)), vals)
    assert lq_norm(f * 2.0, q) == pytest.approx(2.0 * lq_norm(f, q), rel=1e-14)
    assert lq_norm(f, q) >= 0
