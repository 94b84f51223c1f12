import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maxlab.balls import (
    AverageProfiles,
    BallSpec,
    ExactField,
    RadiusGrid,
    RowSpanTables,
    ball_average,
    build_row_span_tables,
    lattice_count,
    naive_sums_at,
    required_rmax,
    suffix_max_profile,
    unit_ball_volume,
)
from maxlab.errors import EmptyStencilError, InvalidAlphaError, PreconditionError
from maxlab.grid import Domain, GridFunction, make_test_function

from conftest import line, square


@pytest.mark.parametrize("d, vol", [(1, 2.0), (2, math.pi), (3, 4 * math.pi / 3)])
def test_unit_ball_volume(d, vol):
    assert unit_ball_volume(d) == pytest.approx(vol, rel=1e-15)


def test_average_of_zero(zero_2d):
    assert ball_average(zero_2d, BallSpec((0.1, -0.2), 0.3)) == 0.0


def test_average_inside_indicator():
    f = make_test_function("indicator_ball", square(-2, 2, 2.0 ** -5))
    assert abs(ball_average(f, BallSpec((0, 0), 0.5)) - 1.0) <= 1e-12


def test_average_counts_points_outside_box():
    h = 2.0 ** -7
    f = make_test_function("indicator_ball", square(-2, 2, h))
    assert abs(ball_average(f, BallSpec((0, 0), 2.0)) - 0.25) <= 3 * h


def test_triangle_average_closed_form():
    f = make_test_function("triangle", line(-2, 2, 2.0 ** -9))
    assert abs(ball_average(f, BallSpec((0.0,), 1.0)) - 0.5) <= 2 * f.h


def test_signed_and_gradient_modes():
    f = make_test_function("two_bumps", line(-4, 4, 2.0 ** -7), sigma=0.2, signs=(1.0, -1.0))
    ball = BallSpec((0.0,), 1.0)
    # odd function: signed mean vanishes, modulus mean does not
    assert abs(ball_average(f, ball, "signed")) < 1e-12
    assert ball_average(f, ball, "abs") > 0.1
    # |f| is even, so its derivative averages to zero on a centered ball
    assert abs(ball_average(f, ball, ("gradient", 0))) < 1e-12
    with pytest.raises(PreconditionError):
        ball_average(f, ball, "median")


def test_empty_stencil():
    f = make_test_function("triangle", line(-2, 2, 0.25))
    with pytest.raises(EmptyStencilError):
        ball_average(f, BallSpec((0.1,), 0.05))


def test_lattice_count_small_cases():
    assert lattice_count(1.0, 1.0, 1) == 3
    assert lattice_count(1.0, 1.0, 2) == 5
    assert lattice_count(math.sqrt(2), 1.0, 2) == 9


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 24), st.integers(3, 24)),
              elements=st.floats(-1e6, 1e6, allow_subnormal=False)),
       st.floats(0.03, 1.5), st.integers(0, 2 ** 31))
def test_accelerated_equals_naive(vals, r, seed):
    h = 1 / 16
    tables = RowSpanTables(vals, h)
    pick = np.random.default_rng(seed)
    centers = np.stack([pick.integers(0, n, 20) for n in vals.shape], axis=1)
    assert np.array_equal(tables.sums_at(centers, r), naive_sums_at(tables.exact, centers, r, h))


def test_field_sums_match_point_queries(random_2d):
    tables = RowSpanTables(random_2d.values, random_2d.h)
    full = tables.field_sums(0.2)
    idx = np.argwhere(np.ones(random_2d.domain.dims, bool))
    assert np.array_equal(full.reshape(full.shape[0], -1), tables.sums_at(idx, 0.2))


def test_exact_sum_is_order_independent(rng):
    vals = rng.standard_normal(500) * 10.0 ** rng.integers(-8, 8, 500)
    ex = ExactField(vals)
    total = ex.to_float(ex.limbs.sum(axis=1)[:, None])[0]
    perm = rng.permutation(500)
    ex2 = ExactField(vals[perm])
    assert total == ex2.to_float(ex2.limbs.sum(axis=1)[:, None])[0]
    assert total == pytest.approx(math.fsum(vals), rel=1e-15, abs=1e-300)


def test_radius_grid_validation():
    with pytest.raises(PreconditionError):
        RadiusGrid(np.array([0.5, 0.4]), 0.5)
    with pytest.raises(PreconditionError):
        RadiusGrid(np.array([0.1]), 0.5)
    with pytest.raises(PreconditionError):
        RadiusGrid(np.array([1.0, 3.0]), 1.0, step=0.5)


def test_default_grid_shape():
    g = RadiusGrid.default(0.01, 2.0)
    assert g.radii[0] == 0.01 and g.r_max >= 2.0
    assert np.all(np.diff(g.radii) > 0)
    assert g.first_at_least(0.05) == 4


def test_refined_grid_is_superset():
    g = RadiusGrid.default(1 / 32, 1.5)
    fine = g.refined(4)
    assert set(g.radii.tolist()) <= set(fine.radii.tolist())
    assert fine.radii[0] == pytest.approx(1 / 128)


def test_required_rmax_covers_support():
    f = make_test_function("triangle", line(-4, 4, 1 / 16))
    assert required_rmax(f) >= 2.0 + 3.0


def test_profile_of_zero(zero_2d):
    rg = RadiusGrid.default(zero_2d.h, 1.0)
    assert not suffix_max_profile(zero_2d, (5, 5), 0.5, rg).any()


def test_triangle_profile_peak():
    f = make_test_function("triangle", line(-2, 2, 2.0 ** -9))
    rg = RadiusGrid.linear_grid(f.h, 2.0)
    centre = f.domain.index_of((0.0,))
    prof = suffix_max_profile(f, centre, 0.5, rg)
    assert abs(prof[0] - (2 / 3) ** 1.5) <= 5 * f.h
    assert np.all(np.diff(prof) <= 0)
    with pytest.raises(InvalidAlphaError):
        suffix_max_profile(f, centre, 1.0, rg)


def test_average_profiles_prefetch_is_deterministic(random_2d):
    rg = RadiusGrid.default(random_2d.h, 0.5)
    a = AverageProfiles(build_row_span_tables(random_2d), rg)
    b = AverageProfiles(build_row_span_tables(random_2d), rg)
    a.prefetch(range(len(rg)), workers=4)
    for k in range(len(rg)):
        assert a.get(k).tobytes() == b.get(k).tobytes()


def test_one_dimensional_tables():
    dom = Domain(1, (50,), 0.1, (0.0,))
    vals = np.random.default_rng(3).random(50)
    tables = RowSpanTables(vals, dom.h)
    centers = np.arange(50)[:, None]
    assert np.array_equal(tables.sums_at(centers, 0.35), naive_sums_at(tables.exact, centers, 0.35, dom.h))
    f = GridFunction(dom, vals)
    assert ball_average(f, BallSpec((2.0,), 0.3)) == pytest.approx(vals[17:24].mean(), rel=1e-14)
