"""The smooth test corpus used by the verification suites.

One dimension uses the box ``[-4, 4]``; two dimensions use the smaller box
``[-1, 1]^2`` with proportionally narrower bumps, which keeps the
``2^-8`` grids at 513 x 513 points.
"""

from __future__ import annotations

from .balls import RadiusGrid, required_rmax
from .grid import Domain, GridFunction, make_test_function

BOX = {1: (-4.0, 4.0), 2: (-1.0, 1.0)}
# parameters per dimension: gaussian sigma, two_bumps sigma and separation
SHAPES = {
    1: {"gaussian_bump": {"sigma": 0.25}, "two_bumps": {"sigma": 0.2, "separation": 0.5}},
    2: {"gaussian_bump": {"sigma": 1 / 16}, "two_bumps": {"sigma": 0.04, "separation": 0.2}},
}
RESOLUTIONS = {1: (2.0 ** -9, 2.0 ** -10), 2: (2.0 ** -7, 2.0 ** -8)}
# length unit of the corpus: truncation radii and sequence shifts scale with it
LENGTH_SCALE = {1: 1.0, 2: 0.25}
SMOOTH = ("gaussian_bump", "two_bumps")


def corpus_domain(d: int, h: float) -> Domain:
    lo, hi = BOX[d]
    return Domain.from_box([lo] * d, [hi] * d, h)


def corpus_function(kind: str, d: int, h: float, **overrides) -> GridFunction:
    params = dict(SHAPES[d][kind])
    params.update(overrides)
    return make_test_function(kind, corpus_domain(d, h), **params)


def corpus(d: int, h: float) -> dict[str, GridFunction]:
    return {kind: corpus_function(kind, d, h) for kind in SMOOTH}


def suite_step(d: int, h: float) -> float:
    """Geometric radius step for pointwise gradient checks: ``2h`` per length unit.

    The far-field gradient inequalities are sharp, so the radius grid must
    get finer along with the lattice for the discretisation error to vanish.
    """
    return 2.0 * h / LENGTH_SCALE[d]


def suite_rgrid(f: GridFunction) -> RadiusGrid:
    return RadiusGrid.default(f.h, required_rmax(f), suite_step(f.d, f.h))
