"""maxlab: a numerical laboratory for fractional Hardy-Littlewood maximal functions."""

__version__ = "0.1.0"

from .grid import Domain, GridFunction, RegionMask, make_test_function, read_grid, write_grid  # noqa: E402
from .balls import BallSpec, RadiusGrid, ball_average, default_radius_grid  # noqa: E402
from .maximal import (  # noqa: E402
    FracParams,
    MaximalEngine,
    MaximalField,
    centered_maximal,
    noncentered_maximal,
    refined_maximal_minus1,
    truncated_family,
)
from .calculus import GradientField, gradient, gradient_of_modulus, lq_norm, w11_norm  # noqa: E402

__all__ = [
    "BallSpec", "Domain", "FracParams", "GradientField", "GridFunction", "MaximalEngine",
    "MaximalField", "RadiusGrid", "RegionMask", "ball_average", "centered_maximal",
    "default_radius_grid", "gradient", "gradient_of_modulus", "lq_norm", "make_test_function",
    "noncentered_maximal", "read_grid", "refined_maximal_minus1", "truncated_family",
    "w11_norm", "write_grid",
]
