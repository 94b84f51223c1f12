"""Discrete gradients and Lebesgue / Sobolev norms on a uniform grid.

All norms use midpoint quadrature (weight ``h^d`` per node) and numpy's
pairwise summation over a C-contiguous array, so a reduction never depends
on how the caller split the work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainTooSmallError, InvalidExponentError, PreconditionError
from .grid import Domain, GridFunction, RegionMask


@dataclass(frozen=True)
class GradientField:
    domain: Domain
    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.components) != self.domain.d:
            raise PreconditionError("need one component per axis")
        for c in self.components:
            if c.shape != self.domain.shape or not np.all(np.isfinite(c)):
                raise PreconditionError("gradient components must be finite and grid-shaped")
            c.flags.writeable = False

    def magnitude(self) -> GridFunction:
        sq = np.zeros(self.domain.shape)
        for c in self.components:
            sq += c * c
        return GridFunction(self.domain, np.sqrt(sq))

    def component(self, i: int) -> GridFunction:
        return GridFunction(self.domain, self.components[i])

    def __sub__(self, other: "GradientField") -> "GradientField":
        if other.domain != self.domain:
            raise PreconditionError("gradient fields live on different grids")
        return GradientField(self.domain, tuple(a - b for a, b in zip(self.components, other.components)))


def gradient(g: GridFunction) -> GradientField:
    """Central differences inside, one-sided first order on boundary faces."""
    if min(g.domain.dims) < 3:
        raise DomainTooSmallError("gradient needs at least 3 points per axis")
    h = g.h
    comps = []
    for axis in range(g.d):
        comps.append(np.gradient(g.values, h, axis=axis, edge_order=1))
    return GradientField(g.domain, tuple(comps))


def gradient_of_modulus(f: GridFunction) -> GradientField:
    """``sign(f) * grad f`` with ``sign(0) = 0``: the a.e. gradient of ``|f|``."""
    grad = gradient(f)
    s = np.sign(f.values)
    return GradientField(f.domain, tuple(s * c for c in grad.components))


def lq_norm(g: GridFunction | GradientField, q: float, mask: RegionMask | None = None) -> float:
    """``(sum_{x in mask} |g(x)|^q h^d)^(1/q)``; gradient fields use their magnitude."""
    if not q >= 1:
        raise InvalidExponentError(f"q={q} must be >= 1")
    if isinstance(g, GradientField):
        g = g.magnitude()
    vals = np.abs(g.values)
    if mask is not None:
        if mask.domain != g.domain:
            raise PreconditionError("mask and function live on different grids")
        vals = vals[mask.flags]
    vals = np.ascontiguousarray(vals, dtype=float).ravel()
    if q == 1:
        total = np.sum(vals)
    else:
        total = np.sum(vals ** q)
    return float(total * g.domain.cell_volume) ** (1.0 / q)


def w11_norm(f: GridFunction) -> float:
    return lq_norm(f, 1) + lq_norm(gradient(f), 1)
