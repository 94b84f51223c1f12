"""Brute-force reference evaluator for the maximal operators.

Nothing here touches the row-span tables. For a center ``c`` the oracle
enumerates every lattice point of a cube around ``c``, sorts them by
distance and accumulates exact integer limbs, so the sum over any ball
``B(c, r_k)`` is a cumulative-sum lookup. In one dimension the balls are
intervals and the oracle uses exact prefix sums instead, which allows
fine-lattice centers in bulk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .balls import BallSpec, ExactField, RadiusGrid, default_radius_grid, radius_weights, stencil_limit
from .errors import PreconditionError, UnsupportedCaseError
from .grid import GridFunction
from .maximal import FracParams


@dataclass(frozen=True)
class OracleConfig:
    fine_factor: int = 4
    exhaustive: bool = True

    def __post_init__(self):
        ff = self.fine_factor
        if ff < 1 or ff & (ff - 1):
            raise PreconditionError("fine_factor must be a power of 2")


@dataclass(frozen=True)
class OracleResult:
    value: float
    ball: BallSpec
    center_lattice: tuple[float, ...]
    radius_index: int


class ReferenceOracle:
    """Caches per-center radius profiles of one function on one radius grid."""

    def __init__(self, f: GridFunction, rgrid: RadiusGrid | None = None,
                 config: OracleConfig = OracleConfig()):
        self.f = f
        self.config = config
        base = rgrid if rgrid is not None else default_radius_grid(f)
        self.rgrid = base.refined(config.fine_factor) if config.fine_factor > 1 else base
        self.exact = ExactField(np.abs(f.values))
        self.lims = np.array([stencil_limit(float(r), f.h) for r in self.rgrid.radii])
        self._profiles: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._offsets: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        if f.d == 1:
            flat = self.exact.limbs
            self._prefix = np.concatenate(
                [np.zeros((flat.shape[0], 1), dtype=np.int64), np.cumsum(flat, axis=1)], axis=1)

    # per-center sums -------------------------------------------------------

    def profile(self, c: tuple[float, ...]) -> tuple[np.ndarray, np.ndarray]:
        """Exact limb sums (L, K) and lattice counts (K,) of ``B(c, r_k)``."""
        got = self._profiles.get(c)
        if got is not None:
            return got
        if self.f.d == 1:
            sums, counts = self._interval_profiles(np.array([c[0]]))
            got = sums[:, 0, :], counts[0]
        else:
            got = self._cube_profile(np.asarray(c, dtype=float))
        self._profiles[c] = got
        return got

    def _sorted_offsets(self, frac: tuple[float, ...]):
        """Cube offsets sorted by distance from a center with fractional part ``frac``.

        Integer offsets are taken relative to ``floor(c)``, so every center in the
        same class shares one sort.
        """
        got = self._offsets.get(frac)
        if got is None:
            fr = np.asarray(frac)
            reach = math.isqrt(int(self.lims[-1])) + 2
            axes = [np.arange(-reach, reach + 1)] * fr.size
            off = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, fr.size)
            dist2 = ((off - fr) ** 2).sum(axis=1)
            order = np.argsort(dist2, kind="stable")
            off, dist2 = off[order], dist2[order]
            n = np.searchsorted(dist2, self.lims, side="right")
            keep = int(n[-1])
            got = off[:keep], n.astype(np.int64)
            self._offsets[frac] = got
        return got

    def _cube_profile(self, c: np.ndarray):
        base = np.floor(c)
        off, n = self._sorted_offsets(tuple(c - base))
        pts = off + base.astype(np.int64)
        shape = np.asarray(self.exact.shape)
        inside = np.all((pts >= 0) & (pts < shape), axis=1)
        limbs = np.zeros((self.exact.nlimbs, pts.shape[0]), dtype=np.int64)
        limbs[:, inside] = self.exact.limbs[(slice(None),) + tuple(pts[inside].T)]
        cum = np.cumsum(limbs, axis=1)
        sums = np.where(n > 0, cum[:, np.maximum(n - 1, 0)], 0)
        return sums, n

    def _interval_profiles(self, centers: np.ndarray):
        """1D: sums (L, n_centers, K) and counts (n_centers, K) for real centers."""
        rho = np.sqrt(self.lims)
        lo = np.ceil(centers[:, None] - rho[None, :]).astype(np.int64)
        hi = np.floor(centers[:, None] + rho[None, :]).astype(np.int64)
        # the square-root bounds can be off by one; settle each end exactly
        lo = np.where((lo - 1 - centers[:, None]) ** 2 <= self.lims, lo - 1, lo)
        lo = np.where((lo - centers[:, None]) ** 2 > self.lims, lo + 1, lo)
        hi = np.where((hi + 1 - centers[:, None]) ** 2 <= self.lims, hi + 1, hi)
        hi = np.where((hi - centers[:, None]) ** 2 > self.lims, hi - 1, hi)
        counts = np.maximum(hi - lo + 1, 0)
        n = self.exact.shape[0]
        a = np.clip(lo, 0, n)
        b = np.clip(hi + 1, 0, n)
        b = np.maximum(a, b)
        sums = self._prefix[:, b] - self._prefix[:, a]
        return sums, counts

    def _values(self, sums: np.ndarray, counts: np.ndarray, alpha: float) -> np.ndarray:
        w = radius_weights(self.rgrid, alpha)
        flat = self.exact.to_float(sums.reshape(sums.shape[0], -1)).reshape(counts.shape)
        out = np.full(counts.shape, -np.inf)
        ok = counts > 0
        out[ok] = w[np.nonzero(ok)[-1]] * (flat[ok] / counts[ok])
        return out

    # evaluation -----------------------------------------------------------

    def lattice_point(self, x) -> np.ndarray:
        """Physical point -> lattice coordinates snapped to the fine lattice."""
        ff = self.config.fine_factor
        c = (np.asarray(x, dtype=float) - np.asarray(self.f.domain.origin)) / self.f.h
        return np.round(c * ff) / ff

    def maximal(self, alpha: float, delta: float, x, kind: str = "centered") -> OracleResult:
        FracParams(alpha, delta, kind).validate(self.f.d)
        k0 = self.rgrid.first_at_least(delta)
        if k0 >= len(self.rgrid):
            raise PreconditionError("truncation radius exceeds the radius grid")
        c = self.lattice_point(x)
        if kind == "centered":
            sums, counts = self.profile(tuple(c))
            vals = self._values(sums, counts, alpha)
            vals[:k0] = -np.inf
            vals = self._cut(vals, counts, alpha)
            k = int(np.argmax(vals == vals.max()))
            return self._result(vals[k], c, k)
        return self._noncentered(alpha, k0, c)

    def _cut(self, vals: np.ndarray, counts: np.ndarray, alpha: float) -> np.ndarray:
        # without exhaustive mode, drop radii whose L1 bound cannot reach the best value
        if self.config.exhaustive or not np.isfinite(vals.max()):
            return vals
        total = float(np.abs(self.f.values).sum()) * (1 + 1e-12)
        bound = radius_weights(self.rgrid, alpha) * total / np.maximum(counts, 1)
        suffix = np.maximum.accumulate(bound[::-1])[::-1]
        return np.where(suffix < vals.max(), -np.inf, vals)

    def _centers(self, c: np.ndarray) -> np.ndarray:
        """Fine-lattice centers inside the box within r_max of ``c`` (lattice units)."""
        ff = self.config.fine_factor
        reach = math.sqrt(self.lims[-1])
        shape = self.exact.shape
        axes = []
        for ci, n in zip(c, shape):
            lo = max(0.0, math.floor((ci - reach) * ff) / ff)
            hi = min(n - 1.0, math.ceil((ci + reach) * ff) / ff)
            axes.append(np.arange(round(lo * ff), round(hi * ff) + 1) / ff)
        z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, c.size)
        dist2 = ((z - c) ** 2).sum(axis=1)
        return z[dist2 <= self.lims[-1]]

    def _noncentered(self, alpha: float, k0: int, c: np.ndarray) -> OracleResult:
        z = self._centers(c)  # lexicographic order
        dist2 = ((z - c) ** 2).sum(axis=1)
        if self.f.d == 1:
            sums, counts = self._interval_profiles(z[:, 0])
            vals = self._values(sums, counts, alpha)
        else:
            vals = np.empty((z.shape[0], len(self.rgrid)))
            for i, zi in enumerate(z):
                s, n = self.profile(tuple(zi))
                vals[i] = self._values(s, n, alpha)
        admissible = (dist2[:, None] <= self.lims[None, :])
        admissible[:, :k0] = False
        vals = np.where(admissible, vals, -np.inf)
        best = vals.max()
        hit = vals == best
        k = int(np.argmax(hit.any(axis=0)))
        i = int(np.argmax(hit[:, k]))
        return self._result(best, z[i], k)

    def _result(self, value: float, c: np.ndarray, k: int) -> OracleResult:
        dom = self.f.domain
        center = tuple(float(o + ci * dom.h) for o, ci in zip(dom.origin, c))
        r = float(self.rgrid.radii[k])
        return OracleResult(float(value), BallSpec(center, r), tuple(float(v) for v in c), k)


def brute_force_maximal(f: GridFunction, alpha: float, delta: float, x,
                        config: OracleConfig = OracleConfig(), kind: str = "centered",
                        rgrid: RadiusGrid | None = None) -> tuple[float, BallSpec]:
    """Maximal value at the physical point ``x`` by exhaustive scan, with its ball."""
    res = ReferenceOracle(f, rgrid, config).maximal(alpha, delta, x, kind)
    return res.value, res.ball


CASES = ("triangle_center", "indicator_right_centered", "indicator_right_noncentered")


def closed_form_1d(case: str, alpha: float) -> tuple[float, float, float]:
    """Continuum maximizers ``(value, radius, center)`` for three explicit 1D inputs.

    * ``triangle_center``: hat ``max(0, 1-|x|)`` at x=0. The centered profile
      is ``r^alpha (1 - r/2)`` for r <= 1, maximal at ``r* = 2 alpha/(alpha+1)``.
    * ``indicator_right_centered``: ``1_[-1,1]`` at x=2. For ``1 <= r <= 3``
      the profile is ``r^alpha (r-1)/(2r)``, increasing up to r=3 when
      alpha < 1; beyond 3 it is ``r^(alpha-1)``, decreasing. Value ``3^(alpha-1)``.
    * ``indicator_right_noncentered``: same f and x. Intervals ``(2-2r, 2)``
      with ``1/2 <= r <= 3/2`` give ``r^alpha (2r-1)/(2r)``, increasing; longer
      ones give at most ``r^(alpha-1)``. Maximum at ``r = 3/2``, center 1/2,
      value ``(3/2)^(alpha-1)``.
    """
    if not 0 < alpha < 1:
        raise UnsupportedCaseError("closed forms cover 0 < alpha < 1 in one dimension")
    if case == "triangle_center":
        r = 2 * alpha / (alpha + 1)
        return r ** alpha * (1 - alpha / (alpha + 1)), r, 0.0
    if case == "indicator_right_centered":
        return 3.0 ** (alpha - 1), 3.0, 2.0
    if case == "indicator_right_noncentered":
        return 1.5 ** (alpha - 1), 1.5, 0.5
    raise UnsupportedCaseError(f"unknown case {case!r}")
