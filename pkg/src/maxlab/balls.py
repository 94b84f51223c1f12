"""Discrete Euclidean balls: stencils, exact ball sums and radius profiles.

A discrete ball ``B(z, r)`` is the set of lattice points at distance ``<= r``
from ``z`` (closed ball). Its average divides by the number of lattice points
in the ball, including those outside the box where the function is zero.

Ball sums are computed exactly. Every sample is split into integer limbs
(:class:`ExactField`) so that any summation order, whether a direct stencil
sum or a difference of prefix sums, yields the same integer; that integer is
then rounded to a float by a single canonical routine. This is what lets the
accelerated engine and the brute-force oracle agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .errors import EmptyStencilError, PreconditionError
from .grid import GridFunction

DEFAULT_STEP = 2.0 ** -4
LINEAR_HEAD = 16
# relative slack on the squared radius: points at distance exactly r are inside
INCLUSION_SLACK = 1e-12


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    if d < 1:
        raise PreconditionError("d must be >= 1")
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def stencil_limit(r: float, unit: float) -> float:
    """Squared radius in lattice units, with the inclusion slack applied."""
    return (r / unit) ** 2 * (1.0 + INCLUSION_SLACK)


@lru_cache(maxsize=4096)
def row_spans(lim: float, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the integer disc ``|o|^2 <= lim`` centred at the origin.

    Returns ``(offsets, halfwidths)``: offsets over the first ``d-1`` axes in
    lexicographic order, and the half-width of the span along the last axis.
    """
    rmax = math.isqrt(int(math.floor(lim)))
    if d == 1:
        return np.zeros((1, 0), dtype=np.int64), np.array([_halfwidth(lim, 0)], dtype=np.int64)
    axes = [np.arange(-rmax, rmax + 1)] * (d - 1)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d - 1)
    o2 = (grid ** 2).sum(axis=1)
    keep = o2 <= lim
    grid, o2 = grid[keep], o2[keep]
    widths = np.array([_halfwidth(lim, int(q)) for q in o2], dtype=np.int64)
    return grid.astype(np.int64), widths


def _halfwidth(lim: float, o2: int) -> int:
    # largest w with o2 + w^2 <= lim, evaluated with the same float predicate
    # the brute-force enumeration uses
    w = math.isqrt(max(int(math.floor(lim - o2)), 0))
    while o2 + (w + 1) ** 2 <= lim:
        w += 1
    while w > 0 and o2 + w * w > lim:
        w -= 1
    return w


def lattice_count(r: float, h: float, d: int) -> int:
    """Number of lattice points in a ball of radius r around a lattice point."""
    _, widths = row_spans(stencil_limit(r, h), d)
    return int((2 * widths + 1).sum())


@dataclass(frozen=True)
class BallSpec:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise PreconditionError("ball radius must be positive")


@dataclass(frozen=True)
class RadiusGrid:
    """Strictly increasing radii searched by the maximal operators."""

    radii: np.ndarray
    h_link: float
    step: float = DEFAULT_STEP

    def __post_init__(self):
        radii = np.array(self.radii, dtype=np.float64)
        radii.flags.writeable = False
        object.__setattr__(self, "radii", radii)
        if radii.ndim != 1 or radii.size == 0:
            raise PreconditionError("radius grid must be a non-empty list")
        if radii[0] < self.h_link * (1 - 1e-12):
            raise PreconditionError("smallest radius must be >= grid spacing")
        gaps = np.diff(radii)
        if np.any(gaps <= 0):
            raise PreconditionError("radii must be strictly increasing")
        ratio_ok = radii[1:] <= radii[:-1] * (1 + self.step) * (1 + 1e-12)
        linear_ok = gaps <= self.h_link * (1 + 1e-9)
        if not np.all(ratio_ok | linear_ok):
            raise PreconditionError("consecutive radii are spaced too coarsely")

    @classmethod
    def default(cls, h: float, r_max: float, step: float = DEFAULT_STEP,
                linear: int = LINEAR_HEAD) -> "RadiusGrid":
        """``h*k`` for ``k <= linear``, then geometric with ratio ``1+step``."""
        radii = [h * k for k in range(1, linear + 1)]
        if r_max <= radii[-1]:
            n = max(1, math.ceil(r_max / h - 1e-9))
            return cls(np.array(radii[:n]), h, step)
        r = radii[-1]
        while r < r_max:
            r = r * (1 + step)
            radii.append(r)
        return cls(np.array(radii), h, step)

    @classmethod
    def linear_grid(cls, h: float, r_max: float) -> "RadiusGrid":
        n = max(1, math.ceil(r_max / h - 1e-9))
        return cls(h * np.arange(1, n + 1), h, 1.0)

    def __len__(self) -> int:
        return self.radii.size

    @property
    def r_min(self) -> float:
        return float(self.radii[0])

    @property
    def r_max(self) -> float:
        return float(self.radii[-1])

    def first_at_least(self, r: float) -> int:
        """Index of the smallest radius ``>= r`` (``len`` if none)."""
        return int(np.searchsorted(self.radii, r, side="left"))

    def weights(self, alpha: float) -> np.ndarray:
        return radius_weights(self, alpha)

    def scaled(self, factor: float) -> "RadiusGrid":
        return RadiusGrid(self.radii * factor, self.h_link * factor, self.step)

    def refined(self, factor: int) -> "RadiusGrid":
        """Superset grid: every gap split into ``factor`` pieces.

        Gaps of one grid spacing are split linearly, geometric gaps
        geometrically; a linear run from ``h/factor`` up to the first radius
        is prepended. The original radii are kept bit for bit.
        """
        if factor == 1:
            return self
        h = self.h_link
        fine_h = h / factor
        out = [fine_h * m for m in range(1, int(round(self.radii[0] / fine_h)))]
        out.append(float(self.radii[0]))
        for a, b in zip(self.radii[:-1], self.radii[1:]):
            a, b = float(a), float(b)
            if b - a <= h * (1 + 1e-9):
                out.extend(a + (b - a) * i / factor for i in range(1, factor))
            else:
                q = b / a
                out.extend(a * q ** (i / factor) for i in range(1, factor))
            out.append(b)
        step = (1 + self.step) ** (1.0 / factor) - 1
        return RadiusGrid(np.array(out), fine_h, step)


_WEIGHT_CACHE: dict = {}


def radius_weights(rgrid: RadiusGrid, alpha: float) -> np.ndarray:
    """``r_k ** alpha`` evaluated elementwise with ``math.pow``.

    Using the scalar libm routine keeps the weights independent of array
    length and alignment, so a refined grid reproduces the coarse weights.
    """
    key = (rgrid.radii.tobytes(), float(alpha))
    w = _WEIGHT_CACHE.get(key)
    if w is None:
        w = np.array([math.pow(float(r), alpha) for r in rgrid.radii])
        w.flags.writeable = False
        if len(_WEIGHT_CACHE) > 256:
            _WEIGHT_CACHE.clear()
        _WEIGHT_CACHE[key] = w
    return w


def required_rmax(f: GridFunction) -> float:
    """Support diameter plus largest distance from a grid point to the support, plus 2h."""
    dom = f.domain
    support = f.values != 0
    if not support.any():
        return LINEAR_HEAD * dom.h
    dist = ndimage.distance_transform_edt(~support) * dom.h
    return support_diameter(f) + float(dist.max()) + 2 * dom.h


def support_diameter(f: GridFunction) -> float:
    idx = np.argwhere(f.values != 0)
    if idx.shape[0] <= 1:
        return 0.0
    pts = idx * f.h
    if f.d == 1:
        return float(pts.max() - pts.min())
    try:
        hull = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(np.linalg.norm(hi - lo))
    diff = hull[:, None, :] - hull[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def default_radius_grid(f: GridFunction, step: float = DEFAULT_STEP) -> RadiusGrid:
    return RadiusGrid.default(f.h, required_rmax(f), step)


# -- exact summation --------------------------------------------------------

class ExactField:
    """Integer limb decomposition of a float array.

    Each sample ``v`` equals ``sum_j limbs[j] * 2**(B*j + E0)`` exactly, with
    ``0 <= |limbs[j]| < 2**B``. ``B`` is chosen so that summing every sample
    of the grid in any order cannot overflow int64.
    """

    def __init__(self, values: np.ndarray):
        v = np.ascontiguousarray(values, dtype=np.float64)
        self.shape = v.shape
        n = max(v.size, 1)
        self.bits = 62 - math.ceil(math.log2(n + 1)) - 1
        nz = v != 0
        if not nz.any():
            self.e0 = 0
            self.limbs = np.zeros((1,) + v.shape, dtype=np.int64)
            return
        mant, expo = np.frexp(v)
        mint = np.ldexp(mant, 53).astype(np.int64)
        expo = expo.astype(np.int64) - 53
        self.e0 = int(expo[nz].min())
        shift = np.where(nz, expo - self.e0, 0)
        mag = np.abs(mint)
        sign = np.sign(mint)
        nbits = int(shift.max()) + 53
        nlimbs = -(-nbits // self.bits)
        B = self.bits
        limbs = np.empty((nlimbs,) + v.shape, dtype=np.int64)
        for j in range(nlimbs):
            t = shift - B * j
            up = np.clip(t, 0, B)
            low_part = (mag & ((np.int64(1) << (B - up)) - 1)) << up
            down = np.clip(-t, 0, 63)
            high_part = (mag >> down) & ((np.int64(1) << B) - 1)
            part = np.where(t >= B, 0, np.where(t >= 0, low_part, high_part))
            limbs[j] = sign * part
        self.limbs = limbs

    @property
    def nlimbs(self) -> int:
        return self.limbs.shape[0]

    def to_float(self, sums: np.ndarray) -> np.ndarray:
        """Canonical rounding of exact limb sums (shape ``(nlimbs, ...)``)."""
        s = np.array(sums, dtype=np.int64, copy=True)
        B = self.bits
        for j in range(s.shape[0] - 1):
            carry = s[j] >> B
            s[j] -= carry << B
            s[j + 1] += carry
        top = s.shape[0] - 1
        acc = np.ldexp(s[top].astype(np.float64), B * top + self.e0)
        for j in range(top - 1, -1, -1):
            acc = acc + np.ldexp(s[j].astype(np.float64), B * j + self.e0)
        return acc


class RowSpanTables:
    """Prefix sums of exact limbs along the last axis.

    A ball around a grid point is a stack of spans along the last axis, one
    per lattice offset in the remaining axes; each span sum is a difference
    of two prefix entries, so a ball costs O(r/h) lookups in d=2 and O(1) in
    d=1. Results are exact integers, hence bitwise equal to the direct
    stencil sum after canonical rounding.
    """

    def __init__(self, values: np.ndarray, h: float):
        self.exact = ExactField(values)
        self.h = float(h)
        self.shape = self.exact.shape
        self.d = len(self.shape)
        limbs = self.exact.limbs
        zero = np.zeros(limbs.shape[:-1] + (1,), dtype=np.int64)
        self.prefix = np.concatenate([zero, np.cumsum(limbs, axis=-1)], axis=-1)
        self._pad = -1
        self._ext = None

    @classmethod
    def for_function(cls, f: GridFunction, mode: str = "abs") -> "RowSpanTables":
        vals = np.abs(f.values) if mode == "abs" else f.values
        return cls(vals, f.h)

    def _extended(self, pad: int) -> np.ndarray:
        # rows padded with zeros, last axis extended by clamping the prefix
        if pad <= self._pad:
            return self._ext
        n = self.shape[-1]
        cols = np.clip(np.arange(-pad, n + pad + 1), 0, n)
        ext = self.prefix[..., cols]
        widths = [(0, 0)] + [(pad, pad)] * (self.d - 1) + [(0, 0)]
        self._ext = np.pad(ext, widths)
        self._pad = pad
        return self._ext

    def field_sums(self, r: float) -> np.ndarray:
        """Exact ball sums around every grid point, shape ``(nlimbs,) + shape``."""
        lim = stencil_limit(r, self.h)
        offsets, widths = row_spans(lim, self.d)
        pad = int(widths.max()) if self.d == 1 else int(max(widths.max(), np.abs(offsets).max()))
        ext = self._extended(pad)
        n = self.shape[-1]
        acc = np.zeros((self.exact.nlimbs,) + self.shape, dtype=np.int64)
        for o, w in zip(offsets, widths):
            rows = tuple(slice(pad + oi, pad + oi + ni) for oi, ni in zip(o, self.shape[:-1]))
            hi = (slice(None),) + rows + (slice(pad + w + 1, pad + w + 1 + n),)
            lo = (slice(None),) + rows + (slice(pad - w, pad - w + n),)
            acc += ext[hi]
            acc -= ext[lo]
        return acc

    def field_averages(self, r: float) -> np.ndarray:
        count = lattice_count(r, self.h, self.d)
        return self.exact.to_float(self.field_sums(r)) / count

    def sums_at(self, centers: np.ndarray, r: float) -> np.ndarray:
        """Exact ball sums for a batch of grid-index centers ``(n, d)``."""
        centers = np.atleast_2d(np.asarray(centers, dtype=np.int64))
        lim = stencil_limit(r, self.h)
        offsets, widths = row_spans(lim, self.d)
        n_last = self.shape[-1]
        L = self.exact.nlimbs
        acc = np.zeros((L, centers.shape[0]), dtype=np.int64)
        flat = self.prefix.reshape(L, -1, n_last + 1)
        row_shape = self.shape[:-1]
        for o, w in zip(offsets, widths):
            rows = centers[:, :-1] + o
            ok = np.all((rows >= 0) & (rows < np.asarray(row_shape, dtype=np.int64)), axis=1)
            if not ok.any():
                continue
            row_id = np.ravel_multi_index(tuple(rows[ok].T), row_shape) if self.d > 1 \
                else np.zeros(int(ok.sum()), dtype=np.int64)
            c = centers[ok, -1]
            hi = np.clip(c + w + 1, 0, n_last)
            lo = np.clip(c - w, 0, n_last)
            acc[:, ok] += flat[:, row_id, hi] - flat[:, row_id, lo]
        return acc

    def averages_at(self, centers: np.ndarray, r: float) -> np.ndarray:
        count = lattice_count(r, self.h, self.d)
        return self.exact.to_float(self.sums_at(centers, r)) / count


def naive_sums_at(exact: ExactField, centers: np.ndarray, r: float, h: float,
                  chunk: int = 256) -> np.ndarray:
    """Direct stencil sums (no prefix tables) for grid-index centers."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.int64))
    shape = np.asarray(exact.shape, dtype=np.int64)
    d = len(exact.shape)
    lim = stencil_limit(r, h)
    offsets = stencil_offsets(lim, d)
    L = exact.nlimbs
    flat = exact.limbs.reshape(L, -1)
    out = np.zeros((L, centers.shape[0]), dtype=np.int64)
    for start in range(0, centers.shape[0], chunk):
        c = centers[start:start + chunk]
        pts = c[:, None, :] + offsets[None, :, :]
        ok = np.all((pts >= 0) & (pts < shape), axis=-1)
        idx = np.ravel_multi_index(tuple(np.where(ok[..., None], pts, 0).transpose(2, 0, 1)),
                                   tuple(shape))
        vals = flat[:, idx] * ok[None]
        out[:, start:start + chunk] = vals.sum(axis=-1)
    return out


@lru_cache(maxsize=256)
def stencil_offsets(lim: float, d: int) -> np.ndarray:
    """All integer offsets with squared norm ``<= lim``."""
    offsets, widths = row_spans(lim, d)
    rows = []
    for o, w in zip(offsets, widths):
        last = np.arange(-w, w + 1)
        rows.append(np.column_stack([np.tile(o, (last.size, 1)), last]))
    return np.vstack(rows).astype(np.int64)


def offgrid_stencil(center: np.ndarray, lim: float) -> tuple[np.ndarray, int]:
    """Lattice points within ``sqrt(lim)`` of a real center (lattice units)."""
    center = np.asarray(center, dtype=float)
    rad = math.sqrt(lim)
    axes = [np.arange(math.ceil(c - rad), math.floor(c + rad) + 1) for c in center]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, center.size)
    dist2 = ((grid - center) ** 2).sum(axis=1)
    pts = grid[dist2 <= lim]
    return pts.astype(np.int64), int(pts.shape[0])


def exact_ball_sum(exact: ExactField, center: Sequence[float], r: float, h: float) -> tuple[np.ndarray, int]:
    """Exact limb sum and lattice count of a ball with a real center (lattice units)."""
    pts, count = offgrid_stencil(np.asarray(center, dtype=float), stencil_limit(r, h))
    shape = np.asarray(exact.shape)
    ok = np.all((pts >= 0) & (pts < shape), axis=1)
    pts = pts[ok]
    sums = exact.limbs[(slice(None),) + tuple(pts.T)].sum(axis=-1) if pts.size else \
        np.zeros(exact.nlimbs, dtype=np.int64)
    return sums, count


def ball_average(f: GridFunction, ball: BallSpec, mode="abs") -> float:
    """Mean of ``|f|``, ``f`` or a component of ``grad |f|`` over a discrete ball.

    ``mode`` is ``"abs"``, ``"signed"`` or ``("gradient", i)``. The
    denominator is the number of lattice points in the ball, counting points
    outside the box (where the function is zero).
    """
    if mode == "abs":
        vals = np.abs(f.values)
    elif mode == "signed":
        vals = f.values
    elif isinstance(mode, tuple) and mode[0] == "gradient":
        from .calculus import gradient_of_modulus
        vals = gradient_of_modulus(f).components[mode[1]]
    else:
        raise PreconditionError(f"unknown averaging mode {mode!r}")
    center = (np.asarray(ball.center) - np.asarray(f.domain.origin)) / f.h
    exact = ExactField(vals)
    sums, count = exact_ball_sum(exact, center, ball.radius, f.h)
    if count == 0:
        raise EmptyStencilError(f"no lattice point within {ball.radius} of {ball.center}")
    return float(exact.to_float(sums[:, None])[0]) / count


def build_row_span_tables(f: GridFunction, mode: str = "abs") -> RowSpanTables:
    return RowSpanTables.for_function(f, mode)


@dataclass
class AverageProfiles:
    """Lazily computed ball-average fields ``A_k`` for every radius of a grid."""

    tables: RowSpanTables
    rgrid: RadiusGrid
    _cache: dict = field(default_factory=dict)

    @classmethod
    def of(cls, values: np.ndarray, h: float, rgrid: RadiusGrid) -> "AverageProfiles":
        return cls(RowSpanTables(values, h), rgrid)

    def __len__(self) -> int:
        return len(self.rgrid)

    def get(self, k: int) -> np.ndarray:
        a = self._cache.get(k)
        if a is None:
            a = self.tables.field_averages(float(self.rgrid.radii[k]))
            a.flags.writeable = False
            self._cache[k] = a
        return a

    def prefetch(self, ks: Sequence[int], workers: int = 1) -> None:
        todo = [k for k in ks if k not in self._cache]
        if workers <= 1 or len(todo) <= 1:
            for k in todo:
                self.get(k)
            return
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda k: self.tables.field_averages(float(self.rgrid.radii[k])), todo))
        for k, a in zip(todo, results):
            a.flags.writeable = False
            self._cache.setdefault(k, a)


def suffix_max_profile(f: GridFunction, center: Sequence[int], alpha: float,
                       rgrid: RadiusGrid, tables: RowSpanTables | None = None) -> np.ndarray:
    """``H[k] = max_{k' >= k} r_k'^alpha * avg(|f|, B(center, r_k'))``.

    One backward sweep over the radius grid; the result is nonincreasing.
    """
    d = f.d
    if not 0 < alpha < d:
        from .errors import InvalidAlphaError
        raise InvalidAlphaError(f"alpha must lie in (0, {d})")
    tables = tables or RowSpanTables.for_function(f)
    c = np.asarray(center, dtype=np.int64)[None, :]
    vals = np.array([tables.averages_at(c, float(r))[0] for r in rgrid.radii])
    prof = radius_weights(rgrid, alpha) * vals
    return np.maximum.accumulate(prof[::-1])[::-1]
