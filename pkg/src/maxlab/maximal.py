"""Centered, non-centered and truncated fractional maximal functions.

For every radius ``r_k`` of a :class:`RadiusGrid` the engine builds a
*candidate field* ``C_k``: the best value ``r_k^alpha * avg(|f|, B)`` over
the balls of radius ``r_k`` admissible at each grid point. For the centered
operator that is the centered ball itself; for the non-centered operator it
is a max-dilation of the centered field by the disc of radius ``r_k``
(every grid center within ``r_k`` of the point). The truncated maximal
function is then ``max_{k : r_k >= delta} C_k``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .balls import (
    AverageProfiles,
    BallSpec,
    RadiusGrid,
    default_radius_grid,
    lattice_count,
    radius_weights,
    required_rmax,
    row_spans,
    stencil_limit,
)
from .errors import (
    InsufficientRadiusGridError,
    InvalidAlphaError,
    MissingGoodBallError,
    PreconditionError,
)
from .grid import GridFunction

TIE_TOL = 1e-9
KINDS = ("centered", "noncentered")


@dataclass(frozen=True)
class FracParams:
    alpha: float
    delta: float = 0.0
    operator_kind: str = "centered"

    def validate(self, d: int) -> None:
        if not 0 < self.alpha < d:
            raise InvalidAlphaError(f"alpha={self.alpha} outside (0, {d})")
        if self.delta < 0:
            raise PreconditionError("delta must be >= 0")
        if self.operator_kind not in KINDS:
            raise PreconditionError(f"unknown operator kind {self.operator_kind!r}")

    def exponent(self, d: int) -> float:
        """Sobolev-conjugate exponent ``d / (d - alpha)``."""
        return d / (d - self.alpha)


@dataclass(frozen=True)
class GoodBallRecord:
    ball: BallSpec
    center_index: tuple[int, ...]
    value: float
    tie_count: int
    min_tie_radius: float
    max_tie_radius: float


@dataclass
class MaximalField:
    """Maximal function samples plus the recorded good ball of every point.

    Good-ball data is stored as arrays over the grid: ``ball_center`` holds
    grid indices (last axis of length d), ``ball_k`` the radius index.
    ``tie_quotient`` is ``max value_B / r_B`` over the tie set and is only
    filled for untruncated fields.
    """

    params: FracParams
    values: GridFunction
    rgrid: RadiusGrid
    ball_center: np.ndarray | None = None
    ball_k: np.ndarray | None = None
    tie_count: np.ndarray | None = None
    tie_kmin: np.ndarray | None = None
    tie_kmax: np.ndarray | None = None
    tie_quotient: np.ndarray | None = None
    radii_evaluated: int = 0

    @property
    def domain(self):
        return self.values.domain

    @property
    def tracked(self) -> bool:
        return self.ball_k is not None

    def _require_balls(self) -> None:
        if not self.tracked:
            raise MissingGoodBallError("field was computed without good-ball tracking")

    @property
    def ball_radius(self) -> np.ndarray:
        self._require_balls()
        return self.rgrid.radii[self.ball_k]

    @property
    def min_tie_radius(self) -> np.ndarray:
        self._require_balls()
        return self.rgrid.radii[self.tie_kmin]

    @property
    def max_tie_radius(self) -> np.ndarray:
        self._require_balls()
        return self.rgrid.radii[self.tie_kmax]

    def ball_center_coords(self) -> np.ndarray:
        self._require_balls()
        dom = self.domain
        return np.asarray(dom.origin) + self.ball_center * dom.h

    def good_ball(self, index: Sequence[int]) -> GoodBallRecord:
        self._require_balls()
        idx = tuple(index)
        center = tuple(int(c) for c in self.ball_center[idx])
        return GoodBallRecord(
            ball=BallSpec(self.domain.point(center), float(self.ball_radius[idx])),
            center_index=center,
            value=float(self.values.values[idx]),
            tie_count=int(self.tie_count[idx]),
            min_tie_radius=float(self.min_tie_radius[idx]),
            max_tie_radius=float(self.max_tie_radius[idx]),
        )


class MaximalEngine:
    """Shared per-radius machinery for one function and one radius grid.

    Ball-average fields are cached, so several exponents, truncation radii
    and both operator kinds can be evaluated for the price of one pass.
    """

    def __init__(self, f: GridFunction, rgrid: RadiusGrid | None = None, workers: int = 1,
                 check_rgrid: bool = True):
        self.f = f
        self.rgrid = rgrid if rgrid is not None else default_radius_grid(f)
        if check_rgrid and not f.is_zero():
            need = required_rmax(f) - 2 * f.h
            if self.rgrid.r_max < need * (1 - 1e-12):
                raise InsufficientRadiusGridError(
                    f"largest radius {self.rgrid.r_max:.6g} < required {need:.6g}")
        self.workers = workers
        self.profiles = AverageProfiles.of(np.abs(f.values), f.h, self.rgrid)
        self.total = float(np.abs(f.values).sum()) * (1 + 1e-12)
        self.counts = np.array([lattice_count(float(r), f.h, f.d) for r in self.rgrid.radii])

    # candidate fields ------------------------------------------------------

    def centered_values(self, k: int, alpha: float) -> np.ndarray:
        return radius_weights(self.rgrid, alpha)[k] * self.profiles.get(k)

    def candidates(self, k: int, alpha: float, kind: str) -> np.ndarray:
        v = self.centered_values(k, alpha)
        if kind == "centered":
            return v
        return disc_dilate(v, float(self.rgrid.radii[k]), self.f.h)

    def bound_suffix(self, alpha: float) -> np.ndarray:
        """``U[k]``: upper bound on every candidate value with radius index >= k."""
        b = radius_weights(self.rgrid, alpha) * self.total / self.counts
        return np.maximum.accumulate(b[::-1])[::-1]

    # evaluation ------------------------------------------------------------

    def family(self, alpha: float, deltas: Sequence[float], kind: str = "centered",
               prune: bool = True, track: bool = True) -> list[MaximalField]:
        d = self.f.d
        for delta in deltas:
            FracParams(alpha, delta, kind).validate(d)
        if list(deltas) != sorted(deltas):
            raise PreconditionError("deltas must be sorted ascending")
        K = len(self.rgrid)
        kdel = [self.rgrid.first_at_least(delta) for delta in deltas]
        if max(kdel) >= K:
            raise InsufficientRadiusGridError("truncation radius exceeds the radius grid")
        k_top = max(kdel)
        bound = self.bound_suffix(alpha)

        cands: list[np.ndarray] = []
        best_top = None
        for k in range(K):
            if prune and k > k_top and best_top is not None:
                floor = float(best_top.min()) * (1 - TIE_TOL)
                if bound[k] < floor:
                    break
            if self.workers > 1:
                # radii are independent; fetch the next batch in parallel
                self.profiles.prefetch(range(k, min(K, k + self.workers)), self.workers)
            c = self.candidates(k, alpha, kind)
            cands.append(c)
            if k >= k_top:
                best_top = c.copy() if best_top is None else np.maximum(best_top, c)
        stack = np.stack(cands)
        fields = []
        for delta, k0 in zip(deltas, kdel):
            fields.append(self._summarise(stack, k0, alpha, delta, kind, track))
        return fields

    def _summarise(self, stack, k0, alpha, delta, kind, track) -> MaximalField:
        sub = stack[k0:]
        best = sub.max(axis=0)
        params = FracParams(alpha, delta, kind)
        values = GridFunction(self.f.domain, best)
        field = MaximalField(params, values, self.rgrid, radii_evaluated=stack.shape[0])
        if not track:
            return field
        argk = k0 + np.argmax(sub == best, axis=0)
        thr = np.where(best > 0, best * (1 - TIE_TOL), 0.0)
        tied = sub >= thr
        field.ball_k = argk
        field.tie_kmin = k0 + np.argmax(tied, axis=0)
        field.tie_kmax = k0 + (sub.shape[0] - 1 - np.argmax(tied[::-1], axis=0))
        if delta == 0:
            radii = self.rgrid.radii[k0:k0 + sub.shape[0]]
            quot = np.where(tied, sub / radii.reshape((-1,) + (1,) * self.f.d), -np.inf)
            field.tie_quotient = quot.max(axis=0)
        if kind == "centered":
            field.tie_count = tied.sum(axis=0)
            field.ball_center = np.stack(
                np.meshgrid(*[np.arange(n) for n in self.f.domain.dims], indexing="ij"), axis=-1)
        else:
            centers, counts = self._noncentered_balls(stack, k0, alpha, best, argk, thr, tied)
            field.ball_center = centers
            field.tie_count = counts
        return field

    def _noncentered_balls(self, stack, k0, alpha, best, argk, thr, tied):
        shape = self.f.domain.dims
        d = self.f.d
        centers = np.zeros(shape + (d,), dtype=np.int64)
        counts = np.zeros(shape, dtype=np.int64)
        grid_idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1)
        for k in range(k0, stack.shape[0]):
            in_tie = tied[k - k0]
            is_arg = argk == k
            if not (in_tie.any() or is_arg.any()):
                continue
            v = self.centered_values(k, alpha)
            scan = _DiscScan(v, float(self.rgrid.radii[k]), self.f.h)
            if is_arg.any():
                pts = grid_idx[is_arg]
                centers[is_arg] = scan.first_attaining(pts, best[is_arg])
            if in_tie.any():
                pts = grid_idx[in_tie]
                counts[in_tie] += scan.count_at_least(pts, thr[in_tie])
        return centers, counts

    def centered(self, params: FracParams, prune: bool = True, track: bool = True) -> MaximalField:
        return self.family(params.alpha, [params.delta], "centered", prune, track)[0]

    def noncentered(self, params: FracParams, prune: bool = True, track: bool = True) -> MaximalField:
        return self.family(params.alpha, [params.delta], "noncentered", prune, track)[0]


def disc_dilate(v: np.ndarray, r: float, h: float) -> np.ndarray:
    """``out[x] = max v[z]`` over grid points z with ``|x - z| <= r`` (box only)."""
    d = v.ndim
    offsets, widths = row_spans(stencil_limit(r, h), d)
    if d == 1:
        return ndimage.maximum_filter1d(v, 2 * int(widths[0]) + 1, mode="constant", cval=-np.inf)
    pad = int(np.abs(offsets).max()) if offsets.size else 0
    rowmax = {}
    out = np.full(v.shape, -np.inf)
    for o, w in zip(offsets, widths):
        w = int(w)
        rm = rowmax.get(w)
        if rm is None:
            rm = ndimage.maximum_filter1d(v, 2 * w + 1, axis=-1, mode="constant", cval=-np.inf)
            rm = np.pad(rm, [(pad, pad)] * (d - 1) + [(0, 0)], constant_values=-np.inf)
            rowmax[w] = rm
        sl = tuple(slice(pad + oi, pad + oi + ni) for oi, ni in zip(o, v.shape[:-1]))
        np.maximum(out, rm[sl], out=out)
    return out


class _DiscScan:
    """Per-point searches inside the disc of one radius (non-centered balls)."""

    def __init__(self, v: np.ndarray, r: float, h: float):
        self.v = v
        self.offsets, self.widths = row_spans(stencil_limit(r, h), v.ndim)
        self.pad = int(self.widths.max())
        self._rowmax = {}
        self.shape = np.asarray(v.shape, dtype=np.int64)

    def rowmax(self, w: int) -> np.ndarray:
        rm = self._rowmax.get(w)
        if rm is None:
            rm = ndimage.maximum_filter1d(self.v, 2 * w + 1, axis=-1, mode="constant", cval=-np.inf)
            self._rowmax[w] = rm
        return rm

    def _rows(self, pts, o):
        rows = pts[:, :-1] + o
        ok = np.all((rows >= 0) & (rows < self.shape[:-1]), axis=1)
        return rows, ok

    def _window(self, row_vals_idx, c, w, n_last):
        # columns c-w..c+w of the selected rows; out-of-box entries read as -inf
        span = np.arange(-w, w + 1)
        cols = c[:, None] + span[None, :]
        inside = (cols >= 0) & (cols < n_last)
        vals = self.v.reshape(-1, n_last)[row_vals_idx[:, None], np.clip(cols, 0, n_last - 1)]
        return np.where(inside, vals, -np.inf), cols

    def _row_index(self, rows):
        if rows.shape[1] == 0:
            return np.zeros(rows.shape[0], dtype=np.int64)
        return np.ravel_multi_index(tuple(rows.T), tuple(self.shape[:-1]))

    def first_attaining(self, pts: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Lexicographically smallest center in the disc whose value equals target."""
        n = pts.shape[0]
        out = np.full((n, pts.shape[1]), -1, dtype=np.int64)
        open_ = np.ones(n, dtype=bool)
        n_last = int(self.shape[-1])
        for o, w in zip(self.offsets, self.widths):
            if not open_.any():
                break
            w = int(w)
            rows, ok = self._rows(pts, o)
            sel = open_ & ok
            if not sel.any():
                continue
            ridx = self._row_index(rows[sel])
            rm = self.rowmax(w).reshape(-1, n_last)[ridx, pts[sel, -1]]
            hit = rm == target[sel]
            if not hit.any():
                continue
            which = np.flatnonzero(sel)[hit]
            for start in range(0, which.size, 4096):
                part = which[start:start + 4096]
                vals, cols = self._window(self._row_index(rows[part]), pts[part, -1], w, n_last)
                j = np.argmax(vals == target[part][:, None], axis=1)
                out[part, :-1] = rows[part]
                out[part, -1] = cols[np.arange(part.size), j]
            open_[which] = False
        return out

    def count_at_least(self, pts: np.ndarray, thr: np.ndarray) -> np.ndarray:
        """Number of centers in the disc (inside the box) with value >= thr."""
        n = pts.shape[0]
        counts = np.zeros(n, dtype=np.int64)
        n_last = int(self.shape[-1])
        for o, w in zip(self.offsets, self.widths):
            w = int(w)
            rows, ok = self._rows(pts, o)
            if not ok.any():
                continue
            ridx = self._row_index(rows[ok])
            rm = self.rowmax(w).reshape(-1, n_last)[ridx, pts[ok, -1]]
            hit = rm >= thr[ok]
            if not hit.any():
                continue
            which = np.flatnonzero(ok)[hit]
            for start in range(0, which.size, 4096):
                part = which[start:start + 4096]
                vals, _ = self._window(self._row_index(rows[part]), pts[part, -1], w, n_last)
                counts[part] += (vals >= thr[part][:, None]).sum(axis=1)
        return counts


# -- public operations ------------------------------------------------------

def centered_maximal(f: GridFunction, params: FracParams, rgrid: RadiusGrid | None = None,
                     prune: bool = True, workers: int = 1) -> MaximalField:
    params.validate(f.d)
    if params.operator_kind != "centered":
        raise PreconditionError("centered_maximal needs operator_kind='centered'")
    return MaximalEngine(f, rgrid, workers).centered(params, prune)


def noncentered_maximal(f: GridFunction, params: FracParams, rgrid: RadiusGrid | None = None,
                        prune: bool = True, track: bool = True, workers: int = 1) -> MaximalField:
    params.validate(f.d)
    if params.operator_kind != "noncentered":
        raise PreconditionError("noncentered_maximal needs operator_kind='noncentered'")
    return MaximalEngine(f, rgrid, workers).noncentered(params, prune, track)


def maximal(f: GridFunction, params: FracParams, rgrid: RadiusGrid | None = None,
            **kw) -> MaximalField:
    """Dispatch on ``params.operator_kind``."""
    if params.operator_kind == "noncentered":
        return noncentered_maximal(f, params, rgrid, **kw)
    kw.pop("track", None)
    return centered_maximal(f, params, rgrid, **kw)


def truncated_family(f: GridFunction, params: FracParams, rgrid: RadiusGrid | None,
                     deltas: Sequence[float], prune: bool = True, workers: int = 1,
                     engine: MaximalEngine | None = None) -> list[MaximalField]:
    """One field per truncation radius, all from a single pass over the radii."""
    engine = engine or MaximalEngine(f, rgrid, workers)
    return engine.family(params.alpha, list(deltas), params.operator_kind, prune)


def refined_maximal_minus1(f: GridFunction, field: MaximalField) -> GridFunction:
    """``max r_B^(alpha-1) avg_B |f|`` over the recorded tie set of good balls."""
    if field.params.delta != 0:
        raise PreconditionError("refined operator needs an untruncated field")
    if field.tie_quotient is None:
        raise MissingGoodBallError("field carries no tie-set data")
    if field.domain != f.domain:
        raise PreconditionError("field and function live on different grids")
    return GridFunction(f.domain, field.tie_quotient)


# -- good-ball sidecar ------------------------------------------------------

SIDECAR_MAGIC = b"MFB1"


def _sidecar_dtype(d: int) -> np.dtype:
    return np.dtype([
        ("center", "<i8", (d,)),
        ("radius", "<f8"),
        ("value", "<f8"),
        ("tie_count", "<i8"),
        ("min_tie_radius", "<f8"),
        ("max_tie_radius", "<f8"),
    ])


def write_good_balls(field: MaximalField, path: str | Path) -> None:
    """Little-endian table: magic, uint32 d, uint64 count, then one record per point."""
    field._require_balls()
    d = field.domain.d
    n = field.domain.size
    rec = np.zeros(n, dtype=_sidecar_dtype(d))
    rec["center"] = field.ball_center.reshape(n, d)
    rec["radius"] = field.ball_radius.ravel()
    rec["value"] = field.values.values.ravel()
    rec["tie_count"] = field.tie_count.ravel()
    rec["min_tie_radius"] = field.min_tie_radius.ravel()
    rec["max_tie_radius"] = field.max_tie_radius.ravel()
    with open(path, "wb") as fh:
        fh.write(SIDECAR_MAGIC)
        fh.write(struct.pack("<IQ", d, n))
        fh.write(rec.tobytes())


def read_good_balls(path: str | Path) -> np.ndarray:
    from .errors import MalformedHeaderError, TruncatedPayloadError
    data = Path(path).read_bytes()
    if data[:4] != SIDECAR_MAGIC or len(data) < 16:
        raise MalformedHeaderError("not a good-ball sidecar")
    d, n = struct.unpack_from("<IQ", data, 4)
    dt = _sidecar_dtype(d)
    if len(data) - 16 < n * dt.itemsize:
        raise TruncatedPayloadError("sidecar payload truncated")
    return np.frombuffer(data, dtype=dt, count=n, offset=16).copy()
