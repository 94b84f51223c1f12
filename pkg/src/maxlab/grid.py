"""Uniform grids, sampled functions, region masks and the MFG1 file format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionOverflowError,
    GridFormatError,
    MalformedHeaderError,
    PreconditionError,
    SupportOverflowError,
    TruncatedPayloadError,
)

MAGIC = b"MFG1"
MAX_DIM = 8
# samples below this (relative to the peak) are cut to exact zero
TRUNCATION_LEVEL = 1e-12


@dataclass(frozen=True)
class Domain:
    """Uniform isotropic grid: index ``i`` sits at ``origin + i*h``."""

    d: int
    dims: tuple[int, ...]
    h: float
    origin: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "h", float(self.h))
        if self.d < 1:
            raise PreconditionError("dimension must be >= 1")
        if self.d > MAX_DIM:
            raise DimensionOverflowError(f"d={self.d} exceeds {MAX_DIM}")
        if len(self.dims) != self.d or len(self.origin) != self.d:
            raise PreconditionError("dims and origin must have d entries")
        if any(n < 2 for n in self.dims):
            raise PreconditionError("every axis needs at least 2 points")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise PreconditionError("grid spacing must be positive")

    @classmethod
    def from_box(cls, lo: Sequence[float] | float, hi: Sequence[float] | float,
                 h: float, d: int | None = None) -> "Domain":
        """Grid covering ``[lo, hi]`` per axis; ``hi - lo`` should be a multiple of h."""
        if np.isscalar(lo):
            if d is None:
                raise PreconditionError("scalar box bounds need an explicit d")
            lo = (lo,) * d
            hi = (hi,) * d
        dims = tuple(int(round((b - a) / h)) + 1 for a, b in zip(lo, hi))
        return cls(len(dims), dims, h, tuple(lo))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.dims

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + (n - 1) * self.h for o, n in zip(self.origin, self.dims))

    @property
    def side_lengths(self) -> tuple[float, ...]:
        return tuple((n - 1) * self.h for n in self.dims)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.dims[axis]) * self.h

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis_coords(i) for i in range(self.d)], indexing="ij")

    def point(self, index: Sequence[int]) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * self.h

    def index_of(self, point: Sequence[float]) -> tuple[int, ...]:
        """Nearest grid index (may lie outside the box)."""
        rel = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.h
        return tuple(int(v) for v in np.rint(rel))

    def contains_index(self, index: Sequence[int]) -> bool:
        return all(0 <= i < n for i, n in zip(index, self.dims))

    def refine(self, factor: int = 2) -> "Domain":
        """Same box, spacing divided by ``factor``."""
        dims = tuple((n - 1) * factor + 1 for n in self.dims)
        return Domain(self.d, dims, self.h / factor, self.origin)

    def dilate(self, lam: float) -> "Domain":
        """Grid for ``x -> f(lam * x)``: spacing and origin divided by lam."""
        return Domain(self.d, self.dims, self.h / lam, tuple(o / lam for o in self.origin))


@dataclass(frozen=True)
class GridFunction:
    """Samples of a compactly supported function, zero outside the box."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if vals.size != self.domain.size:
            raise PreconditionError(
                f"expected {self.domain.size} samples, got {vals.size}")
        vals = vals.reshape(self.domain.dims)
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("samples must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def h(self) -> float:
        return self.domain.h

    def at(self, index: Sequence[int]) -> float:
        """Sample at an integer index; exactly 0 outside the box."""
        if not self.domain.contains_index(index):
            return 0.0
        return float(self.values[tuple(index)])

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.domain, values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _same_domain(self, other)
        return GridFunction(self.domain, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _same_domain(self, other)
        return GridFunction(self.domain, self.values - other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.domain, self.values * c)

    __rmul__ = __mul__

    def __abs__(self) -> "GridFunction":
        return GridFunction(self.domain, np.abs(self.values))

    def is_zero(self) -> bool:
        return not np.any(self.values)


def _same_domain(a: GridFunction, b: GridFunction) -> None:
    if a.domain != b.domain:
        raise PreconditionError("grid functions live on different domains")


@dataclass(frozen=True)
class RegionMask:
    domain: Domain
    flags: np.ndarray

    def __post_init__(self):
        flags = np.array(self.flags, dtype=bool, copy=True).reshape(self.domain.dims)
        flags.flags.writeable = False
        object.__setattr__(self, "flags", flags)

    @classmethod
    def box(cls, domain: Domain, lo: Sequence[float], hi: Sequence[float]) -> "RegionMask":
        grids = domain.mesh()
        flags = np.ones(domain.dims, dtype=bool)
        for axis in range(domain.d):
            flags &= (grids[axis] >= lo[axis] - 1e-12) & (grids[axis] <= hi[axis] + 1e-12)
        return cls(domain, flags)

    @classmethod
    def full(cls, domain: Domain) -> "RegionMask":
        return cls(domain, np.ones(domain.dims, dtype=bool))

    @classmethod
    def points(cls, domain: Domain, indices: Sequence[Sequence[int]]) -> "RegionMask":
        flags = np.zeros(domain.dims, dtype=bool)
        for idx in indices:
            flags[tuple(idx)] = True
        return cls(domain, flags)

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    @property
    def measure(self) -> float:
        return self.count * self.domain.cell_volume

    def complement(self) -> "RegionMask":
        return RegionMask(self.domain, ~self.flags)

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.domain, self.flags & other.flags)

    def __or__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.domain, self.flags | other.flags)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.argwhere(self.flags)
        if idx.size == 0:
            raise PreconditionError("empty mask has no bounding box")
        return self.domain.point(idx.min(axis=0)), self.domain.point(idx.max(axis=0))

    def concentric(self, c: float) -> "RegionMask":
        """The set dilated by ``c`` about the centre of its bounding box."""
        lo, hi = self.bounding_box()
        centre = (lo + hi) / 2
        grids = self.domain.mesh()
        idx = []
        inside = np.ones(self.domain.dims, dtype=bool)
        for axis in range(self.domain.d):
            y = centre[axis] + (grids[axis] - centre[axis]) / c
            k = np.rint((y - self.domain.origin[axis]) / self.domain.h).astype(np.int64)
            inside &= (k >= 0) & (k < self.domain.dims[axis])
            idx.append(np.clip(k, 0, self.domain.dims[axis] - 1))
        return RegionMask(self.domain, inside & self.flags[tuple(idx)])

    def fits_inside_box(self) -> bool:
        """True when the mask does not touch the outermost grid layer."""
        f = self.flags
        for axis in range(self.domain.d):
            if f.take(0, axis=axis).any() or f.take(-1, axis=axis).any():
                return False
        return True


# -- test functions ---------------------------------------------------------

def _gauss_radius(sigma: float) -> float:
    return sigma * math.sqrt(2.0 * math.log(1.0 / TRUNCATION_LEVEL))


def _radial(domain: Domain, center) -> np.ndarray:
    grids = domain.mesh()
    c = np.broadcast_to(np.asarray(center, dtype=float), (domain.d,))
    r2 = np.zeros(domain.dims)
    for axis in range(domain.d):
        r2 = r2 + (grids[axis] - c[axis]) ** 2
    return r2


def _gaussian(domain, center, sigma, amplitude):
    g = np.exp(-_radial(domain, center) / (2.0 * sigma ** 2))
    g[g < TRUNCATION_LEVEL] = 0.0
    return amplitude * g


def _check_fit(domain: Domain, centers, radius: float) -> None:
    lo = np.asarray(domain.origin)
    hi = np.asarray(domain.upper)
    margin = 0.25 * (hi - lo)
    for c in centers:
        c = np.broadcast_to(np.asarray(c, dtype=float), (domain.d,))
        if np.any(c - radius < lo + margin - 1e-12) or np.any(c + radius > hi - margin + 1e-12):
            raise SupportOverflowError(
                f"support of radius {radius:g} around {tuple(c)} leaves less than "
                "25% margin in the box")


def make_test_function(kind: str, domain: Domain, **params) -> GridFunction:
    """Sample one of the closed-form test functions on ``domain``.

    Kinds and parameters (defaults in brackets):

    * ``triangle``: ``max(0, height*(1 - |x-center|/halfwidth))``
      [center 0, halfwidth 1, height 1]; a unit-area hat in d=1.
    * ``indicator_ball``: characteristic function of the closed ball
      [center 0, radius 1].
    * ``gaussian_bump``: ``amplitude*exp(-|x-center|^2 / (2 sigma^2))`` cut to
      zero below 1e-12 of its peak [center 0, sigma 0.25, amplitude 1].
    * ``two_bumps``: two gaussian bumps at ``center -/+ separation*e_1``
      with signs ``signs`` [sigma 0.25, separation 0.5, signs (1, 1)].
    """
    center = params.get("center", 0.0)
    if kind == "triangle":
        a = float(params.get("halfwidth", 1.0))
        height = float(params.get("height", 1.0))
        _check_fit(domain, [center], a)
        vals = height * np.maximum(0.0, 1.0 - np.sqrt(_radial(domain, center)) / a)
    elif kind == "indicator_ball":
        radius = float(params.get("radius", 1.0))
        _check_fit(domain, [center], radius)
        vals = (_radial(domain, center) <= radius ** 2 * (1 + 1e-12)).astype(float)
    elif kind == "gaussian_bump":
        sigma = float(params.get("sigma", 0.25))
        _check_fit(domain, [center], _gauss_radius(sigma))
        vals = _gaussian(domain, center, sigma, float(params.get("amplitude", 1.0)))
    elif kind == "two_bumps":
        sigma = float(params.get("sigma", 0.25))
        sep = float(params.get("separation", 0.5))
        signs = params.get("signs", (1.0, 1.0))
        c = np.broadcast_to(np.asarray(center, dtype=float), (domain.d,)).copy()
        e1 = np.zeros(domain.d)
        e1[0] = sep
        centers = [c - e1, c + e1]
        _check_fit(domain, centers, _gauss_radius(sigma))
        vals = sum(s * _gaussian(domain, cc, sigma, 1.0) for s, cc in zip(signs, centers))
    else:
        raise PreconditionError(f"unknown test function kind {kind!r}")
    return GridFunction(domain, vals)


# -- file I/O ---------------------------------------------------------------

def write_grid(f: GridFunction, path: str | Path) -> None:
    """Write ``f`` in the little-endian binary MFG1 format."""
    dom = f.domain
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", dom.d))
        fh.write(struct.pack(f"<{dom.d}Q", *dom.dims))
        fh.write(struct.pack("<d", dom.h))
        fh.write(struct.pack(f"<{dom.d}d", *dom.origin))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def write_grid_csv(f: GridFunction, path: str | Path) -> None:
    dom = f.domain
    header = "# d={} dims={} h={!r} origin={}\n".format(
        dom.d, ",".join(map(str, dom.dims)), dom.h, ",".join(repr(o) for o in dom.origin))
    with open(path, "w") as fh:
        fh.write(header)
        for v in f.values.ravel().tolist():
            fh.write(f"{v!r}\n")


def read_grid(path: str | Path) -> GridFunction:
    """Read an MFG1 binary file or its CSV variant (auto-detected)."""
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        return _decode_binary(data)
    if data[:1] == b"#":
        return _decode_csv(data.decode("ascii", errors="replace"))
    raise MalformedHeaderError("missing MFG1 magic or CSV header")


def _decode_binary(data: bytes) -> GridFunction:
    pos = 4
    if len(data) < pos + 4:
        raise MalformedHeaderError("header ends before the dimension field")
    (d,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if d > MAX_DIM:
        raise DimensionOverflowError(f"d={d} exceeds {MAX_DIM}")
    if d < 1:
        raise MalformedHeaderError("dimension must be >= 1")
    need = 8 * d + 8 + 8 * d
    if len(data) < pos + need:
        raise MalformedHeaderError("header truncated")
    dims = struct.unpack_from(f"<{d}Q", data, pos)
    pos += 8 * d
    (h,) = struct.unpack_from("<d", data, pos)
    pos += 8
    origin = struct.unpack_from(f"<{d}d", data, pos)
    pos += 8 * d
    try:
        domain = Domain(d, dims, h, origin)
    except PreconditionError as exc:
        raise MalformedHeaderError(str(exc)) from exc
    n = domain.size
    if len(data) - pos < 8 * n:
        raise TruncatedPayloadError(f"expected {n} values, found {(len(data) - pos) // 8}")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return GridFunction(domain, values.reshape(domain.dims))


def _decode_csv(text: str) -> GridFunction:
    lines = text.splitlines()
    fields = {}
    for token in lines[0].lstrip("#").split():
        if "=" in token:
            key, val = token.split("=", 1)
            fields[key] = val
    try:
        d = int(fields["d"])
        dims = [int(v) for v in fields["dims"].split(",")]
        h = float(fields["h"])
        origin = [float(v) for v in fields["origin"].split(",")]
    except (KeyError, ValueError) as exc:
        raise MalformedHeaderError(f"bad CSV header: {lines[0]!r}") from exc
    if d > MAX_DIM:
        raise DimensionOverflowError(f"d={d} exceeds {MAX_DIM}")
    try:
        domain = Domain(d, dims, h, origin)
    except PreconditionError as exc:
        raise MalformedHeaderError(str(exc)) from exc
    body = [ln for ln in lines[1:] if ln.strip() and not ln.startswith("#")]
    if len(body) < domain.size:
        raise TruncatedPayloadError(f"expected {domain.size} values, found {len(body)}")
    try:
        values = np.array([float(v) for v in body[:domain.size]])
    except ValueError as exc:
        raise GridFormatError(f"bad CSV value: {exc}") from exc
    return GridFunction(domain, values.reshape(domain.dims))
