"""Perturbation experiments around the W^{1,1} continuity of the gradient map.

A run perturbs a function ``f`` by a sequence ``f_j -> f`` and measures
``e_j = ||grad M f_j - grad M f||_{L^q(K)}`` with ``q = d/(d-alpha)``, along
with the pieces of the standard proof: the truncation error in ``delta``,
the three-term triangle split, the tail outside ``3K``, the modulus gaps,
a mass threshold ``lambda0`` and the small-radius sets ``E`` and ``D``.

Continuity comes with no rate, so every decay statement is a ratio between
the last and first entry, relaxed by the self-discretization floor
``tau_floor`` (the gradient discrepancy between resolutions ``h`` and
``h/2``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .balls import RadiusGrid, required_rmax, unit_ball_volume
from .calculus import gradient, lq_norm, w11_norm
from .errors import (
    BoxTooSmallError,
    MarginOverflowError,
    NoQualifyingBallError,
    PreconditionError,
)
from .grid import GridFunction, RegionMask
from .maximal import FracParams, MaximalEngine, MaximalField
from .verifier import tau_ineq

KINDS = ("additive_bump", "mollify", "translate")
DEFAULT_J = (1, 2, 4, 8, 16, 32)


@dataclass(frozen=True)
class SequenceSpec:
    kind: str
    j_values: tuple[int, ...] = DEFAULT_J
    # physical length behind the kernel width 1/j; translation uses half of it
    length_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown sequence kind {self.kind!r}")
        if list(self.j_values) != sorted(set(self.j_values)) or min(self.j_values) < 1:
            raise PreconditionError("j values must be increasing positive integers")


def unit_bump(f: GridFunction, length_scale: float) -> GridFunction:
    """Gaussian with unit W^{1,1} norm, off-center from the box middle by ``length_scale/4``."""
    dom = f.domain
    mid = (np.asarray(dom.origin) + np.asarray(dom.upper)) / 2
    mid[0] += length_scale / 4
    sigma = length_scale / 8
    r2 = sum((g - c) ** 2 for g, c in zip(dom.mesh(), mid))
    vals = np.exp(-r2 / (2 * sigma ** 2))
    vals[vals < 1e-12] = 0.0
    g = GridFunction(dom, vals)
    return g * (1.0 / w11_norm(g))


def make_sequence(f: GridFunction, spec: SequenceSpec) -> list[GridFunction]:
    ell = spec.length_scale
    h = f.h
    out = []
    if spec.kind == "additive_bump":
        g = unit_bump(f, ell)
        return [f + g * (1.0 / j) for j in spec.j_values]
    for j in spec.j_values:
        if spec.kind == "mollify":
            sigma_px = ell / j / h
            vals = ndimage.gaussian_filter(f.values, sigma_px, mode="constant", cval=0.0, truncate=6.0)
            out.append(f.with_values(vals))
        else:
            shift = ell / (2 * j) / h
            lost = _mass_beyond(f.values, shift)
            if lost > 0:
                raise MarginOverflowError(f"shift {ell / (2 * j):g} pushes mass out of the box")
            if abs(shift - round(shift)) < 1e-9:
                s = int(round(shift))
                vals = np.zeros_like(f.values)
                vals[s:] = f.values[:f.values.shape[0] - s]
            else:
                shifts = [shift] + [0.0] * (f.d - 1)
                vals = ndimage.shift(f.values, shifts, order=3, mode="constant", cval=0.0)
            out.append(f.with_values(vals))
    return out


def _mass_beyond(values: np.ndarray, shift: float) -> float:
    n = values.shape[0]
    cut = max(0, n - int(math.ceil(shift)))
    return float(np.abs(values[cut:]).sum())


# -- regions and floors ----------------------------------------------------

def default_K(f: GridFunction, level: float = 1e-3, inflate: float = 0.10) -> RegionMask:
    """Bounding box of ``|f| > level * max|f|`` grown by ``inflate`` of its side lengths."""
    a = np.abs(f.values)
    if not a.any():
        raise PreconditionError("K is undefined for the zero function")
    idx = np.argwhere(a > level * a.max())
    lo = np.asarray(f.domain.origin) + idx.min(axis=0) * f.h
    hi = np.asarray(f.domain.origin) + idx.max(axis=0) * f.h
    pad = inflate * (hi - lo) / 2 + f.h / 2
    return RegionMask.box(f.domain, lo - pad, hi + pad)


def triple_K(K: RegionMask) -> RegionMask:
    big = K.concentric(3.0)
    if not big.fits_inside_box():
        raise BoxTooSmallError("3K does not fit inside the box")
    return big


def grad_diff_norm(a: GridFunction, b: GridFunction, q: float, mask: RegionMask | None) -> float:
    return lq_norm(gradient(a) - gradient(b), q, mask)


def tau_floor(coarse: GridFunction, fine: GridFunction, mask: RegionMask | None, q: float) -> float:
    """``||grad u_h - grad u_{h/2}||_q`` on the coarse points (``u`` sampled at both spacings)."""
    gc = gradient(coarse).components
    ratio = coarse.h / fine.h
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-9:
        raise PreconditionError("fine spacing must divide the coarse spacing")
    sl = tuple(slice(0, None, step) for _ in range(coarse.d))
    gf = [c[sl] for c in gradient(fine).components]
    if gf[0].shape != gc[0].shape:
        raise PreconditionError("fine grid does not nest the coarse grid")
    from .calculus import GradientField
    diff = GradientField(coarse.domain, tuple(a - b for a, b in zip(gc, gf)))
    return lq_norm(diff, q, mask)


# -- runs ------------------------------------------------------------------

@dataclass
class ContinuityRun:
    params: FracParams
    K: RegionMask
    spec: SequenceSpec
    j_values: list[int] = field(default_factory=list)
    w11_gap: list[float] = field(default_factory=list)
    e_j: list[float] = field(default_factory=list)
    modulus_gap: list[float] = field(default_factory=list)
    tail_j: list[float] = field(default_factory=list)
    delta_curve: list[tuple[float, float]] = field(default_factory=list)
    triangle_terms: list[dict] = field(default_factory=list)
    tau_floor: float = 0.0
    tau_floor_tail: float = 0.0
    assertions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.assertions.values())

    def to_dict(self) -> dict:
        lo, hi = self.K.bounding_box()
        return {
            "params": {"alpha": self.params.alpha, "delta": self.params.delta,
                       "operator_kind": self.params.operator_kind},
            "K": {"lo": [float(v) for v in lo], "hi": [float(v) for v in hi], "points": self.K.count},
            "sequence": {"kind": self.spec.kind, "j_values": list(self.spec.j_values),
                         "length_scale": self.spec.length_scale},
            "j": list(self.j_values),
            "w11_gap": self.w11_gap,
            "e_j": self.e_j,
            "modulus_gap": self.modulus_gap,
            "tail_j": self.tail_j,
            "delta_curve": [[d, v] for d, v in self.delta_curve],
            "triangle_terms": self.triangle_terms,
            "tau_floor": self.tau_floor,
            "tau_floor_tail": self.tau_floor_tail,
            "assertions": self.assertions,
            "pass": self.passed,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "w11_gap", "e_j", "modulus_gap", "tail_j"])
            for row in zip(self.j_values, self.w11_gap, self.e_j, self.modulus_gap, self.tail_j):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def shared_rgrid(functions: Sequence[GridFunction], step: float) -> RadiusGrid:
    """One radius grid sufficient for every function in the list."""
    h = functions[0].h
    r_max = max(required_rmax(g) for g in functions)
    return RadiusGrid.default(h, r_max, step)


def _fields(f: GridFunction, alpha: float, deltas: Sequence[float], kind: str, rgrid: RadiusGrid,
            workers: int) -> list[MaximalField]:
    return MaximalEngine(f, rgrid, workers).family(alpha, list(deltas), kind)


def continuity_errors(f: GridFunction, seq: Sequence[GridFunction], alpha: float, K: RegionMask,
                      rgrid: RadiusGrid, kind: str = "centered", workers: int = 1) -> tuple[list[float], list[float]]:
    """``(w11_gap, e_j)`` per sequence element."""
    q = FracParams(alpha).exponent(f.d)
    mf = _fields(f, alpha, [0.0], kind, rgrid, workers)[0].values
    gaps, errs = [], []
    for fj in seq:
        gaps.append(w11_norm(fj - f))
        mj = _fields(fj, alpha, [0.0], kind, rgrid, workers)[0].values
        errs.append(grad_diff_norm(mj, mf, q, K))
    return gaps, errs


def delta_convergence_curve(f: GridFunction, alpha: float, K: RegionMask, deltas: Sequence[float],
                            rgrid: RadiusGrid, kind: str = "centered", workers: int = 1) -> list[tuple[float, float]]:
    """``||grad M f - grad M^delta f||_{L^q(K)}`` for each delta (given in descending order)."""
    if list(deltas) != sorted(deltas, reverse=True):
        raise PreconditionError("deltas must be descending")
    q = FracParams(alpha).exponent(f.d)
    asc = sorted(set([0.0] + list(deltas)))
    flds = dict(zip(asc, _fields(f, alpha, asc, kind, rgrid, workers)))
    base = flds[0.0].values
    return [(float(dl), grad_diff_norm(base, flds[dl].values, q, K)) for dl in deltas]


def delta_decomposition(f: GridFunction, f_j: GridFunction, alpha: float, delta: float, K: RegionMask,
                        rgrid: RadiusGrid, kind: str = "centered", workers: int = 1,
                        fields_f=None, fields_j=None) -> tuple[float, float, float, float]:
    """The three triangle summands and the direct error ``||grad M f - grad M f_j||``."""
    q = FracParams(alpha).exponent(f.d)
    m0, md = fields_f or [x.values for x in _fields(f, alpha, [0.0, delta], kind, rgrid, workers)]
    j0, jd = fields_j or [x.values for x in _fields(f_j, alpha, [0.0, delta], kind, rgrid, workers)]
    t1 = grad_diff_norm(m0, md, q, K)
    t2 = grad_diff_norm(md, jd, q, K)
    t3 = grad_diff_norm(jd, j0, q, K)
    direct = grad_diff_norm(m0, j0, q, K)
    if t1 + t2 + t3 < direct - 1e-10:
        raise AssertionError("triangle inequality failed")
    return t1, t2, t3, direct


def modulus_convergence(f: GridFunction, seq: Sequence[GridFunction]) -> list[float]:
    """``|| |f_j| - |f| ||_{W^{1,1}}`` per j."""
    af = abs(f)
    return [w11_norm(abs(fj) - af) for fj in seq]


def tail_errors(f: GridFunction, seq: Sequence[GridFunction], alpha: float, K: RegionMask,
                rgrid: RadiusGrid, kind: str = "centered", workers: int = 1) -> list[float]:
    """Gradient error on the complement of ``3K`` inside the box, per j."""
    outside = triple_K(K).complement()
    q = FracParams(alpha).exponent(f.d)
    mf = _fields(f, alpha, [0.0], kind, rgrid, workers)[0].values
    return [grad_diff_norm(_fields(fj, alpha, [0.0], kind, rgrid, workers)[0].values, mf, q, outside)
            for fj in seq]


# -- lambda0 and the small-radius sets ---------------------------------------

def lambda0_estimate(f: GridFunction, K: RegionMask, alpha: float,
                     max_centers: int = 400) -> tuple[float, float, tuple]:
    """``(lambda0, r0, center)`` from the smallest grid-centered ball ``B0`` that contains K
    and holds more than half of ``||f||_1``; ``lambda0 = (2 r0)^(alpha-d) ||f||_1 / (4 omega_d)``."""
    a = np.abs(f.values)
    total = float(a.sum()) * f.domain.cell_volume
    if total == 0:
        raise PreconditionError("lambda0 needs a nonzero function")
    dom = f.domain
    h = dom.h
    sup = np.argwhere(a > 0)
    mass = a[tuple(sup.T)]
    kpts = np.argwhere(K.flags)
    lo, hi = kpts.min(axis=0), kpts.max(axis=0)
    stride = max(1, int(math.ceil((np.prod(hi - lo + 1) / max_centers) ** (1 / dom.d))))
    axes = [np.arange(a0, a1 + 1, stride) for a0, a1 in zip(lo, hi)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.d)
    corners = np.stack(np.meshgrid(*[[a0, a1] for a0, a1 in zip(lo, hi)], indexing="ij"), axis=-1).reshape(-1, dom.d)
    best = (math.inf, None)
    for z in centers:
        r_k = math.sqrt(float(((corners - z) ** 2).sum(axis=1).max())) if K.count else 0.0
        dist = np.sqrt(((sup - z) ** 2).sum(axis=1))
        order = np.argsort(dist, kind="stable")
        cum = np.cumsum(mass[order]) * dom.cell_volume
        pos = int(np.searchsorted(cum, total / 2, side="right"))
        if pos >= cum.size:
            continue
        r = max(r_k, float(dist[order][pos])) * h
        if r < best[0]:
            best = (r, tuple(int(v) for v in z))
    if best[1] is None:
        raise NoQualifyingBallError("no grid-centered ball holds half of the mass")
    r0 = best[0]
    lam = (2 * r0) ** (alpha - dom.d) / (4 * unit_ball_volume(dom.d)) * total
    return lam, r0, best[1]


@dataclass
class SmallRadiusSets:
    E: RegionMask
    D: RegionMask
    measure_E: float
    measure_D: float


def small_radius_sets(field_j: MaximalField, delta: float, lambda0: float, K: RegionMask,
                      c: float = 2.0) -> SmallRadiusSets:
    """``E``: points of K whose whole tie set has radius < delta and value > lambda0.
    ``D``: union of the c-dilated recorded good balls of E, rasterized inside the box."""
    if field_j.params.delta != 0:
        raise PreconditionError("small-radius sets need an untruncated field")
    if not c > 1:
        raise PreconditionError("c must exceed 1")
    dom = field_j.domain
    e = K.flags & (field_j.max_tie_radius < delta) & (field_j.values.values > lambda0)
    d_flags = np.zeros(dom.shape, dtype=bool)
    for k in np.unique(field_j.ball_k[e]):
        sel = e & (field_j.ball_k == k)
        centers = np.zeros(dom.shape, dtype=bool)
        centers[tuple(field_j.ball_center[sel].T)] = True
        dist = ndimage.distance_transform_edt(~centers) * dom.h
        d_flags |= dist <= c * float(field_j.rgrid.radii[k]) * (1 + 1e-12)
    E = RegionMask(dom, e)
    D = RegionMask(dom, d_flags)
    return SmallRadiusSets(E, D, E.measure, D.measure)


def fitted_power_check(deltas: Sequence[float], measures: Sequence[float], q: float,
                       factor: float = 3.0) -> tuple[bool, float]:
    """Fit ``C`` at the largest delta from ``|D| = C delta^q`` and test ``|D| <= factor C delta^q``."""
    pairs = sorted(zip(deltas, measures), reverse=True)
    c_emp = pairs[0][1] / pairs[0][0] ** q
    ok = all(m <= factor * c_emp * dl ** q * (1 + 1e-12) for dl, m in pairs)
    return ok, c_emp


# -- full experiment --------------------------------------------------------

def run_continuity(f: GridFunction, spec: SequenceSpec, alpha: float, deltas: Sequence[float],
                   K: RegionMask | None = None, refined: GridFunction | None = None,
                   kind: str = "centered", step: float | None = None, workers: int = 1,
                   seq: Sequence[GridFunction] | None = None) -> ContinuityRun:
    """Every column of a :class:`ContinuityRun` plus its decay assertions.

    ``deltas`` are physical truncation radii in descending order; ``refined``
    is ``f`` sampled at ``h/2`` and sets the floors. An explicit ``seq``
    replaces the one generated from ``spec``.
    """
    params = FracParams(alpha, 0.0, kind)
    params.validate(f.d)
    q = params.exponent(f.d)
    K = K or default_K(f)
    seq = list(seq) if seq is not None else make_sequence(f, spec)
    if len(seq) != len(spec.j_values):
        raise PreconditionError("sequence length does not match the j values")
    step = step or 2 * f.h / spec.length_scale
    rgrid = shared_rgrid([f] + seq, step)
    asc = sorted(set([0.0] + list(deltas)))
    run = ContinuityRun(params, K, spec, list(spec.j_values))

    f_fields = _fields(f, alpha, asc, kind, rgrid, workers)
    fv = {dl: fld.values for dl, fld in zip(asc, f_fields)}
    run.delta_curve = [(float(dl), grad_diff_norm(fv[0.0], fv[dl], q, K)) for dl in deltas]
    outside = triple_K(K).complement()

    for j, fj in zip(spec.j_values, seq):
        run.w11_gap.append(w11_norm(fj - f))
        run.modulus_gap.append(w11_norm(abs(fj) - abs(f)))
        jv = {dl: fld.values for dl, fld in zip(asc, _fields(fj, alpha, asc, kind, rgrid, workers))}
        run.e_j.append(grad_diff_norm(jv[0.0], fv[0.0], q, K))
        run.tail_j.append(grad_diff_norm(jv[0.0], fv[0.0], q, outside))
        for dl in deltas:
            t1, t2, t3, direct = delta_decomposition(f, fj, alpha, dl, K, rgrid, kind,
                                                     fields_f=(fv[0.0], fv[dl]), fields_j=(jv[0.0], jv[dl]))
            run.triangle_terms.append({"j": j, "delta": float(dl), "term1": t1, "term2": t2,
                                       "term3": t3, "direct": direct})

    if refined is not None:
        fine_rgrid = RadiusGrid.default(refined.h, required_rmax(refined), step / 2)
        mfine = _fields(refined, alpha, [0.0], kind, fine_rgrid, workers)[0].values
        run.tau_floor = tau_floor(fv[0.0], mfine, K, q)
        run.tau_floor_tail = tau_floor(fv[0.0], mfine, outside, q)
    run.assertions = decay_assertions(run)
    return run


def decay_assertions(run: ContinuityRun) -> dict:
    e = run.e_j
    fl = run.tau_floor
    tol = tau_ineq(run.K.domain.h, np.zeros(0))
    out = {
        # entries under the floor are below what the grid can resolve
        "e_nonincreasing_5pct": all(b <= 1.05 * a or b <= fl for a, b in zip(e, e[1:])),
        "e_final_decay": e[-1] <= max(0.15 * e[0], fl),
        "triangle": all(t["term1"] + t["term2"] + t["term3"] >= t["direct"] - 1e-10
                        for t in run.triangle_terms),
        "modulus_below_w11": all(m <= w + tol for m, w in zip(run.modulus_gap, run.w11_gap)),
        "modulus_final_decay": run.modulus_gap[-1] <= run.modulus_gap[0] / 8,
        "tail_final_decay": run.tail_j[-1] <= max(0.25 * run.tail_j[0], run.tau_floor_tail),
        "w11_decreasing": all(b < a or b == 0.0 for a, b in zip(run.w11_gap, run.w11_gap[1:])),
        "w11_final_sixteenth": run.w11_gap[-1] <= run.w11_gap[0] / 16,
    }
    if run.delta_curve:
        first, last = run.delta_curve[0][1], run.delta_curve[-1][1]
        out["delta_curve_decay"] = last <= 0.1 * first + fl
    return out
