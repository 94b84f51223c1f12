"""Pointwise and norm-level checks of the maximal-function inequalities.

Every check returns a :class:`CheckReport` built from a per-point *slack*
(left side minus right side, positive means violated). Gradient-based
checks skip points whose good ball is not unique (``tie_count > 1``): the
gradient of the maximal function may fail to exist there.

Discrete inequalities that hold only almost everywhere in the continuum
are allowed a 1% fraction of points beyond tolerance; the exact ones
(argmax chains, homogeneity) are allowed none.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .balls import RadiusGrid, RowSpanTables, unit_ball_volume
from .calculus import gradient, gradient_of_modulus, lq_norm
from .errors import DeltaZeroError, PreconditionError, ZeroGradientError
from .grid import GridFunction
from .maximal import FracParams, MaximalEngine, MaximalField

C_TOL = 5.0
AE_FRACTION = 0.01
QUANTILES = (50, 90, 99, 100)


@dataclass
class CheckReport:
    check_name: str
    points_tested: int
    max_violation: float
    violation_quantiles: dict
    tolerance_used: float
    passed: bool
    violation_fraction: float = 0.0
    admissible_fraction: float = 0.0
    excluded_ties: int = 0
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out

    @classmethod
    def from_slack(cls, name: str, slack: np.ndarray, tol: float, admissible: float = AE_FRACTION,
                   excluded: int = 0, metrics: dict | None = None, extra_ok: bool = True) -> "CheckReport":
        s = np.sort(np.asarray(slack, dtype=float).ravel())
        n = s.size
        if n == 0:
            q = {str(p): 0.0 for p in QUANTILES}
            return cls(name, 0, 0.0, q, tol, bool(extra_ok), 0.0, admissible, excluded, metrics or {})
        q = {str(p): float(s[min(n - 1, int(math.ceil(p / 100 * n)) - 1 if p else 0)]) for p in QUANTILES}
        frac = float(np.count_nonzero(s > tol)) / n
        ok = frac <= admissible and extra_ok
        return cls(name, n, float(s[-1]), q, float(tol), bool(ok), frac, admissible, excluded, metrics or {})


def tau_ineq(h: float, radii: np.ndarray) -> float:
    """``C_tol (h + h / r10)`` with ``r10`` the 10th-percentile good-ball radius."""
    if radii.size == 0:
        return C_TOL * h
    r10 = float(np.sort(radii.ravel())[int(0.1 * (radii.size - 1))])
    return C_TOL * (h + h / r10)


class FieldCache:
    """Maximal fields and engines shared between checks.

    Engines are keyed by the identity of the function object, so callers keep
    the functions alive while they use the cache.
    """

    def __init__(self, workers: int = 1, prune: bool = True):
        self.workers = workers
        self.prune = prune
        self._engines: dict[int, tuple[GridFunction, MaximalEngine]] = {}
        self._fields: dict[tuple, MaximalField] = {}
        self._grads: dict[int, tuple[GridFunction, GridFunction]] = {}
        # radius grids registered per function, used when a call passes none
        self.rgrids: dict[int, RadiusGrid] = {}

    def use_rgrid(self, f: GridFunction, rgrid: RadiusGrid) -> None:
        self.rgrids[id(f)] = rgrid

    def engine(self, f: GridFunction, rgrid: RadiusGrid | None = None) -> MaximalEngine:
        rgrid = rgrid if rgrid is not None else self.rgrids.get(id(f))
        key = (id(f), None if rgrid is None else rgrid.radii.tobytes())
        hit = self._engines.get(key)
        if hit is None or hit[0] is not f:
            hit = (f, MaximalEngine(f, rgrid, self.workers))
            self._engines[key] = hit
        return hit[1]

    def fields(self, f: GridFunction, alpha: float, deltas: Sequence[float], kind: str = "centered",
               rgrid: RadiusGrid | None = None, track: bool = True) -> list[MaximalField]:
        eng = self.engine(f, rgrid)
        tag = eng.rgrid.radii.tobytes()
        keys = [(id(f), float(alpha), kind, float(dl), track, tag) for dl in deltas]
        missing = sorted({dl for dl, k in zip(deltas, keys) if k not in self._fields})
        if missing:
            for dl, fld in zip(missing, eng.family(alpha, missing, kind, self.prune, track)):
                self._fields[(id(f), float(alpha), kind, float(dl), track, tag)] = fld
        return [self._fields[k] for k in keys]

    def field(self, f, alpha, delta=0.0, kind="centered", rgrid=None, track=True) -> MaximalField:
        return self.fields(f, alpha, [delta], kind, rgrid, track)[0]

    def grad_magnitude(self, f: GridFunction) -> GridFunction:
        hit = self._grads.get(id(f))
        if hit is None or hit[0] is not f:
            hit = (f, gradient(f).magnitude())
            self._grads[id(f)] = hit
            # same lattice, so the same radius grid applies
            if id(f) in self.rgrids:
                self.rgrids[id(hit[1])] = self.rgrids[id(f)]
        return hit[1]

    def drop(self, f: GridFunction) -> None:
        g = self._grads.pop(id(f), None)
        for obj in (f, g[1] if g else None):
            if obj is None:
                continue
            for k in [k for k in self._engines if k[0] == id(obj)]:
                del self._engines[k]
            self.rgrids.pop(id(obj), None)
            for k in [k for k in self._fields if k[0] == id(obj)]:
                del self._fields[k]

    def clear(self) -> None:
        self._engines.clear()
        self._fields.clear()
        self._grads.clear()
        self.rgrids.clear()


def good_ball_averages(values: np.ndarray, fld: MaximalField, scale: float = 1.0,
                       tables: RowSpanTables | None = None) -> np.ndarray:
    """Average of ``values`` over each point's good ball dilated by ``scale``."""
    tables = tables or RowSpanTables(values, fld.domain.h)
    out = np.empty(fld.domain.shape)
    for k in np.unique(fld.ball_k):
        sel = fld.ball_k == k
        r = float(fld.rgrid.radii[k]) * scale
        out[sel] = tables.averages_at(fld.ball_center[sel], r)
    return out


def _nontie(fld: MaximalField) -> np.ndarray:
    return fld.tie_count <= 1


def _grad_norm(values: GridFunction) -> np.ndarray:
    return gradient(values).magnitude().values


def _p99_positive(rep: CheckReport) -> float:
    return max(rep.violation_quantiles["99"], 0.0)


def _with_refinement(coarse: CheckReport, fine: CheckReport, ok: bool, **metrics) -> CheckReport:
    coarse.metrics["refined"] = fine.to_dict()
    coarse.metrics.update(metrics)
    coarse.passed = bool(coarse.passed and fine.passed and ok)
    return coarse


# -- pointwise inequalities -------------------------------------------------

def check_kinnunen(f: GridFunction, alpha: float, rgrid: RadiusGrid | None = None, *,
                   refined: GridFunction | None = None, cache: FieldCache | None = None) -> CheckReport:
    """``|grad M f| <= M |grad f|`` at non-tie points."""
    cache = cache or FieldCache()
    fld = cache.field(f, alpha, 0.0, rgrid=rgrid)
    g = cache.grad_magnitude(f)
    rhs = cache.field(g, alpha, 0.0).values.values if not g.is_zero() else np.zeros(f.domain.shape)
    keep = _nontie(fld)
    slack = (_grad_norm(fld.values) - rhs)[keep]
    tol = tau_ineq(f.h, fld.ball_radius[keep])
    strict = float(np.mean(slack < 0)) if slack.size else 1.0
    rep = CheckReport.from_slack("kinnunen", slack, tol, excluded=int((~keep).sum()),
                                 metrics={"alpha": alpha, "h": f.h, "strictly_negative_fraction": strict})
    if refined is None:
        return rep
    fine = check_kinnunen(refined, alpha, cache=cache)
    grow = _p99_positive(fine) <= 1.1 * _p99_positive(rep)
    return _with_refinement(rep, fine, grow, p99_nongrowth=grow)


def check_refined_ks(f: GridFunction, alpha: float, delta: float = 0.0, rgrid: RadiusGrid | None = None, *,
                     refined: GridFunction | None = None, cache: FieldCache | None = None) -> CheckReport:
    """``|grad M^delta f| <= (d - alpha) value_B / r_B`` at the good ball, plus the exact chain
    ``(d - alpha) value_B / r_B <= (d - alpha) M_{alpha,-1} f + 1e-12`` at every point."""
    from .maximal import refined_maximal_minus1
    cache = cache or FieldCache()
    d = f.d
    base, fld = cache.fields(f, alpha, sorted({0.0, float(delta)}), rgrid=rgrid) if delta > 0 else \
        2 * cache.fields(f, alpha, [0.0], rgrid=rgrid)
    rhs = (d - alpha) * fld.values.values / fld.ball_radius
    minus1 = refined_maximal_minus1(f, base).values
    chain = rhs - (d - alpha) * minus1
    chain_ok = bool(np.all(chain <= 1e-12))
    keep = _nontie(fld)
    slack = (_grad_norm(fld.values) - rhs)[keep]
    tol = tau_ineq(f.h, fld.ball_radius[keep])
    rep = CheckReport.from_slack(
        "refined_ks", slack, tol, excluded=int((~keep).sum()), extra_ok=chain_ok,
        metrics={"alpha": alpha, "delta": delta, "h": f.h, "chain_max": float(chain.max()),
                 "chain_ok": chain_ok})
    if refined is None:
        return rep
    fine = check_refined_ks(refined, alpha, delta, cache=cache)
    grow = _p99_positive(fine) <= 1.1 * _p99_positive(rep)
    return _with_refinement(rep, fine, grow, p99_nongrowth=grow)


def luiro_residual(f: GridFunction, fld: MaximalField) -> np.ndarray:
    """``|grad M f - r^alpha avg_B grad|f||`` per point, using each point's good ball."""
    grad_m = gradient(fld.values).components
    gm = gradient_of_modulus(f).components
    w = fld.ball_radius ** fld.params.alpha
    sq = np.zeros(f.domain.shape)
    for gi, ci in zip(grad_m, gm):
        diff = gi - w * good_ball_averages(ci, fld)
        sq += diff * diff
    return np.sqrt(sq)


def check_luiro(f: GridFunction, alpha: float, delta: float = 0.0, rgrid: RadiusGrid | None = None, *,
                refined: GridFunction | None = None, cache: FieldCache | None = None) -> CheckReport:
    """The gradient formula at good balls; the 90th-percentile residual must be below
    tolerance and, with a refined input, shrink by at least 1.3x."""
    cache = cache or FieldCache()
    fld = cache.field(f, alpha, delta, rgrid=rgrid)
    keep = _nontie(fld)
    res = luiro_residual(f, fld)[keep]
    tol = tau_ineq(f.h, fld.ball_radius[keep])
    rep = CheckReport.from_slack("luiro", res, tol, admissible=0.10, excluded=int((~keep).sum()),
                                 metrics={"alpha": alpha, "delta": delta, "h": f.h})
    rep.metrics["p90_residual"] = rep.violation_quantiles["90"]
    if refined is None:
        return rep
    fine = check_luiro(refined, alpha, delta, cache=cache)
    p90c, p90f = rep.violation_quantiles["90"], fine.violation_quantiles["90"]
    shrink = p90c / p90f if p90f > 0 else math.inf
    ok = shrink >= 1.3 or p90c == 0.0
    return _with_refinement(rep, fine, ok, p90_shrink=shrink)


def check_poincare(f: GridFunction, alpha: float, c: float = 2.0, rgrid: RadiusGrid | None = None, *,
                   refined: GridFunction | None = None, cache: FieldCache | None = None) -> CheckReport:
    """Good-ball property ``c^alpha |f|_{cB} <= |f|_B`` and the empirical ratio
    ``avg_{cB}|f| / (r avg_{cB}|grad f|)``, whose maximum must be stable under refinement."""
    if not c > 1:
        raise PreconditionError("dilation factor c must exceed 1")
    cache = cache or FieldCache()
    fld = cache.field(f, alpha, 0.0, rgrid=rgrid)
    absf = np.abs(f.values)
    gmag = cache.grad_magnitude(f).values
    valid = fld.values.values > 0
    if not valid.any():
        return CheckReport.from_slack("poincare", np.zeros(0), 0.0, admissible=0.0,
                                      metrics={"alpha": alpha, "c": c, "max_ratio": 0.0})
    tables = RowSpanTables(absf, f.h)
    avg_b = good_ball_averages(absf, fld, 1.0, tables)
    avg_cb = good_ball_averages(absf, fld, c, tables)
    grad_cb = good_ball_averages(gmag, fld, c)
    tol = tau_ineq(f.h, fld.ball_radius[valid])
    prop = (c ** alpha * avg_cb - avg_b)[valid]
    denom = (fld.ball_radius * grad_cb)[valid]
    nz = denom > 0
    ratio = avg_cb[valid][nz] / denom[nz]
    max_ratio = float(ratio.max()) if ratio.size else 0.0
    rep = CheckReport.from_slack("poincare", prop, tol, admissible=0.0, excluded=int((~nz).sum()),
                                 metrics={"alpha": alpha, "c": c, "h": f.h, "max_ratio": max_ratio,
                                          "zero_denominator_points": int((~nz).sum())})
    if refined is None:
        return rep
    fine = check_poincare(refined, alpha, c, cache=cache)
    a, b = max_ratio, fine.metrics["max_ratio"]
    growth = (max(a, b) / min(a, b)) if min(a, b) > 0 else (1.0 if a == b else math.inf)
    return _with_refinement(rep, fine, growth <= 1.5, ratio_growth=growth)


def check_delta_gradient_bound(f: GridFunction, alpha: float, delta: float, rgrid: RadiusGrid | None = None, *,
                               refined: GridFunction | None = None,
                               cache: FieldCache | None = None) -> CheckReport:
    """``|grad M^delta f| <= ||grad |f|||_1 / (omega_d delta^(d-alpha))``."""
    if not delta > 0:
        raise DeltaZeroError("the delta bound needs delta > 0")
    cache = cache or FieldCache()
    d = f.d
    fld = cache.field(f, alpha, delta, rgrid=rgrid)
    bound = lq_norm(gradient_of_modulus(f), 1) / (unit_ball_volume(d) * delta ** (d - alpha))
    keep = _nontie(fld)
    slack = (_grad_norm(fld.values) - bound)[keep]
    tol = tau_ineq(f.h, fld.ball_radius[keep])
    rep = CheckReport.from_slack("delta_gradient_bound", slack, tol, excluded=int((~keep).sum()),
                                 metrics={"alpha": alpha, "delta": delta, "h": f.h, "bound": bound})
    if refined is None:
        return rep
    fine = check_delta_gradient_bound(refined, alpha, delta, cache=cache)
    grow = _p99_positive(fine) <= 1.1 * _p99_positive(rep)
    return _with_refinement(rep, fine, grow, p99_nongrowth=grow)


# -- norm-level quantities --------------------------------------------------

def sobolev_ratio(f: GridFunction, alpha: float, rgrid: RadiusGrid | None = None,
                  cache: FieldCache | None = None) -> float:
    """``||grad M f||_q / ||grad f||_1`` with ``q = d/(d - alpha)``."""
    cache = cache or FieldCache()
    den = lq_norm(gradient(f), 1)
    if den == 0:
        raise ZeroGradientError("input has zero gradient")
    fld = cache.field(f, alpha, 0.0, rgrid=rgrid, track=False)
    q = FracParams(alpha).exponent(f.d)
    return lq_norm(gradient(fld.values), q) / den


check_sobolev_ratio = sobolev_ratio


def weak_type_constant(g: GridFunction, alpha: float, n_t: int = 30, rgrid: RadiusGrid | None = None,
                       cache: FieldCache | None = None) -> float:
    """``max_t t |{M~ g > t}|^((d-alpha)/d) / ||g||_1`` over a log-spaced t grid."""
    if np.any(g.values < 0):
        raise PreconditionError("weak-type check needs g >= 0")
    norm = lq_norm(g, 1)
    if norm == 0:
        return 0.0
    cache = cache or FieldCache()
    m = cache.field(g, alpha, 0.0, "noncentered", rgrid, track=False).values.values
    top = float(m.max())
    lo = max(float(m.min()), top * 1e-3)
    ts = np.geomspace(lo, top, n_t, endpoint=False)
    s = np.sort(m.ravel())
    above = s.size - np.searchsorted(s, ts, side="right")
    meas = above * g.domain.cell_volume
    expo = (g.d - alpha) / g.d
    return float(np.max(ts * meas ** expo)) / norm


def check_weak_type(g: GridFunction, alpha: float, rgrid: RadiusGrid | None = None, *,
                    refined: GridFunction | None = None, cache: FieldCache | None = None) -> CheckReport:
    """Stability of the weak-type constant: doubling the t grid moves it by at most 5%,
    halving h by at most 30%."""
    cache = cache or FieldCache()
    w = weak_type_constant(g, alpha, 30, rgrid, cache)
    w2 = weak_type_constant(g, alpha, 60, rgrid, cache)
    t_ratio = _ratio(w, w2)
    metrics = {"alpha": alpha, "h": g.h, "W": w, "W_doubled_t": w2, "t_ratio": t_ratio}
    slack = [t_ratio - 1.05]
    if refined is not None:
        wf = weak_type_constant(refined, alpha, 30, None, cache)
        h_ratio = _ratio(w, wf)
        metrics.update(W_refined=wf, h_ratio=h_ratio)
        slack.append(h_ratio - 1.3)
    return CheckReport.from_slack("weak_type", np.array(slack), 0.0, admissible=0.0, metrics=metrics)


def _ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    if min(a, b) <= 0:
        return math.inf
    return max(a, b) / min(a, b)


# -- corpus driver ----------------------------------------------------------

CHECKS = ("kinnunen", "refined_ks", "luiro", "poincare", "delta_gradient_bound", "weak_type")


def run_checks(f: GridFunction, alpha: float, checks: Sequence[str] = CHECKS, delta: float = 0.0,
               refined: GridFunction | None = None, cache: FieldCache | None = None,
               rgrid: RadiusGrid | None = None) -> dict[str, CheckReport]:
    """Run the named checks on one input; keys are the check names."""
    cache = cache or FieldCache()
    out = {}
    for name in checks:
        if name == "kinnunen":
            out[name] = check_kinnunen(f, alpha, rgrid, refined=refined, cache=cache)
        elif name == "refined_ks":
            out[name] = check_refined_ks(f, alpha, delta, rgrid, refined=refined, cache=cache)
        elif name == "luiro":
            out[name] = check_luiro(f, alpha, delta, rgrid, refined=refined, cache=cache)
        elif name == "poincare":
            out[name] = check_poincare(f, alpha, 2.0, rgrid, refined=refined, cache=cache)
        elif name == "delta_gradient_bound":
            dl = delta if delta > 0 else default_delta(f)
            out[name] = check_delta_gradient_bound(f, alpha, dl, rgrid, refined=refined, cache=cache)
        elif name == "weak_type":
            gm = cache.grad_magnitude(f)
            gr = cache.grad_magnitude(refined) if refined is not None else None
            out[name] = check_weak_type(gm, alpha, refined=gr, cache=cache)
        else:
            raise PreconditionError(f"unknown check {name!r}")
    return out


def default_delta(f: GridFunction) -> float:
    """A truncation radius comparable to the support: a quarter of its diameter."""
    from .balls import support_diameter
    return max(0.25 * support_diameter(f), 4 * f.h)
