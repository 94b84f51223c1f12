"""Acceptance criteria 1-9, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
when output capture is on. The corpus fixture dominates the runtime.
"""

import math
import time

import numpy as np
import pytest

from maxlab.balls import RadiusGrid, required_rmax
from maxlab.cli import BENCH_MIN_SPEEDUP, bench_rows, main
from maxlab.continuity import (
    KINDS,
    SequenceSpec,
    default_K,
    fitted_power_check,
    lambda0_estimate,
    make_sequence,
    run_continuity,
    shared_rgrid,
    small_radius_sets,
)
from maxlab.corpus import LENGTH_SCALE, RESOLUTIONS, SMOOTH, corpus_function, suite_rgrid
from maxlab.grid import Domain, GridFunction, make_test_function, write_grid
from maxlab.maximal import FracParams, MaximalEngine, centered_maximal, noncentered_maximal
from maxlab.oracle import OracleConfig, ReferenceOracle, closed_form_1d
from maxlab.verifier import (
    FieldCache,
    check_delta_gradient_bound,
    check_kinnunen,
    check_luiro,
    check_refined_ks,
    check_weak_type,
    luiro_residual,
    sobolev_ratio,
    tau_ineq,
)

from conftest import line, square

ALPHAS = (0.25, 0.5, 0.75)


@pytest.fixture
def emit(capsys):
    def _emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        return ok
    return _emit


@pytest.fixture(scope="session")
def suite():
    """Pointwise checks and Sobolev ratios on the smooth corpus at both resolutions."""
    out = {}
    for d in (1, 2):
        hc, hf = RESOLUTIONS[d]
        dl = LENGTH_SCALE[d] / 4
        for kind in SMOOTH:
            f, ff = corpus_function(kind, d, hc), corpus_function(kind, d, hf)
            cache = FieldCache()
            cache.use_rgrid(f, suite_rgrid(f))
            cache.use_rgrid(ff, suite_rgrid(ff))
            for a in ALPHAS:
                out[(d, kind, a)] = {
                    "kinnunen": check_kinnunen(f, a, refined=ff, cache=cache),
                    "ks0": check_refined_ks(f, a, 0.0, refined=ff, cache=cache),
                    "ksd": check_refined_ks(f, a, dl, refined=ff, cache=cache),
                    "delta_bound": check_delta_gradient_bound(f, a, dl, refined=ff, cache=cache),
                    "luiro": check_luiro(f, a, refined=ff, cache=cache),
                    "rho": sobolev_ratio(f, a, cache=cache),
                }
            cache.clear()
    return out


# -- 1 --------------------------------------------------------------------

def test_criterion_1_oracle_equivalence(emit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(64)
    grids = [GridFunction(Domain(2, (64, 64), 1 / 64, (0.0, 0.0)), rng.standard_normal((64, 64))),
             GridFunction(Domain(1, (4096,), 2.0 ** -10, (0.0,)), rng.standard_normal(4096))]
    deltas = [0.0, 0.25]
    compared = mismatches = 0
    for f in grids:
        eng = MaximalEngine(f)
        oracle = ReferenceOracle(f, eng.rgrid, OracleConfig(1, exhaustive=True))
        pts = [tuple(int(rng.integers(0, n)) for n in f.domain.dims) for _ in range(64)]
        for kind in ("centered", "noncentered"):
            for a in ALPHAS:
                for dl, fld in zip(deltas, eng.family(a, deltas, kind)):
                    for idx in pts:
                        res = oracle.maximal(a, dl, f.domain.point(idx), kind)
                        same = (res.value == fld.values.values[idx] and res.radius_index == fld.ball_k[idx]
                                and np.array_equal(res.center_lattice, fld.ball_center[idx]))
                        compared += 1
                        mismatches += not same
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and secs <= 120
    assert emit(1, ok, f"{compared} oracle/engine comparisons, {mismatches} mismatches, {secs:.0f}s")


# -- 2 --------------------------------------------------------------------

def test_criterion_2_closed_forms(emit):
    t0 = time.perf_counter()
    h = 2.0 ** -10
    rh = math.sqrt(h)
    rows = []

    tri = make_test_function("triangle", line(-2, 2, h))
    rg = RadiusGrid.linear_grid(h, required_rmax(tri))
    i0 = tri.domain.index_of((0.0,))
    v, r, _ = closed_form_1d("triangle_center", 0.5)
    b = centered_maximal(tri, FracParams(0.5), rg).good_ball(i0)
    rows.append(("triangle", abs(b.value - v) <= 10 * h and abs(b.ball.radius - r) <= 10 * rh))
    # the exhaustive oracle on a 4x finer lattice confirms the constant
    ref = ReferenceOracle(tri, rg, OracleConfig(4)).maximal(0.5, 0.0, (0.0,))
    rows.append(("triangle oracle", abs(ref.value - v) <= 10 * h))

    ind = make_test_function("indicator_ball", line(-4, 4, h))
    rg = RadiusGrid.linear_grid(h, required_rmax(ind))
    i2 = ind.domain.index_of((2.0,))
    v, r, _ = closed_form_1d("indicator_right_centered", 0.5)
    b = centered_maximal(ind, FracParams(0.5), rg).good_ball(i2)
    rows.append(("indicator centered", abs(b.value - v) <= 10 * h and abs(b.ball.radius - r) <= 10 * rh))
    ref = ReferenceOracle(ind, rg, OracleConfig(4)).maximal(0.5, 0.0, (2.0,))
    rows.append(("indicator centered oracle", abs(ref.value - v) <= 10 * h))

    v, r, z = closed_form_1d("indicator_right_noncentered", 0.5)
    # geometric radii plus a linear band around r*; the full linear grid is needlessly slow here
    base = RadiusGrid.default(h, required_rmax(ind))
    rg = RadiusGrid(np.union1d(base.radii, np.arange(round((r - 0.1) / h), round((r + 0.1) / h) + 1) * h),
                    h, base.step)
    b = noncentered_maximal(ind, FracParams(0.5, 0.0, "noncentered"), rg).good_ball(i2)
    rows.append(("indicator noncentered", abs(b.value - v) <= 10 * h and abs(b.ball.radius - r) <= 10 * rh
                 and abs(b.ball.center[0] - z) <= 10 * rh))
    ref = ReferenceOracle(ind, rg, OracleConfig(2)).maximal(0.5, 0.0, (2.0,), "noncentered")
    rows.append(("indicator noncentered oracle", abs(ref.value - v) <= 10 * h))

    secs = time.perf_counter() - t0
    bad = [n for n, good in rows if not good]
    ok = not bad and secs <= 60
    assert emit(2, ok, f"{len(rows) - len(bad)}/{len(rows)} closed-form vectors within tolerance, "
                       f"{secs:.0f}s" + (f", failed: {bad}" if bad else ""))


# -- 3 to 5 ---------------------------------------------------------------

def test_criterion_3_kinnunen(suite, emit):
    reps = [v["kinnunen"] for v in suite.values()]
    failed = [k for k, v in suite.items() if not v["kinnunen"].passed]
    worst = max(max(r.violation_fraction, r.metrics["refined"]["violation_fraction"]) for r in reps)
    ok = not failed
    assert emit(3, ok, f"{len(reps)} corpus cases, worst violating fraction {worst:.4f} (limit 0.01), "
                       f"p99 nongrowth in all: {all(r.metrics['p99_nongrowth'] for r in reps)}"
                       + (f", failed: {failed}" if failed else ""))


def test_criterion_4_refined_ks_and_delta_bound(suite, emit):
    names = ("ks0", "ksd", "delta_bound")
    failed = [(k, n) for k, v in suite.items() for n in names if not v[n].passed]
    chain = all(v[n].metrics["chain_ok"] and v[n].metrics["refined"]["metrics"]["chain_ok"]
                for v in suite.values() for n in ("ks0", "ksd"))
    worst = max(v[n].violation_fraction for v in suite.values() for n in names)
    ok = not failed and chain
    assert emit(4, ok, f"{len(suite) * len(names)} reports, chain bound holds everywhere: {chain}, "
                       f"worst violating fraction {worst:.4f}" + (f", failed: {failed}" if failed else ""))


def test_criterion_5_luiro(suite, emit, zero_2d):
    shrinks = [v["luiro"].metrics["p90_shrink"] for v in suite.values()]
    corpus_ok = all(v["luiro"].passed for v in suite.values())
    zero_1d = GridFunction(line(-2, 2, 1 / 32), np.zeros(129))
    zero_ok = all(float(luiro_residual(z, centered_maximal(z, FracParams(0.5))).max()) <= 1e-12
                  for z in (zero_1d, zero_2d))
    tri = make_test_function("triangle", line(-2, 2, 2.0 ** -8))
    fld = centered_maximal(tri, FracParams(0.5), RadiusGrid.linear_grid(tri.h, required_rmax(tri)))
    sym = float(luiro_residual(tri, fld)[tri.domain.index_of((0.0,))])
    ok = corpus_ok and zero_ok and sym <= 10 * tri.h
    assert emit(5, ok, f"p90 shrink min {min(shrinks):.2f} (need 1.3), zero residual {zero_ok}, "
                       f"triangle centre residual {sym:.2e} (limit {10 * tri.h:.2e})")


# -- 6 --------------------------------------------------------------------

def test_criterion_6_sobolev_and_weak_type(suite, emit):
    rhos = [v["rho"] for v in suite.values()]
    finite = all(math.isfinite(r) and r > 0 for r in rhos)

    homog = []
    for d, h in ((1, RESOLUTIONS[1][0]), (2, 2.0 ** -6)):
        for kind in SMOOTH:
            f = corpus_function(kind, d, h)
            rg = suite_rgrid(f)
            homog.append(abs(sobolev_ratio(f * 3.0, 0.5, rg) - sobolev_ratio(f, 0.5, rg)))

    dil = []
    for f in (corpus_function("gaussian_bump", 1, 2.0 ** -7), corpus_function("gaussian_bump", 2, 2.0 ** -5)):
        # f(2x) sampled at spacing h/2 carries the same array as f at spacing h
        dom2 = Domain(f.d, f.domain.dims, f.h / 2, tuple(o / 2 for o in f.domain.origin))
        rg = RadiusGrid.default(f.h, required_rmax(f))
        dil.append(abs(sobolev_ratio(GridFunction(dom2, f.values), 0.5, rg.scaled(0.5)) - sobolev_ratio(f, 0.5, rg)))

    g = make_test_function("indicator_ball", square(-2, 2, 2.0 ** -6))
    gf = make_test_function("indicator_ball", square(-2, 2, 2.0 ** -7))
    wt = check_weak_type(g, 0.5, refined=gf)

    ok = finite and max(homog) <= 1e-12 and max(dil) <= 1e-3 and wt.passed
    assert emit(6, ok, f"rho finite on {len(rhos)} cases ({min(rhos):.3g}..{max(rhos):.3g}), "
                       f"homogeneity err {max(homog):.1e}, dilation err {max(dil):.1e}, "
                       f"W ratio under h-halving {wt.metrics['h_ratio']:.3f} (limit 1.3)")


# -- 7 --------------------------------------------------------------------

@pytest.fixture(scope="session")
def continuity_runs():
    runs = {}
    for d in (2, 1):
        hc, hf = RESOLUTIONS[d]
        ell = LENGTH_SCALE[d]
        f, ff = corpus_function("gaussian_bump", d, hc), corpus_function("gaussian_bump", d, hf)
        for kind in KINDS:
            t0 = time.perf_counter()
            run = run_continuity(f, SequenceSpec(kind, length_scale=ell), 0.5, [ell, ell / 2, ell / 4, ell / 8],
                                 refined=ff)
            runs[(d, kind)] = (run, time.perf_counter() - t0)
    return runs


def test_criterion_7_continuity(continuity_runs, emit):
    failed = {k: [n for n, v in run.assertions.items() if not v] for k, (run, _) in continuity_runs.items()
              if not run.passed}
    secs_2d = sum(s for (d, _), (_, s) in continuity_runs.items() if d == 2)
    ratios = {f"d{d}/{kind}": round(run.e_j[-1] / run.e_j[0], 3) for (d, kind), (run, _) in continuity_runs.items()}
    ok = not failed and secs_2d <= 20 * 60
    assert emit(7, ok, f"e_32/e_1 {ratios}, d=2 runtime {secs_2d:.0f}s" + (f", failed: {failed}" if failed else ""))


# -- 8 --------------------------------------------------------------------

def test_criterion_8_small_radius(emit):
    alpha = 0.5
    notes, ok = [], True
    for d in (1, 2):
        f = corpus_function("gaussian_bump", d, RESOLUTIONS[d][0])
        ell = LENGTH_SCALE[d]
        f_j = make_sequence(f, SequenceSpec("additive_bump", (8,), ell))[0]
        K = default_K(f)
        rg = shared_rgrid([f, f_j], 2 * f.h / ell)
        fld = MaximalEngine(f_j, rg).centered(FracParams(alpha))
        lam, _, _ = lambda0_estimate(f_j, K, alpha)

        tiny = float(fld.min_tie_radius[K.flags].min()) * 0.5
        e_empty = small_radius_sets(fld, tiny, lam, K).E.count == 0

        deltas = [ell / 2, ell / 4, ell / 8]
        meas = [small_radius_sets(fld, dl, lam, K).measure_D for dl in deltas]
        monotone = all(b <= a for a, b in zip(meas, meas[1:]))
        fit_ok, c_emp = fitted_power_check(deltas, meas, d / (d - alpha), 3.0)

        kmin = float(fld.values.values[K.flags].min())
        lam_ok = kmin >= lam - tau_ineq(f.h, fld.ball_radius[K.flags])
        ok = ok and e_empty and monotone and fit_ok and lam_ok
        notes.append(f"d={d}: |D|={[round(m, 5) for m in meas]} C_emp={c_emp:.3g} "
                     f"min_K M={kmin:.3g} >= lambda0={lam:.3g}: {lam_ok}, E empty below good radii: {e_empty}")
    assert emit(8, ok, "; ".join(notes))


# -- 9 --------------------------------------------------------------------

def _cli_outputs(workers):
    """Every report written from the current directory with relative paths, so only workers differ."""
    w = ["--workers", str(workers), "--no-figures"]
    main(["compute", "--input", "../f2.mfg", "--out", "M.mfg", "--alpha", "0.5",
          "--delta", "0", "--delta", "0.25", "--op", "noncentered"] + w)
    main(["verify", "--input", "../g1.mfg", "--report", "v.json"] + w)
    main(["continuity", "--input", "../g1.mfg", "--refined", "../g1f.mfg", "--report", "c.json"] + w)
    names = ["M.json", "M_d0.mfg", "M_d1.mfg", "M_d0.mfg.balls", "M_d1.mfg.balls", "v.json", "c.json", "c.csv"]
    return {n: open(n, "rb").read() for n in names}


def test_criterion_9_determinism_and_speed(tmp_path, emit, monkeypatch):
    write_grid(make_test_function("two_bumps", square(h=1 / 32), sigma=0.04, separation=0.2,
                                  signs=(1.0, -1.0)), tmp_path / "f2.mfg")
    write_grid(corpus_function("gaussian_bump", 1, 2.0 ** -7), tmp_path / "g1.mfg")
    write_grid(corpus_function("gaussian_bump", 1, 2.0 ** -8), tmp_path / "g1f.mfg")
    outs = []
    for w in (1, 4):
        d = tmp_path / f"w{w}"
        d.mkdir()
        monkeypatch.chdir(d)
        outs.append(_cli_outputs(w))
    differing = [n for n in outs[0] if outs[0][n] != outs[1][n]]

    rows = bench_rows(256, 10_000, 0.25, seed=0)
    speed = rows[1]["speedup_vs_naive"]
    ok = not differing and speed >= BENCH_MIN_SPEEDUP
    assert emit(9, ok, f"{len(outs[0])} report files bitwise equal across workers 1 and 4"
                       + (f" except {differing}" if differing else "")
                       + f"; accelerated {speed:.0f}x faster than naive (need {BENCH_MIN_SPEEDUP:.0f}x)")
