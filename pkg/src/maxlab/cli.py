"""Command-line front end: ``maxlab {compute,verify,continuity,bench}``.

Exit codes: 0 success, 1 a check or assertion failed, 2 I/O or format
error, 3 precondition violation. Every JSON report embeds the run
configuration and the package version; figures are written next to it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GridFormatError, PreconditionError

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_PRE = 0, 1, 2, 3
BENCH_MIN_SPEEDUP = 5.0


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"maxlab {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        default_workers = int(os.environ.get("MAXLAB_WORKERS", "1") or 1)
        sp.add_argument("--workers", type=int, default=default_workers,
                        help="worker threads (default: $MAXLAB_WORKERS or 1)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--report", type=Path, default=None, help="JSON report path")
        sp.add_argument("--no-figures", action="store_true", help="skip the matplotlib figures")

    c = sub.add_parser("compute", help="maximal function of a grid file")
    c.add_argument("--input", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--op", choices=("centered", "noncentered"), default="centered")
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--delta", type=float, action="append", default=None)
    c.add_argument("--rstep", type=float, default=None, help="geometric radius step")
    c.add_argument("--spot-checks", type=int, default=8,
                   help="seeded grid points cross-checked against the reference oracle")
    c.add_argument("--fine-factor", type=int, default=1,
                   help="oracle refinement; 1 demands bitwise agreement")
    common(c)

    v = sub.add_parser("verify", help="run inequality checks on a grid file or the corpus")
    v.add_argument("--input", type=Path, default=None, help="grid file; omit for the built-in corpus")
    v.add_argument("--alpha", type=float, action="append", default=None)
    v.add_argument("--delta", type=float, default=0.0)
    v.add_argument("--check", action="append", default=None,
                   help="check name (repeatable); default: all")
    v.add_argument("--dims", type=_ints, default=[1, 2], help="corpus dimensions, e.g. 1,2")
    v.add_argument("--single-resolution", action="store_true",
                   help="corpus mode: skip the h/2 refinement")
    common(v)

    k = sub.add_parser("continuity", help="perturbation experiment")
    k.add_argument("--input", type=Path, default=None, help="grid file; omit for the corpus gaussian")
    k.add_argument("--refined", type=Path, default=None, help="the same function at h/2")
    k.add_argument("--dim", type=int, default=2)
    k.add_argument("--alpha", type=float, default=0.5)
    k.add_argument("--delta", type=float, action="append", default=None)
    k.add_argument("--seq", choices=("additive_bump", "mollify", "translate"), default="additive_bump")
    k.add_argument("--seq-file", type=Path, default=None,
                   help="use this grid as every f_j instead of a generated sequence")
    k.add_argument("--j-list", type=_ints, default=[1, 2, 4, 8, 16, 32])
    k.add_argument("--k-box", type=_floats, default=None,
                   help="K as lo_1,..,lo_d,hi_1,..,hi_d")
    k.add_argument("--length-scale", type=float, default=None)
    k.add_argument("--op", choices=("centered", "noncentered"), default="centered")
    common(k)

    b = sub.add_parser("bench", help="naive vs accelerated ball sums, plus a pruned maximal field")
    b.add_argument("--size", type=int, default=256)
    b.add_argument("--queries", type=int, default=10_000)
    b.add_argument("--radius", type=float, default=0.25)
    b.add_argument("--out", type=Path, default=Path("bench.csv"))
    common(b)
    return p


# -- output helpers ---------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("workers",)}
    return _clean(cfg)


def write_report(path: Path, args: argparse.Namespace, body: dict) -> None:
    """Sorted keys and round-trip float text, so equal runs give equal bytes."""
    doc = {"version": __version__, "config": run_config(args), **_clean(body)}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _figure_path(report: Path, suffix: str = "") -> Path:
    return report.with_name(report.stem + suffix + ".png")


# -- subcommands ------------------------------------------------------------

def cmd_compute(args) -> int:
    from .balls import RadiusGrid, required_rmax
    from .grid import read_grid, write_grid
    from .maximal import FracParams, MaximalEngine, write_good_balls

    f = read_grid(args.input)
    deltas = sorted(args.delta or [0.0])
    for dl in deltas:
        FracParams(args.alpha, dl, args.op).validate(f.d)
    rgrid = RadiusGrid.default(f.h, required_rmax(f), args.rstep) if args.rstep else None
    fields = MaximalEngine(f, rgrid, args.workers).family(args.alpha, deltas, args.op)
    spots = spot_check(f, fields, deltas, args)
    summary = []
    for i, (dl, fld) in enumerate(zip(deltas, fields)):
        out = args.out if len(deltas) == 1 else args.out.with_name(f"{args.out.stem}_d{i}{args.out.suffix}")
        write_grid(fld.values, out)
        write_good_balls(fld, str(out) + ".balls")
        vals = fld.values.values
        idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
        summary.append({"delta": dl, "grid": str(out), "sidecar": str(out) + ".balls",
                        "max_value": float(vals.max()), "argmax_index": [int(v) for v in idx],
                        "tie_points": int((fld.tie_count > 1).sum()),
                        "radii_evaluated": fld.radii_evaluated, "radii_total": len(fld.rgrid)})
        if not args.no_figures:
            from .plotting import plot_grid
            plot_grid(fld.values, out.with_suffix(".png"), f"{args.op} alpha={args.alpha} delta={dl}",
                      overlay=abs(f) if f.d == 1 else None)
    report = args.report or args.out.with_suffix(".json")
    write_report(report, args, {"fields": summary, "operator": args.op, "alpha": args.alpha,
                                "spot_checks": spots})
    return EXIT_OK if all(s["ok"] for s in spots) else EXIT_FAIL


def spot_check(f, fields, deltas, args) -> list[dict]:
    """Oracle values at seeded random grid points.

    With fine factor 1 the oracle searches the same balls as the engine, so
    the values must agree bitwise; finer oracles search a superset and may
    only exceed the engine value.
    """
    from .oracle import OracleConfig, ReferenceOracle

    if args.spot_checks <= 0:
        return []
    rng = np.random.default_rng(args.seed)
    pts = [tuple(int(rng.integers(0, n)) for n in f.domain.dims) for _ in range(args.spot_checks)]
    oracle = ReferenceOracle(f, fields[0].rgrid, OracleConfig(args.fine_factor))
    out = []
    for dl, fld in zip(deltas, fields):
        for idx in pts:
            x = f.domain.point(idx)
            ref = oracle.maximal(args.alpha, dl, x, args.op).value
            got = float(fld.values.values[idx])
            ok = ref == got if args.fine_factor == 1 else ref >= got - 1e-12
            out.append({"delta": dl, "index": list(idx), "engine": got, "oracle": ref, "ok": bool(ok)})
    return out


def cmd_verify(args) -> int:
    from .verifier import CHECKS, FieldCache, run_checks

    checks = args.check or list(CHECKS)
    for name in checks:
        if name not in CHECKS:
            raise PreconditionError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
    alphas = args.alpha or ([0.5] if args.input else [0.25, 0.5, 0.75])
    results: dict[str, dict] = {}
    if args.input is not None:
        from .grid import read_grid
        f = read_grid(args.input)
        cache = FieldCache(args.workers)
        for a in alphas:
            reps = run_checks(f, a, checks, args.delta, cache=cache)
            for name, rep in reps.items():
                key = name if len(alphas) == 1 else f"{name}/alpha={a}"
                results[key] = rep.to_dict()
    else:
        from .corpus import RESOLUTIONS, SMOOTH, corpus_function, suite_rgrid
        for d in args.dims:
            hc, hf = RESOLUTIONS[d]
            for kind in SMOOTH:
                f = corpus_function(kind, d, hc)
                ff = None if args.single_resolution else corpus_function(kind, d, hf)
                cache = FieldCache(args.workers)
                cache.use_rgrid(f, suite_rgrid(f))
                if ff is not None:
                    cache.use_rgrid(ff, suite_rgrid(ff))
                for a in alphas:
                    reps = run_checks(f, a, checks, args.delta, refined=ff, cache=cache)
                    for name, rep in reps.items():
                        results[f"{name}/d={d}/{kind}/alpha={a}"] = rep.to_dict()
                cache.clear()
    all_pass = all(r["pass"] for r in results.values())
    report = args.report or Path("verify_report.json")
    write_report(report, args, {"checks": results, "all_pass": all_pass})
    if not args.no_figures:
        from .plotting import plot_check_summary
        plot_check_summary(results, _figure_path(report))
    return EXIT_OK if all_pass else EXIT_FAIL


def cmd_continuity(args) -> int:
    from .continuity import SequenceSpec, run_continuity
    from .grid import RegionMask, read_grid

    if args.input is not None:
        f = read_grid(args.input)
        ff = read_grid(args.refined) if args.refined else None
        ell = args.length_scale or 1.0
    else:
        from .corpus import LENGTH_SCALE, RESOLUTIONS, corpus_function
        hc, hf = RESOLUTIONS[args.dim]
        f = corpus_function("gaussian_bump", args.dim, hc)
        ff = corpus_function("gaussian_bump", args.dim, hf)
        ell = args.length_scale or LENGTH_SCALE[args.dim]
    spec = SequenceSpec(args.seq, tuple(args.j_list), ell)
    seq = None
    if args.seq_file is not None:
        g = read_grid(args.seq_file)
        if g.domain != f.domain:
            raise PreconditionError("sequence grid does not match the input grid")
        seq = [g] * len(spec.j_values)
    K = None
    if args.k_box:
        if len(args.k_box) != 2 * f.d:
            raise PreconditionError("--k-box needs 2*d numbers")
        K = RegionMask.box(f.domain, args.k_box[:f.d], args.k_box[f.d:])
    deltas = sorted(args.delta or [ell, ell / 2, ell / 4, ell / 8], reverse=True)
    run = run_continuity(f, spec, args.alpha, deltas, K, ff, args.op, workers=args.workers, seq=seq)
    report = args.report or Path("continuity_report.json")
    body = run.to_dict()
    write_report(report, args, {"run": body})
    run.write_csv(report.with_suffix(".csv"))
    if not args.no_figures:
        from .plotting import plot_continuity
        plot_continuity(body, _figure_path(report))
    return EXIT_OK if run.passed else EXIT_FAIL


def bench_rows(size: int, queries: int, radius: float, seed: int, workers: int = 1) -> list[dict]:
    """Timing of three engines on a random ``size^2`` grid."""
    from .balls import ExactField, RowSpanTables, naive_sums_at
    from .grid import Domain, GridFunction
    from .maximal import FracParams, MaximalEngine

    rng = np.random.default_rng(seed)
    h = 1.0 / size
    dom = Domain(2, (size, size), h, (0.0, 0.0))
    f = GridFunction(dom, rng.random((size, size)))
    centers = rng.integers(0, size, size=(queries, 2))
    rows = []

    t = time.perf_counter()
    naive = naive_sums_at(ExactField(f.values), centers, radius, h)
    rows.append({"engine": "naive", "seconds": time.perf_counter() - t, "queries": queries})

    t = time.perf_counter()
    fast = RowSpanTables(f.values, h).sums_at(centers, radius)
    rows.append({"engine": "accelerated", "seconds": time.perf_counter() - t, "queries": queries})
    if not np.array_equal(naive, fast):
        raise AssertionError("accelerated ball sums differ from the naive sums")

    # a compactly supported bump so that the L1 bound can cut radii
    g = f.with_values(np.where(np.hypot(*[m - 0.5 for m in dom.mesh()]) < 0.2, f.values, 0.0))
    t = time.perf_counter()
    eng = MaximalEngine(g, None, workers)
    fld = eng.centered(FracParams(0.5), prune=True, track=False)
    rows.append({"engine": "pruned_maximal", "seconds": time.perf_counter() - t, "queries": dom.size,
                 "radii_evaluated": fld.radii_evaluated, "radii_total": len(eng.rgrid)})
    base = rows[0]["seconds"]
    for r in rows:
        r["speedup_vs_naive"] = base / r["seconds"] if r["seconds"] > 0 else float("inf")
    return rows


def cmd_bench(args) -> int:
    rows = bench_rows(args.size, args.queries, args.radius, args.seed, args.workers)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    keys = ["engine", "seconds", "queries", "speedup_vs_naive", "radii_evaluated", "radii_total"]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in keys})
    report = args.report or args.out.with_suffix(".json")
    ok = rows[1]["speedup_vs_naive"] >= BENCH_MIN_SPEEDUP
    write_report(report, args, {"rows": rows, "accelerated_faster": ok})
    if not args.no_figures:
        from .plotting import plot_bench
        plot_bench(rows, _figure_path(report))
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"compute": cmd_compute, "verify": cmd_verify, "continuity": cmd_continuity, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("maxlab: --workers must be >= 1", file=sys.stderr)
        return EXIT_PRE
    try:
        return COMMANDS[args.subcommand](args)
    except (GridFormatError, OSError) as exc:
        print(f"maxlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PreconditionError as exc:
        print(f"maxlab: precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRE


if __name__ == "__main__":
    sys.exit(main())
