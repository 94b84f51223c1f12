import csv
import json
import subprocess

import numpy as np
import pytest

import maxlab.verifier
from maxlab.calculus import GradientField
from maxlab.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_PRE, main
from maxlab.corpus import corpus_function
from maxlab.grid import make_test_function, read_grid, write_grid, write_grid_csv

from conftest import line, square


@pytest.fixture
def bump_file(tmp_path):
    p = tmp_path / "f.mfg"
    write_grid(make_test_function("gaussian_bump", square(h=1 / 32), sigma=0.0625), p)
    return p


@pytest.fixture
def gauss_1d(tmp_path):
    p = tmp_path / "g.mfg"
    write_grid(corpus_function("gaussian_bump", 1, 2.0 ** -7), p)
    return p


def test_version():
    out = subprocess.run(["maxlab", "--version"], capture_output=True, text=True, check=True)
    assert out.stdout.startswith("maxlab ")


def test_compute_smoke(bump_file, tmp_path):
    out = tmp_path / "M.mfg"
    assert main(["compute", "--input", str(bump_file), "--out", str(out), "--alpha", "0.5"]) == EXIT_OK
    m = read_grid(out)
    assert m.domain == read_grid(bump_file).domain and m.values.max() > 0
    rep = json.loads(out.with_suffix(".json").read_text())
    assert rep["config"]["alpha"] == 0.5 and rep["version"]
    assert len(rep["spot_checks"]) == 8 and all(s["ok"] for s in rep["spot_checks"])
    assert out.with_suffix(".png").stat().st_size > 0
    assert (tmp_path / "M.mfg.balls").exists()


def test_compute_several_deltas_csv_input(tmp_path):
    src = tmp_path / "tri.csv"
    write_grid_csv(make_test_function("triangle", line(-2, 2, 1 / 32)), src)
    out = tmp_path / "T.mfg"
    argv = ["compute", "--input", str(src), "--out", str(out), "--alpha", "0.25",
            "--delta", "0", "--delta", "0.5", "--op", "noncentered", "--no-figures"]
    assert main(argv) == EXIT_OK
    a, b = read_grid(tmp_path / "T_d0.mfg"), read_grid(tmp_path / "T_d1.mfg")
    assert np.all(b.values <= a.values)
    assert not list(tmp_path.glob("*.png"))


def test_compute_preconditions(bump_file, tmp_path):
    out = str(tmp_path / "M.mfg")
    assert main(["compute", "--input", str(bump_file), "--out", out, "--alpha", "2.5"]) == EXIT_PRE
    assert main(["compute", "--input", str(tmp_path / "nope.mfg"), "--out", out, "--alpha", "0.5"]) == EXIT_IO
    bad = tmp_path / "bad.mfg"
    bad.write_bytes(b"MFG1 nonsense")
    assert main(["compute", "--input", str(bad), "--out", out, "--alpha", "0.5"]) == EXIT_IO
    assert main(["compute", "--input", str(bump_file), "--out", out, "--alpha", "0.5", "--workers", "0"]) == EXIT_PRE


def test_verify_single_check(bump_file, tmp_path):
    rep = tmp_path / "v.json"
    argv = ["verify", "--input", str(bump_file), "--alpha", "0.5", "--check", "kinnunen", "--report", str(rep)]
    assert main(argv) == EXIT_OK
    doc = json.loads(rep.read_text())
    assert list(doc["checks"]) == ["kinnunen"] and doc["all_pass"]
    assert rep.with_suffix(".png").exists()
    assert main(argv[:-2] + ["--check", "bogus", "--report", str(rep)]) == EXIT_PRE


def test_verify_catches_sign_flip(gauss_1d, tmp_path, monkeypatch):
    argv = ["verify", "--input", str(gauss_1d), "--check", "luiro", "--report", str(tmp_path / "v.json"),
            "--no-figures"]
    assert main(argv) == EXIT_OK
    real = maxlab.verifier.gradient_of_modulus

    def flipped(f):
        g = real(f)
        return GradientField(g.domain, tuple(-c for c in g.components))

    monkeypatch.setattr(maxlab.verifier, "gradient_of_modulus", flipped)
    assert main(argv) == EXIT_FAIL


def test_continuity_csv(gauss_1d, tmp_path):
    fine = tmp_path / "g2.mfg"
    write_grid(corpus_function("gaussian_bump", 1, 2.0 ** -8), fine)
    rep = tmp_path / "c.json"
    argv = ["continuity", "--input", str(gauss_1d), "--refined", str(fine), "--report", str(rep)]
    assert main(argv) == EXIT_OK
    with open(rep.with_suffix(".csv")) as fh:
        assert len(list(csv.DictReader(fh))) == 6
    assert json.loads(rep.read_text())["run"]["pass"]
    assert rep.with_suffix(".png").exists()


def test_continuity_constant_wrong_sequence(gauss_1d, tmp_path):
    g = read_grid(gauss_1d) * 1.5
    seq = tmp_path / "s.mfg"
    write_grid(g, seq)
    argv = ["continuity", "--input", str(gauss_1d), "--seq-file", str(seq), "--report", str(tmp_path / "c.json"),
            "--no-figures", "--delta", "0.5"]
    assert main(argv) == EXIT_FAIL
    other = tmp_path / "o.mfg"
    write_grid(corpus_function("gaussian_bump", 1, 2.0 ** -6), other)
    argv[argv.index(str(seq))] = str(other)
    assert main(argv) == EXIT_PRE


def test_bench(tmp_path):
    out = tmp_path / "b.csv"
    code = main(["bench", "--size", "64", "--queries", "500", "--radius", "0.25", "--out", str(out)])
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["engine"] for r in rows] == ["naive", "accelerated", "pruned_maximal"]
    assert code in (EXIT_OK, EXIT_FAIL)
    assert out.with_suffix(".png").exists()


def test_reports_identical_across_workers(bump_file, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    texts = []
    for w in ("1", "4"):
        argv = ["compute", "--input", str(bump_file), "--out", "M.mfg", "--alpha", "0.5", "--delta", "0",
                "--delta", "0.25", "--workers", w, "--no-figures"]
        assert main(argv) == EXIT_OK
        texts.append((tmp_path / "M.json").read_bytes() + (tmp_path / "M_d1.mfg").read_bytes())
        argv = ["verify", "--input", str(bump_file), "--workers", w, "--no-figures"]
        assert main(argv) in (EXIT_OK, EXIT_FAIL)
        texts[-1] += (tmp_path / "verify_report.json").read_bytes()
    assert texts[0] == texts[1]
