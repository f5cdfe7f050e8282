from __future__ import annotations

import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from mdl.cli import main
from mdl.fragments import EuclideanSpace, Fragment, save_fragment


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(scope="module")
def sysfile(tmp_path_factory):
    path = tmp_path_factory.mktemp("sys") / "laakso.json"
    assert main(["system", "gen", "--depth", "4", "-o", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def badfile(tmp_path_factory):
    """A generated system with theta lowered below the fiber diameters."""
    path = tmp_path_factory.mktemp("sys") / "bad.json"
    assert main(["system", "gen", "--depth", "3", "-o", str(path)]) == 0
    d = json.loads(path.read_text())
    d["profile"]["theta"] = "1/3"
    path.write_text(json.dumps(d))
    return path


class TestSystem:
    def test_gen_validate(self, capsys, sysfile):
        code, out, _ = run(capsys, "system", "validate", sysfile)
        assert code == 0 and json.loads(out)["passed"] is True

    def test_validate_failure(self, capsys, badfile):
        code, out, _ = run(capsys, "system", "validate", badfile)
        assert code == 1
        assert json.loads(out)["passed"] is False

    def test_bigon(self, capsys, sysfile):
        code, out, _ = run(capsys, "system", "validate", sysfile, "--bigon", 4)
        assert code == 0 and json.loads(out)["bigon"]["holds"] is True

    def test_parse_error(self, capsys, tmp_path):
        bad = tmp_path / "x.json"
        bad.write_text("{not json")
        code, _, err = run(capsys, "system", "validate", bad)
        assert code == 2 and "cannot parse" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "system", "validate", tmp_path / "nope.json")
        assert code == 2

    def test_bad_usage(self, capsys):
        with pytest.raises(SystemExit) as ex:
            main(["system", "gen"])
        assert ex.value.code == 2


class TestCommands:
    def test_limit_dist(self, capsys, sysfile):
        code, out, _ = run(capsys, "limit", "dist", sysfile, "--depth", "3", "--x", "0:0", "--y", "0:1/16")
        d = json.loads(out)
        assert code == 0
        assert d["lower"] <= d["estimate"] <= d["upper"]
        assert d["estimate"] == pytest.approx(1 / 16)

    def test_limit_dist_bad_point(self, capsys, sysfile):
        assert run(capsys, "limit", "dist", sysfile, "--x", "zero", "--y", "0:0")[0] == 2

    def test_lip_sweep(self, capsys, sysfile):
        code, out, _ = run(capsys, "lip", "sweep", sysfile, "--points", 20, "--seed", 3)
        rows = read_csv(out)
        assert code == 0 and len(rows) == 20
        assert list(rows[0]) == ["point_id", "phi_value", "Lip", "lip", "ratio", "finest_scale"]
        assert all(float(r["lip"]) <= float(r["Lip"]) + 1e-12 for r in rows)

    def test_lip_bad_function(self, capsys, sysfile):
        assert run(capsys, "lip", "sweep", sysfile, "--f", "cosh")[0] == 2

    def test_alberti_gen_verify(self, capsys, sysfile, tmp_path):
        rep = tmp_path / "rep.json"
        assert run(capsys, "alberti", "gen", sysfile, "--lines", 1000, "--seed", 4, "-o", rep)[0] == 0
        code, out, _ = run(capsys, "alberti", "verify", rep, sysfile, "--level", 2)
        rows = read_csv(out)
        assert code == 0
        assert list(rows[0]) == ["level", "edge", "exact", "rep", "rel_error"]
        assert len(rows) == 1 + 3 + 9

    def test_alberti_verify_strict_fails(self, capsys, sysfile, tmp_path):
        rep = tmp_path / "rep.json"
        run(capsys, "alberti", "gen", sysfile, "--lines", 10, "-o", rep)
        assert run(capsys, "alberti", "verify", rep, sysfile, "--level", 3, "--max-error", 1e-6)[0] == 1

    def test_blowup_run(self, capsys, sysfile):
        code, out, _ = run(capsys, "blowup", "run", sysfile, "--scale", 2, "--p-seed", 1)
        d = json.loads(out)
        assert code == 0
        assert 1 <= d["sigma"] <= 2
        assert d["window_system"]["passed"] is True

    def test_blowup_run_too_deep(self, capsys, sysfile):
        code, _, err = run(capsys, "blowup", "run", sysfile, "--scale", 4)
        assert code == 2 and "insufficient depth" in err

    def test_blowup_factor(self, capsys, sysfile):
        code, out, _ = run(capsys, "blowup", "factor", sysfile, "--depths", "3,4", "--points", 2)
        rows = read_csv(out)
        assert code == 0
        assert list(rows[0]) == ["scale", "median_defect", "max_defect"]
        assert all(float(r["max_defect"]) < 1e-9 for r in rows)

    def test_blowup_factor_tripod(self, capsys, tmp_path):
        tun = tmp_path / "tun.json"
        main(["system", "gen", "--depth", "3", "--rule", "tunnel", "--theta", "4", "-o", str(tun)])
        code, _, _ = run(capsys, "blowup", "factor", tun, "--map", "tripod", "--depths", "2,3", "--points", 1)
        assert code == 1

    def test_frag_commands(self, capsys, tmp_path):
        L1 = EuclideanSpace(2, 1)
        g = Fragment.from_function(lambda t: np.c_[t, 2 * t], [(0, 1)], L1, 2001, 3.0)
        path = tmp_path / "f.json"
        save_fragment(g, path)
        code, out, err = run(capsys, "frag", "md", path, "--host", "l1", "--t", 0.5)
        assert code == 0 and "exists=True" in err
        assert float(read_csv(out)[-1]["estimate"]) == pytest.approx(3.0, abs=1e-9)
        code, out, _ = run(capsys, "frag", "len", path, "--host", "l1")
        vals = {r["quantity"]: float(r["value"]) for r in read_csv(out)}
        assert vals["polyline"] == pytest.approx(3.0, abs=1e-9)
        code, out, _ = run(capsys, "frag", "area", path, "--host", "l1")
        assert code == 0 and list(read_csv(out)[0]) == ["resolution", "lhs", "rhs", "residual"]


class TestRun:
    def test_axioms_pass(self, capsys, sysfile, tmp_path):
        code, out, _ = run(capsys, "run", sysfile, "--suite", "axioms", "-o", tmp_path)
        assert code == 0 and out.strip() == "PASS axioms"
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["suites"]["axioms"]["passed"] is True

    def test_axioms_fail_with_witness(self, capsys, badfile, tmp_path):
        code, out, _ = run(capsys, "run", badfile, "--suite", "axioms", "-o", tmp_path)
        assert code == 1 and out.strip() == "FAIL axioms"
        assert "fiber" in (tmp_path / "summary.json").read_text()

    def test_unknown_suite(self, capsys, tmp_path):
        assert run(capsys, "run", "--suite", "nope", "-o", tmp_path)[0] == 2

    def test_no_suite(self, capsys, tmp_path):
        assert run(capsys, "run", "-o", tmp_path)[0] == 2

    def test_bad_threads(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("MDL_THREADS", "many")
        assert run(capsys, "run", "--suite", "axioms", "-o", tmp_path)[0] == 2

    def test_deterministic(self, capsys, tmp_path, monkeypatch):
        outs = []
        for k, threads in enumerate(("1", "4")):
            monkeypatch.setenv("MDL_THREADS", threads)
            d = tmp_path / str(k)
            run(capsys, "run", "--suite", "seminorms", "--suite", "alberti", "--depth", "4", "-o", d)
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        assert outs[0] == outs[1]

    def test_entry_point(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "mdl.cli", "run", "--suite", "axioms", "--depth", "3",
                            "-o", str(tmp_path)], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        assert r.stdout.strip() == "PASS axioms"
