import json
import os
import subprocess
import sys

import pytest

from holotorsion.cli import (ConfigError, emit_table, main, parse_config_text, report_from_json,
                             write_atomic)
from holotorsion.suites import Report, SUITES, suite_rng


def sample_report():
    r = Report("sample")
    r.add("exact", 1, 1, 0, "plumbing")
    r.add("float", 0.1 + 0.2, 0.3, 1e-12, "addition")
    r.add("complex", 0.5 - 0.25j, 0.5, 1e-3, "complex value")
    r.add("infinite", float("inf"), 1.8, 0.0, "sentinel", ok=True)
    r.wall_time = 1.25
    return r


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


# -- exit codes ----------------------------------------------------------------

def test_missing_command_is_usage_error(capsys):
    code, _, err = run_cli([], capsys)
    assert code == 2 and "usage" in err


def test_unknown_command_is_usage_error(capsys):
    assert run_cli(["frobnicate"], capsys)[0] == 2


def test_passing_suite_exit_zero(capsys):
    code, out, _ = run_cli(["torsion", "--tau", "1j", "--alpha", "0.5", "--beta", "0.5"], capsys)
    assert code == 0
    rep = json.loads(out)
    names = [c["name"] for c in rep["cases"]]
    for n in ("zeta0", "zeta0_prime", "torsion_log", "two_route_delta"):
        assert n in names
    assert all(c["status"] == "pass" for c in rep["cases"])


def test_failing_case_exit_one(capsys):
    code, out, _ = run_cli(["verify-mehler", "--tol", "heat_residual_ratio=1e-9"], capsys)
    assert code == 1
    cases = {c["name"]: c for c in json.loads(out)["cases"]}
    assert cases["heat_residual_ratio"]["status"] == "fail"


def test_anomaly_command(capsys):
    code, out, _ = run_cli(["anomaly", "--scale0", "1.0", "--scale1", "2.0"], capsys)
    assert code == 0
    cases = {c["name"]: c for c in json.loads(out)["cases"]}
    assert cases["anomaly_rhs"]["measured"] == 0
    assert abs(cases["anomaly_lhs"]["measured"]) < 1e-6


@pytest.mark.parametrize("args", [
    ["torsion", "--tol", "zeta0=-1"],
    ["torsion", "--tol", "nonsense"],
    ["torsion", "--tau", "1-1j"],
    ["torsion", "--alpha", "0", "--beta", "0"],
    ["anomaly", "--scale0", "-1"],
    ["torsion", "--tol", "no_such_case=1e-3"],
    ["torsion", "--config", "/nonexistent/config.txt"],
])
def test_config_errors_exit_two(args, capsys):
    assert run_cli(args, capsys)[0] == 2


def test_unwritable_output_exit_three(tmp_path, capsys):
    target = tmp_path / "missing" / "out.json"
    assert run_cli(["torsion", "--out", str(target)], capsys)[0] == 3


# -- config grammar ------------------------------------------------------------

def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# product torus\nseed = 3\nformat = csv\np = 1\n"
                   "factor = 1j 1.0 0.5 0\nfactor = 0.5+1j 1.3 0.25 0.5\n"
                   "tol.torsion_log = 1e-7\n")
    out = tmp_path / "out.csv"
    code, _, _ = run_cli(["torsion", "--config", str(cfg), "--out", str(out)], capsys)
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("name,status")
    assert any(r.startswith("torsion_log,pass") and ",1e-07," in r for r in rows)


def test_parse_config_text():
    d = parse_config_text("tau = 0.3+1.2i\nscale=2\nnonunitary = yes\ntol.zeta0 = 1e-9\n")
    assert d["tau"] == 0.3 + 1.2j and d["scale"] == 2.0 and d["nonunitary"] is True
    assert d["tol"] == {"zeta0": 1e-9}
    for bad in ("colour = red", "tau 1j", "scale = big", "tol.x = 0", "factor = 1j 1 0.5",
                "nonunitary = maybe"):
        with pytest.raises(ConfigError):
            parse_config_text(bad)


def test_flags_override_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("format = csv\n")
    code, out, _ = run_cli(["torsion", "--config", str(cfg), "--format", "json"], capsys)
    assert code == 0 and json.loads(out)["suite"] == "torsion"


# -- serialization -------------------------------------------------------------

def test_json_round_trip():
    rep = sample_report()
    back = report_from_json(emit_table(rep, "json"))
    assert back.suite == rep.suite and back.wall_time == rep.wall_time
    for a, b in zip(rep.cases, back.cases):
        assert (a.name, a.status, a.anchor) == (b.name, b.status, b.anchor)
        assert a.measured == b.measured and a.expected == b.expected and a.tolerance == b.tolerance


def test_json_field_order_and_precision():
    data = json.loads(emit_table(sample_report(), "json"))
    assert list(data) == ["suite", "cases", "wall_time"]
    assert list(data["cases"][0]) == ["name", "status", "measured", "expected", "tolerance", "anchor"]
    assert b"0.30000000000000004" in emit_table(sample_report(), "json")


def test_csv_row_count():
    rep = sample_report()
    assert len(emit_table(rep, "csv").decode().splitlines()) == len(rep.cases) + 1


def test_empty_report_is_header_only():
    empty = Report("empty")
    assert emit_table(empty, "csv").decode().splitlines() == [
        "name,status,measured,expected,tolerance,anchor"]
    text = emit_table(empty, "text").decode().splitlines()
    assert len(text) == 2 and text[1].split() == ["name", "status", "measured", "expected",
                                                  "tolerance", "anchor"]
    assert json.loads(emit_table(empty, "json"))["cases"] == []


def test_text_uses_eight_digits():
    text = emit_table(sample_report(), "text").decode()
    assert "0.3 " in text and "0.30000000000000004" not in text


def test_write_atomic_replaces(tmp_path):
    p = tmp_path / "r.json"
    p.write_bytes(b"old")
    write_atomic(str(p), b"new")
    assert p.read_bytes() == b"new"
    assert os.listdir(tmp_path) == ["r.json"]


# -- determinism ---------------------------------------------------------------

def test_suite_streams_are_independent():
    a = suite_rng(5, "verify-mehler").random(3)
    b = suite_rng(5, "verify-algebra").random(3)
    assert list(SUITES)[:2] == ["verify-algebra", "verify-mehler"]
    assert (a != b).all()
    assert (suite_rng(5, "verify-mehler").random(3) == a).all()


def test_byte_identical_reruns(tmp_path):
    # same seed under different BLAS thread counts
    outs = []
    for k, threads in enumerate(("1", "4")):
        p = tmp_path / f"r{k}.json"
        env = dict(os.environ, OMP_NUM_THREADS=threads, OPENBLAS_NUM_THREADS=threads)
        subprocess.run([sys.executable, "-m", "holotorsion", "verify-chern-weil", "--seed", "11",
                        "--no-timing", "--out", str(p)], check=True, env=env)
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    assert json.loads(outs[0])["wall_time"] == 0


def test_module_entry_point_usage():
    proc = subprocess.run([sys.executable, "-m", "holotorsion"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
