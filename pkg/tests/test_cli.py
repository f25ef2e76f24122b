from __future__ import annotations

import csv
import hashlib
import io
import json

import pytest

from helmgrid import __version__, cli
from helmgrid.cli import DATA_DIR, EXIT_INPUT, EXIT_INTERNAL, EXIT_OK, EXIT_SOLVE, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def run_json(capsys, *argv):
    code, out = run(capsys, *argv)
    return code, json.loads(out) if out else None


# solve -------------------------------------------------------------------

def test_solve_case14(capsys):
    code, doc = run_json(capsys, "solve", "case14.m")
    assert code == EXIT_OK and doc["converged"]
    assert doc["max_deviation"] <= 1e-8


def test_solve_past_the_nose_exits_2(capsys):
    code, doc = run_json(capsys, "solve", "case118.m", "--lambda", "3.5")
    assert code == EXIT_SOLVE and not doc["converged"]


def test_missing_file_exits_1(capsys, tmp_path):
    code, out = run(capsys, "solve", str(tmp_path / "nope.m"))
    assert code == EXIT_INPUT and out == ""


def test_malformed_case_exits_1(capsys, tmp_path):
    bad = tmp_path / "bad.m"
    bad.write_text("function mpc = bad\nmpc.baseMVA = 100;\n")
    assert run(capsys, "solve", str(bad))[0] == EXIT_INPUT


@pytest.mark.parametrize("argv", [["solve"], ["frobnicate", "case14"], ["solve", "case14", "--n-terms", "1"],
                                  ["solve", "case14", "--n-terms", "10", "--pade", "6", "6"],
                                  ["weakbus", "case14", "--top", "0"], ["snbp", "case14", "--ceiling", "0.5"]])
def test_bad_arguments_exit_1(capsys, argv):
    # argparse errors exit; semantic checks return
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_INPUT


def test_internal_error_exits_3(capsys, monkeypatch):
    def boom(args, case):
        raise KeyError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "solve", boom)
    assert run(capsys, "solve", "case14")[0] == EXIT_INTERNAL


def test_solve_with_explicit_pade(capsys):
    code, doc = run_json(capsys, "solve", "case14", "--n-terms", "40", "--pade", "19", "20")
    assert code == EXIT_OK and doc["config"]["pade"] == [19, 20]


# snbp --------------------------------------------------------------------

def test_snbp_case118(capsys):
    code, doc = run_json(capsys, "snbp", "case118.m", "--threads", "4")
    assert code == EXIT_OK
    assert 3.18 <= doc["sigma"]["lambda_star"] <= 3.25
    assert abs(doc["newton_bisection"] - 3.18) <= 0.02
    assert doc["reactive_limits"] is False


def test_snbp_twobus(capsys):
    code, doc = run_json(capsys, "snbp", "twobus.json")
    assert code == EXIT_OK and abs(doc["sigma"]["lambda_star"] - 2.0) <= 0.02


def test_snbp_case14_polezero(capsys):
    code, doc = run_json(capsys, "snbp", "case14.m", "--method", "polezero")
    oracle = doc["newton_bisection"]
    assert code == EXIT_OK and doc["sigma"] is None
    assert abs(doc["polezero"]["lambda_star"] - oracle) <= 0.02 * oracle


def test_snbp_trace_csv(capsys):
    code, out = run(capsys, "snbp", "twobus.json", "--method", "sigma", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == EXIT_OK and list(rows[0]) == ["lambda", "min_condition", "bus", "mismatch"]
    lams = [float(r["lambda"]) for r in rows]
    assert lams == sorted(lams) and lams[0] == 1.0


# sigma -------------------------------------------------------------------

def test_sigma_case118_min_condition_ordering(capsys):
    _, a = run_json(capsys, "sigma", "case118.m", "--lambda", "1.88")
    _, b = run_json(capsys, "sigma", "case118.m", "--lambda", "3.1")
    assert a["min_condition"] < b["min_condition"]


def test_sigma_zero_load(capsys):
    code, doc = run_json(capsys, "sigma", "twobus.json", "--lambda", "0")
    assert code == EXIT_OK
    assert all(b["sigma_r"] == 0 and b["sigma_i"] == 0 and b["condition"] == 0.25 for b in doc["buses"])


def test_sigma_two_bus_point(capsys):
    code, doc = run_json(capsys, "sigma", "twobus.json", "--lambda", "1")
    (b,) = doc["buses"]
    assert abs(b["sigma_r"]) <= 1e-10 and abs(b["sigma_i"] + 0.25) <= 1e-10


def test_sigma_parabola_samples(capsys):
    _, doc = run_json(capsys, "sigma", "twobus.json")
    assert all(abs(p["sigma_i"] ** 2 - 0.25 - p["sigma_r"]) <= 1e-11 for p in doc["parabola"])


# weakbus -----------------------------------------------------------------

def test_weakbus_allpq_base(capsys):
    code, doc = run_json(capsys, "weakbus", "case14_allpq.m", "--top", "5")
    assert code == EXIT_OK
    assert [r["bus"] for r in doc["hem"]] == [14, 12, 13, 11, 10]
    assert doc["modal"] == [14, 12, 13, 11, 10]
    assert doc["agreement"]["exact_match"]


def test_weakbus_allpq_stressed(capsys):
    code, doc = run_json(capsys, "weakbus", "case14_allpq_q393.m", "--top", "5")
    assert code == EXIT_OK
    assert [r["bus"] for r in doc["hem"]] == [14, 10, 13, 9, 11]
    assert doc["modal"] == [14, 10, 13, 9, 11] and doc["agreement"]["exact_match"]


def test_weakbus_single_pq_bus(capsys):
    code, doc = run_json(capsys, "weakbus", "twobus.json", "--top", "1")
    assert code == EXIT_OK and [r["bus"] for r in doc["hem"]] == [2]


# output contract ---------------------------------------------------------

def test_header_fields(capsys):
    _, doc = run_json(capsys, "solve", "case14")
    raw = (DATA_DIR / "case14.m").read_bytes()
    assert doc["tool"] == "helmgrid" and doc["version"] == __version__
    assert doc["case"]["sha256"] == hashlib.sha256(raw).hexdigest()
    assert doc["config"]["lambda"] == 1.0 and doc["config"]["n_terms"] == 50
    assert "threads" not in doc["config"] and "out" not in doc["config"]


@pytest.mark.parametrize("argv", [["weakbus", "case118"], ["snbp", "twobus.json"], ["sigma", "case14"]])
def test_byte_identical_across_thread_counts(capsys, argv):
    _, one = run(capsys, *argv, "--threads", "1")
    _, many = run(capsys, *argv, "--threads", "4")
    _, again = run(capsys, *argv, "--threads", "1")
    assert one == many == again


def test_floats_have_twelve_significant_digits(capsys):
    _, out = run(capsys, "weakbus", "case14")
    doc = json.loads(out)
    for r in doc["hem"]:
        digits = repr(r["dv_dq"]).replace(".", "").replace("-", "").lstrip("0").split("e")[0]
        assert len(digits) <= 12


def test_out_file(capsys, tmp_path):
    target = tmp_path / "r.csv"
    code, out = run(capsys, "weakbus", "case14", "--format", "csv", "--out", str(target))
    assert code == EXIT_OK and out == ""
    rows = list(csv.reader(target.open()))
    assert rows[0] == ["rank", "hem_bus", "dv_dq", "modal_bus"] and len(rows) == 6


def test_unwritable_out_exits_1(capsys, tmp_path):
    assert run(capsys, "solve", "case14", "--out", str(tmp_path / "no" / "dir" / "x.json"))[0] == EXIT_INPUT


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0 and __version__ in capsys.readouterr().out
