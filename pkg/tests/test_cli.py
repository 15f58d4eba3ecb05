import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from compoundsp import cli
from compoundsp.smm import TRACE_HEADER

DEMOS = Path(__file__).resolve().parents[1] / "demos"


def copy_demo(tmp_path, name, **overrides):
    """Copy a demo config (and its data) into ``tmp_path``, applying ``section.key=value`` overrides."""
    cp, _ = cli.load_config(DEMOS / name)
    for key, value in overrides.items():
        section, opt = key.split("__")
        if value is None:
            cp.remove_option(section, opt)
        else:
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, opt, str(value))
    for f in DEMOS.glob("*.csv"):
        shutil.copy(f, tmp_path / f.name)
    path = tmp_path / name
    with open(path, "w") as fh:
        cp.write(fh)
    return path


def summary(tmp_path, stem):
    return json.loads((tmp_path / "out" / f"{stem}_summary.json").read_text())


# solve


def test_solve_quadratic_converges(tmp_path):
    path = copy_demo(tmp_path, "quadratic.ini")
    assert cli.main(["solve", str(path)]) == cli.EXIT_OK
    s = summary(tmp_path, "quadratic")
    assert s["status"] == "Converged" and s["residual"] <= 1e-6
    assert np.allclose(s["x_final"], [0.5, -1.0], atol=1e-6)
    assert (tmp_path / "out" / "quadratic_trace.csv").read_text().startswith(TRACE_HEADER + "\n")


def test_solve_bpoe_demo_writes_files(tmp_path):
    path = copy_demo(tmp_path, "bpoe_deviation.ini")
    assert cli.cmd_solve(path) == cli.EXIT_OK
    s = summary(tmp_path, "bpoe")
    assert s["status"] == "Converged" and s["residual"] <= 0.025
    assert s["x_final"][0] + s["x_final"][1] == pytest.approx(1.0)
    lines = (tmp_path / "out" / "bpoe_trace.csv").read_text().splitlines()
    assert lines[0] == TRACE_HEADER and len(lines) == s["iterations"] + 1


def test_missing_data_file_is_a_config_error(tmp_path, capsys):
    path = copy_demo(tmp_path, "bpoe_deviation.ini", problem__data="nowhere.csv")
    assert cli.cmd_solve(path) == cli.EXIT_CONFIG
    assert str(tmp_path / "nowhere.csv") in capsys.readouterr().err


def test_zero_iterations_gives_iterlimit_and_header_only_trace(tmp_path):
    path = copy_demo(tmp_path, "quadratic.ini", smm__max_outer_iters=0)
    assert cli.cmd_solve(path) == cli.EXIT_ITERLIMIT
    assert (tmp_path / "out" / "quadratic_trace.csv").read_text() == TRACE_HEADER + "\n"
    s = summary(tmp_path, "quadratic")
    assert s["status"] == "IterLimit" and s["iterations"] == 0


def test_uncertified_exit_code(tmp_path):
    path = copy_demo(tmp_path, "quadratic.ini", subsolver__max_iters=1, subsolver__delta0="1e-300",
                     subsolver__tight_delta="1e-12", stopping__residual_tol=1.0, stopping__residual_N=10)
    assert cli.cmd_solve(path) == cli.EXIT_UNCERTIFIED
    assert summary(tmp_path, "quadratic")["status"] == "Uncertified"


@pytest.mark.parametrize("overrides", [
    {"problem__kind": "nonsense"},
    {"smm__rho": -1.0},
    {"schedule__c2": 1e6, "schedule__c3": 0.1},
    {"problem__x0": "0, 0, 0"},
    {"stopping__residual_N": 0},
])
def test_bad_configs_exit_one(tmp_path, overrides, capsys):
    path = copy_demo(tmp_path, "quadratic.ini", **overrides)
    assert cli.cmd_solve(path) == cli.EXIT_CONFIG
    assert capsys.readouterr().err.startswith("error:")


def test_missing_config_file(tmp_path):
    assert cli.cmd_solve(tmp_path / "absent.ini") == cli.EXIT_CONFIG


def test_summary_goes_to_stdout_without_output_section(tmp_path, capsys):
    path = copy_demo(tmp_path, "quadratic.ini", output__summary=None, output__trace=None)
    assert cli.cmd_solve(path) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["status"] == "Converged"


# determinism and seeds


def test_identical_runs_are_byte_identical(tmp_path):
    path = copy_demo(tmp_path, "bpoe_deviation.ini")
    out = tmp_path / "out"
    cli.cmd_solve(path)
    first = ((out / "bpoe_trace.csv").read_bytes(), (out / "bpoe_summary.json").read_bytes())
    cli.cmd_solve(path)
    assert ((out / "bpoe_trace.csv").read_bytes(), (out / "bpoe_summary.json").read_bytes()) == first


def test_seed_environment_override(tmp_path, monkeypatch):
    path = copy_demo(tmp_path, "bpoe_deviation.ini")
    cli.cmd_solve(path)
    base = (tmp_path / "out" / "bpoe_trace.csv").read_text()
    monkeypatch.setenv(cli.SEED_ENV, "17")
    cli.cmd_solve(path)
    assert summary(tmp_path, "bpoe")["seed"] == 17
    assert (tmp_path / "out" / "bpoe_trace.csv").read_text() != base
    monkeypatch.setenv(cli.SEED_ENV, "0")
    cli.cmd_solve(path)
    assert (tmp_path / "out" / "bpoe_trace.csv").read_text() == base


@pytest.mark.parametrize("text", ["abc", "-1", str(2 ** 64)])
def test_bad_seed_override(tmp_path, monkeypatch, text):
    monkeypatch.setenv(cli.SEED_ENV, text)
    assert cli.cmd_solve(copy_demo(tmp_path, "quadratic.ini")) == cli.EXIT_CONFIG


def test_seed_resolution(monkeypatch):
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    assert cli.resolve_seed(5) == 5
    monkeypatch.setenv(cli.SEED_ENV, str(2 ** 64 - 1))
    assert cli.resolve_seed(5) == 2 ** 64 - 1


# risk


def write_column(tmp_path, values):
    path = tmp_path / "z.csv"
    path.write_text("".join(f"{v!r}\n" for v in values))
    return path


def test_risk_cvar_and_poe(tmp_path, capsys):
    assert cli.main(["risk", "cvar", str(write_column(tmp_path, [1.0, 2.0, 3.0, 4.0])), "--alpha", "0.5"]) == 0
    assert capsys.readouterr().out == "3.5\n"
    assert cli.main(["risk", "poe", str(write_column(tmp_path, [0.0, 1.0])), "--tau", "0.5"]) == 0
    assert capsys.readouterr().out == "0.5\n"


def test_risk_twelve_significant_digits(tmp_path, capsys):
    assert cli.cmd_risk("var", write_column(tmp_path, [1 / 3, 2 / 3]), {"alpha": 0.25}) == 0
    assert capsys.readouterr().out == "0.333333333333\n"


def test_risk_bpoe_and_oce_extra_lines(tmp_path, capsys):
    z = write_column(tmp_path, [0.0, 1.0, 2.0, 3.0])
    assert cli.cmd_risk("bpoe", z, {"tau": 2.0}) == 0
    out = capsys.readouterr().out.splitlines()
    # the mean of the top three outcomes is 2, so bPOE = 3/4
    assert float(out[0]) == pytest.approx(0.75) and out[1].startswith("a_interval")
    assert cli.cmd_risk("oce", z, {"alpha": 0.5, "utility": "cvar"}) == 0
    out = capsys.readouterr().out.splitlines()
    # eta - 2 E[eta - Z]_+ peaks at 1/2, the mean of the lower half
    assert float(out[0]) == pytest.approx(0.5) and out[1].startswith("eta")


@pytest.mark.parametrize("measure,params", [("median", {}), ("cvar", {}), ("bpoe", {"alpha": 0.5})])
def test_risk_errors(tmp_path, measure, params, capsys):
    assert cli.cmd_risk(measure, write_column(tmp_path, [1.0]), params) == cli.EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_risk_missing_file(tmp_path, capsys):
    assert cli.cmd_risk("cvar", tmp_path / "none.csv", {"alpha": 0.5}) == cli.EXIT_CONFIG
    assert "none.csv" in capsys.readouterr().err


# saa-rate, schedule-check, residual


def test_saa_rate_defaults(tmp_path, capsys):
    out = tmp_path / "rate.csv"
    assert cli.main(["saa-rate", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    slope = float(lines[-1].split()[1])
    assert -0.65 <= slope <= -0.35
    assert out.read_text().splitlines() == lines[:-1]


def test_saa_rate_few_trials_warns_and_bad_sizes(capsys):
    assert cli.main(["saa-rate", "--trials", "5", "--sizes", "10,100"]) == 0
    assert "warning" in capsys.readouterr().out
    assert cli.main(["saa-rate", "--sizes", "10,x"]) == cli.EXIT_CONFIG


def test_schedule_check(capsys):
    assert cli.main(["schedule-check"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("4,12,21,") and lines[-1] == "PASS"
    assert cli.main(["schedule-check", "--c2", "1e6", "--c3", "0.1"]) == cli.EXIT_SCHEDULE_FAIL
    assert capsys.readouterr().out.startswith("FAIL")
    assert cli.main(["schedule-check", "--c1", "0.6"]) == cli.EXIT_SCHEDULE_FAIL


def test_residual_at_shipped_point(capsys):
    assert cli.main(["residual", str(DEMOS / "quadratic.ini"), str(DEMOS / "quadratic_point.csv")]) == 0
    assert float(capsys.readouterr().out) <= 1e-6


def test_residual_errors(tmp_path, capsys):
    path = copy_demo(tmp_path, "quadratic.ini")
    bad = tmp_path / "p.csv"
    bad.write_text("1,2,3\n")
    assert cli.cmd_residual(path, bad) == cli.EXIT_CONFIG
    assert cli.cmd_residual(path, tmp_path / "missing.csv") == cli.EXIT_CONFIG
    unc = copy_demo(tmp_path, "quadratic.ini", subsolver__max_iters=1, subsolver__delta0="1e-300",
                    subsolver__tight_delta="1e-300")
    far = tmp_path / "far.csv"
    far.write_text("-1,1\n")
    assert cli.cmd_residual(unc, far, N=5) == cli.EXIT_UNCERTIFIED
    assert "not certified" in capsys.readouterr().err
