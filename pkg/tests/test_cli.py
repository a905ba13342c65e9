import csv
import json
import subprocess
import sys

import pytest

from epipolicy.cli import (EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_USAGE, main,
                           parse_float_list)
from epipolicy.reporting import TRAJECTORY_COLUMNS

SMALL_GRID = """grid:
  tau0: [1, 3, 6]
  tau1: [30, 40]
  tau2: [10, 40, 200]
  r1: [0.4, 0.6]
  r2: [0.7, 0.9]
  r3: [0.5, 0.9, 1.3]
"""


@pytest.fixture
def grid_file(tmp_path):
    f = tmp_path / "grid.yaml"
    f.write_text(SMALL_GRID)
    return str(f)


def run(*argv, env=None):
    return main(list(argv), environ=env or {})


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_daily_trajectory(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--out", str(out), "--no-plots") == EXIT_OK
    table = rows(out / "trajectory.csv")
    assert tuple(table[0]) == TRAJECTORY_COLUMNS
    assert len(table) == 301
    assert float(table[17]["r_eff"]) == 0.6 and table[17]["phase"] == "1"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert set(manifest["outputs"]) == {"trajectory.csv", "evaluation.csv", "scenario.yaml"}
    assert len(manifest["scenario_sha256"]) == 64


def test_zero_exposure_gives_zero_infected(tmp_path):
    scn = tmp_path / "s.yaml"
    scn.write_text("epidemic:\n  exposed0: 0.0\nhorizon: 120\ngrid: {tau0: [1], tau1: [30], tau2: [1]}\n")
    out = tmp_path / "o"
    assert run("--scenario", str(scn), "simulate", "--out", str(out), "--no-plots",
               "--plan", "tau0=0,tau1=0,tau2=0,r1=3.5,r2=3.5,r3=3.5") == EXIT_OK
    table = rows(out / "trajectory.csv")
    assert len(table) == 121
    assert all(float(r["n_i"]) == 0.0 for r in table)


def test_outputs_are_byte_stable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("simulate", "--out", str(d), "--scenario", "france-tradeoff") == EXIT_OK
    for name in ("trajectory.csv", "evaluation.csv", "scenario.yaml", "trajectory.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "trajectory.png").read_bytes()[:4] == b"\x89PNG"


def test_global_flags_after_the_command(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--scenario", "france-tradeoff", "--horizon", "100",
               "--out", str(out), "--no-plots", "--grid", "coarse",
               "--plan", "tau0=2,tau1=30,tau2=10,r1=0.4,r2=0.7,r3=1.0") == EXIT_OK
    assert len(rows(out / "trajectory.csv")) == 101


def test_env_overrides_and_flag_precedence(tmp_path):
    env = {"EPIPOLICY_OUT": str(tmp_path / "env"), "EPIPOLICY_HORIZON": "50",
           "EPIPOLICY_NO_PLOTS": "1"}
    plan = "tau0=2,tau1=30,tau2=10,r1=0.4,r2=0.7,r3=1.0"
    assert run("simulate", "--plan", plan, env=env) == EXIT_OK
    assert len(rows(tmp_path / "env" / "trajectory.csv")) == 51
    assert not (tmp_path / "env" / "trajectory.png").exists()
    assert run("simulate", "--plan", plan, "--horizon", "80", env=env) == EXIT_OK
    assert len(rows(tmp_path / "env" / "trajectory.csv")) == 81
    assert run("simulate", "--plan", plan, env={"EPIPOLICY_HORIZON": "soon"}) == EXIT_USAGE


def test_exit_codes(tmp_path, grid_file):
    out = str(tmp_path / "o")
    assert run("tradeoff", "--alphas", "", "--out", out) == EXIT_USAGE
    assert run("sweep", "--mu", "", "--out", out) == EXIT_USAGE
    assert run("nonsense") == EXIT_USAGE
    assert run("--horizon", "0", "simulate", "--out", out) == EXIT_CONFIG
    assert run("simulate", "--plan", "tau0=1") == EXIT_USAGE
    assert run("--scenario", "atlantis", "simulate", "--out", out) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("cost:\n  mu1: 0.5\n")
    assert run("--scenario", str(bad), "simulate", "--out", out) == EXIT_CONFIG
    hot = tmp_path / "hot.yaml"
    hot.write_text("cost:\n  icu_capacity: 10\n")
    assert run("--scenario", str(hot), "--grid", grid_file, "optimize", "--out", out,
               "--no-plots") == EXIT_INFEASIBLE
    assert run("validate", "--reported", str(tmp_path / "none.csv"), "--out", out) == EXIT_IO
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    assert run("simulate", "--out", str(blocker / "sub"), "--no-plots") == EXIT_IO


def test_optimize_on_singleton_grid_echoes_candidate(tmp_path):
    g = tmp_path / "g.yaml"
    g.write_text("tau0: [2]\ntau1: [30]\ntau2: [106]\nr1: [0.4]\nr2: [0.7]\nr3: [1.4]\n")
    out = tmp_path / "o"
    assert run("--scenario", "france-tradeoff", "--grid", str(g), "optimize", "--out", str(out),
               "--trajectory") == EXIT_OK
    best = rows(out / "optimum.csv")[0]
    assert (best["tau0"], best["tau1"], best["tau2"]) == ("2", "30", "106")
    assert best["feasible"] == "true" and best["n_evaluated"] == "1"
    assert len(rows(out / "optimal_trajectory.csv")) == 211
    assert (out / "optimal_trajectory.png").exists()


def test_tradeoff_and_sweep_tables(tmp_path, grid_file):
    out = tmp_path / "t"
    assert run("tradeoff", "--grid", grid_file, "--alphas", "1e-4,1e-7", "--out", str(out)) == EXIT_OK
    t = rows(out / "tradeoff.csv")
    assert [float(r["alpha"]) for r in t] == [1e-7, 1e-4]
    assert (out / "tradeoff.png").exists()
    out = tmp_path / "s"
    assert run("sweep", "--grid", grid_file, "--alphas", "log:1e-6:1e-4:3", "--mu", "1,1;1.41,1.3",
               "--out", str(out), "--no-plots") == EXIT_OK
    s = rows(out / "sweep.csv")
    assert len(s) == 6 and {(r["mu1"], r["mu2"]) for r in s} == {("1.0", "1.0"), ("1.41", "1.3")}


def test_sweep_records_failed_points(tmp_path):
    g = tmp_path / "g.yaml"
    g.write_text("tau0: [25]\ntau1: [60]\ntau2: [200]\nr1: [0.4]\nr2: [0.7]\nr3: [0.5]\n")
    out = tmp_path / "o"
    assert run("--grid", str(g), "sensitivity", "--r0", "1.5,3.5", "--out", str(out),
               "--no-plots") == EXIT_OK
    low, high = rows(out / "sensitivity.csv")
    assert low["error"] == "" and low["tau0"] == "25"
    assert "ICU" in high["error"] and high["tau0"] == ""
    assert run("--grid", str(g), "sensitivity", "--r0", "3.5", "--out", str(out),
               "--no-plots") == EXIT_INFEASIBLE


def test_sensitivity_and_adjust(tmp_path, grid_file):
    out = tmp_path / "s"
    assert run("sensitivity", "--grid", grid_file, "--r0", "2,3.5", "--out", str(out)) == EXIT_OK
    s = rows(out / "sensitivity.csv")
    assert [float(r["r0"]) for r in s] == [2.0, 3.5] and float(s[0]["ke"]) > float(s[1]["ke"])
    out = tmp_path / "a"
    assert run("adjust", "--r3", "0.6,3.5", "--out", str(out)) == EXIT_OK
    a = rows(out / "adjust.csv")
    assert a[0]["feasible"] == "true" and a[1]["feasible"] == "false"
    assert a[0]["adjustment_start"] == "213"
    assert (out / "adjust.png").exists()


def test_uncertainty_is_bit_identical_across_workers(tmp_path, grid_file):
    outs = []
    for w in ("1", "3"):
        out = tmp_path / f"w{w}"
        assert run("uncertainty", "--grid", grid_file, "--sigmas", "0,0.3", "--samples", "4",
                   "--seed", "9", "--workers", w, "--out", str(out), "--no-plots") == EXIT_OK
        outs.append(out)
    for name in ("uncertainty.csv", "uncertainty_samples.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    first = rows(outs[0] / "uncertainty.csv")[0]
    assert float(first["bias_tau0"]) == 0.0 and float(first["bias_r1"]) == 0.0
    assert json.loads((outs[0] / "manifest.json").read_text())["seed"] == 9


def test_validate_self_consistency(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--horizon", "213", "--out", str(sim), "--no-plots") == EXIT_OK
    rep = tmp_path / "reported.csv"
    import datetime as dt
    with open(rep, "w") as fh:
        fh.write("date,active_cases\n")
        for r in rows(sim / "trajectory.csv"):
            fh.write(f"{dt.date(2020, 3, 1) + dt.timedelta(days=int(r['day']))},{r['n_i']}\n")
    out = tmp_path / "v"
    assert run("validate", "--horizon", "213", "--reported", str(rep), "--out", str(out)) == EXIT_OK
    assert all(float(r["residual"]) == 0.0 for r in rows(out / "comparison.csv"))
    summ = rows(out / "comparison_summary.csv")[0]
    assert float(summ["max_abs_residual"]) == 0.0
    rep.write_text("date,active_cases\n2020-03-01,abc\n")
    assert run("validate", "--reported", str(rep), "--out", str(out)) == EXIT_IO


def test_calibrate(tmp_path, capsys):
    out = tmp_path / "c"
    assert run("calibrate", "--out", str(out)) == EXIT_OK
    c = rows(out / "calibration.csv")[0]
    assert float(c["lockdown_term"]) == pytest.approx(120e9, rel=1e-12)
    assert "ke:" in capsys.readouterr().out
    assert run("calibrate", "--tau1-ref", "0", "--out", str(out)) == EXIT_USAGE


def test_parse_float_list():
    assert parse_float_list("0.4,0.6", "x") == [0.4, 0.6]
    assert parse_float_list("0:1:3", "x") == [0.0, 0.5, 1.0]
    lg = parse_float_list("log:1e-6:1e-4:3", "x")
    assert lg[0] == pytest.approx(1e-6) and lg[1] == pytest.approx(1e-5)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "epipolicy", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "epipolicy" in r.stdout
