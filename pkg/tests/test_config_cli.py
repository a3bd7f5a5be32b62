import re

import numpy as np
import pytest

from robust_cbf import cli
from robust_cbf.barrier import GateViolation
from robust_cbf.config import (ConfigError, bundled_scenarios, load_scenario, read_config, resolve_config,
                               with_filter)
from robust_cbf.sim import read_csv

ACT = "table1_actuator_ue_hocbf"
UNI = "table2_unicycle_ue_iss_cbf"


def parse_bounds(text):
    return {m.group(1): float(m.group(2)) for m in re.finditer(r"^(\w+) = ([-+0-9.eE]+|inf|nan)$", text, re.M)}


# ---------------------------------------------------------------------------
# config


def test_bundled_scenarios_present():
    names = bundled_scenarios()
    for name in ("table1_actuator_plain_hocbf.cfg", "table1_actuator_ue_hocbf.cfg", "table2_unicycle_cbf.cfg",
                 "table2_unicycle_ue_cbf.cfg", "table2_unicycle_ue_iss_cbf.cfg", "synthetic_socp.cfg"):
        assert name in names
        load_scenario(resolve_config(name))


def test_bundled_values():
    cfg = load_scenario(resolve_config(ACT))
    assert cfg.rate == 100 and cfg.duration == 10 and cfg.substeps == 10
    assert np.array_equal(cfg.estimator.lam.matrix, 5 * np.eye(4))
    assert cfg.estimator.delta_b == 0.9 and cfg.estimator.delta_l == 1.0
    assert cfg.filter.mu_e == 1.25 and cfg.filter.gamma_val == pytest.approx(0.1)
    cfg = load_scenario(resolve_config(UNI))
    assert cfg.rate == 50 and cfg.duration == 20
    assert cfg.filter.alpha_h == 1.0 and cfg.filter.sigma_v == 1.0


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        read_config(resolve_config(ACT), overrides=["sim.durration=3"])
    with pytest.raises(ConfigError, match="unknown section"):
        read_config(text="[simulation]\nrate = 3\n")
    with pytest.raises(ConfigError, match="does not apply"):
        load_scenario(resolve_config(ACT), ["plant.tau=1"])
    with pytest.raises(ConfigError, match="unicycle only"):
        load_scenario(resolve_config(ACT), ["slip.beta=0.1"])


def test_overrides():
    cfg = load_scenario(resolve_config(ACT), ["sim.duration=2.5", "estimator.lambda_diag=6,6,6,6",
                                              "plant.J_m=0.2"])
    assert cfg.duration == 2.5
    assert np.array_equal(cfg.estimator.lam.matrix, 6 * np.eye(4))
    assert cfg.plant.model.input_matrix(np.zeros(4))[3, 0] == 5.0
    with pytest.raises(ConfigError):
        read_config(resolve_config(ACT), overrides=["duration=3"])
    cfg = load_scenario(resolve_config(ACT), filter_name="HOCBF-QP")
    assert cfg.filter.name == "hocbf_qp"
    assert with_filter(cfg, "none").filter.name == "none"


def test_malformed_values():
    for item in ("sim.rate=fast", "estimator.lambda_diag=5,5", "sim.x0=1,2", "scenario.filter=mpc",
                 "scenario.plant=quadrotor", "estimator.delta_b=-1", "scenario.compensate=maybe", "sim.rate=0"):
        with pytest.raises(ConfigError):
            load_scenario(resolve_config(ACT), [item])
    with pytest.raises(ConfigError):
        load_scenario(resolve_config(ACT), ["scenario.filter=cbf_qp", "scenario.plant=unicycle"])
    with pytest.raises(ConfigError):
        resolve_config("no_such_scenario")


def test_hocbf_filter_needs_chain():
    with pytest.raises(ConfigError):
        load_scenario(resolve_config(UNI), ["scenario.filter=ue_hocbf_qp"])


def test_gate_violation():
    with pytest.raises(GateViolation):
        load_scenario(resolve_config(UNI), ["barrier.alpha_h=4"])
    with pytest.raises(GateViolation):
        load_scenario(resolve_config(UNI), ["barrier.alpha_h=5"])
    load_scenario(resolve_config(UNI), ["barrier.alpha_h=3.9"])


# ---------------------------------------------------------------------------
# cli


def test_cli_run_safe(tmp_path, capsys):
    out = tmp_path / "o"
    code = cli.main(["run", "--config", ACT, "--out", str(out), "--set", "sim.duration=1"])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "min_h = " in stdout and "wrote" in stdout
    assert len(read_csv(out / "trace.csv")) == 101
    assert "first_violation_time = None" in (out / "metrics.txt").read_text()


def test_cli_run_unsafe(tmp_path, capsys):
    code = cli.main(["run", "--config", "table2_unicycle_cbf", "--out", str(tmp_path), "--quiet"])
    cap = capsys.readouterr()
    assert code == 2
    assert "first_violation_time" in cap.err and cap.out == ""


def test_cli_run_abort_keeps_partial_trace(tmp_path):
    code = cli.main(["run", "--config", "table2_unicycle_ue_cbf", "--out", str(tmp_path), "--quiet",
                     "--set", "sim.slack=false"])
    assert code == 3
    trace = read_csv(tmp_path / "trace.csv")
    assert trace.solver_status[-1] in ("Infeasible", "MaxIterations") and len(trace) < 1001


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[scenario\nplant = actuator\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    bad.write_text("[scenario]\nplant = actuator\nfilter = none\ncolour = blue\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["run", "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_cli_gate_exits_before_simulation(tmp_path, capsys):
    out = tmp_path / "o"
    code = cli.main(["run", "--config", UNI, "--out", str(out), "--set", "barrier.alpha_h=4"])
    assert code == 1
    assert "gate" in capsys.readouterr().err.lower()
    assert not out.exists()


def test_cli_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "--config", ACT, "--quiet", "--set", "sim.duration=0.1"]) == 0
    assert (tmp_path / "env" / "trace.csv").exists()


def test_cli_rerun_identical_bytes(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["run", "--config", ACT, "--out", str(tmp_path / d), "--quiet",
                         "--set", "sim.duration=1"]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert (tmp_path / "a" / "metrics.txt").read_bytes() == (tmp_path / "b" / "metrics.txt").read_bytes()


def test_cli_bounds_actuator(capsys):
    assert cli.main(["bounds", "--lambda", "5,5,5,5", "--h", "1,1,1,1", "--delta-b", "0.9", "--delta-l", "1"]) == 0
    text = capsys.readouterr().out
    vals = parse_bounds(text)
    assert "mu_e = 1.25\n" in text
    assert abs(vals["D"] - 1) <= 1e-10 and abs(vals["tau_e"] - 5) <= 1e-10 and abs(vals["P_norm"] - 0.1) <= 1e-10
    assert vals["e_bar_inf"] == pytest.approx(0.2, abs=1e-12)
    assert vals["e_bar_0"] == pytest.approx(0.9, abs=1e-12)
    assert vals["gamma"] == pytest.approx(0.1, abs=1e-12)
    assert "P =" in text and "gate = pass" in text


def test_cli_bounds_unicycle(capsys):
    assert cli.main(["bounds", "--lambda", "4,4,4", "--h", "8,8,8", "--delta-b", "1.5", "--delta-l", "0.5",
                     "--alpha-h", "1", "--sigma-v", "1"]) == 0
    vals = parse_bounds(capsys.readouterr().out)
    assert abs(vals["D"] - 1) <= 1e-10 and abs(vals["tau_e"] - 4) <= 1e-10 and abs(vals["P_norm"] - 1) <= 1e-10
    assert vals["e_bar_inf"] == pytest.approx(1.0, abs=1e-12)
    assert vals["gate_E"] == pytest.approx(1.5, abs=1e-12)


def test_cli_bounds_variants(capsys):
    assert cli.main(["bounds", "--lambda", "5,5,5,5", "--delta-b", "0.9", "--delta-l", "0"]) == 0
    assert parse_bounds(capsys.readouterr().out)["e_bar_inf"] == 0.0
    # full-matrix form and the config form agree with the diagonal form
    assert cli.main(["bounds", "--lambda", "4,0,0;0,4,0;0,0,4", "--h", "8,8,8", "--delta-b", "1.5",
                     "--delta-l", "0.5"]) == 0
    full = parse_bounds(capsys.readouterr().out)
    assert cli.main(["bounds", "--config", UNI]) == 0
    from_cfg = parse_bounds(capsys.readouterr().out)
    assert full["tau_e"] == from_cfg["tau_e"] == 4.0
    assert cli.main(["bounds", "--lambda", "4,4,4", "--alpha-h", "5"]) == 0
    assert "gate = fail" in capsys.readouterr().out


def test_cli_bounds_errors():
    assert cli.main(["bounds", "--lambda", "5,-1"]) == 1
    assert cli.main(["bounds", "--lambda", "1,2;3,4"]) == 1
    assert cli.main(["bounds", "--lambda", "1,2;3"]) == 1
    assert cli.main(["bounds"]) == 1
    assert cli.main(["bounds", "--lambda", "5,5", "--h", "1,1,1"]) == 1


def test_cli_compare_unicycle(tmp_path, capsys):
    code = cli.main(["compare", "--config", "table2_unicycle_cbf", "--filters", "cbf_qp,ue_cbf_qp,ue_iss_cbf_qp",
                     "--out", str(tmp_path)])
    assert code == 0
    table = (tmp_path / "comparison.txt").read_text().splitlines()
    assert table[0].split() == ["filter", "min_h", "first_violation_time", "infeasible_steps", "tracking_cost",
                                "status"]
    rows = {line.split()[0]: line.split() for line in table[1:]}
    assert rows["cbf_qp"][-1] == "unsafe" and float(rows["cbf_qp"][1]) < 0
    for name in ("ue_cbf_qp", "ue_iss_cbf_qp"):
        assert rows[name][-1] == "safe" and rows[name][2] == "none"
        assert (tmp_path / name / "trace.csv").exists()
    assert "filter" in capsys.readouterr().out


def test_cli_compare_errors(tmp_path):
    assert cli.main(["compare", "--config", ACT, "--filters", "", "--out", str(tmp_path / "a")]) == 1
    assert cli.main(["compare", "--config", ACT, "--out", str(tmp_path / "a")]) == 1
    assert cli.main(["compare", "--config", ACT, "--filters", "hocbf_qp,bogus", "--out", str(tmp_path / "a")]) == 1
    # an incompatible filter is rejected before anything runs
    assert cli.main(["compare", "--config", UNI, "--filters", "cbf_qp,ue_hocbf_qp", "--out",
                     str(tmp_path / "a")]) == 1
    assert not (tmp_path / "a").exists()


def test_cli_compare_abort_code(tmp_path):
    code = cli.main(["compare", "--config", "table2_unicycle_ue_cbf", "--filters", "cbf_qp,ue_cbf_qp", "--quiet",
                     "--out", str(tmp_path), "--set", "sim.slack=false", "--set", "sim.duration=8"])
    assert code == 3
    assert "aborted" in (tmp_path / "comparison.txt").read_text()
    assert (tmp_path / "ue_cbf_qp" / "trace.csv").exists()


def test_cli_list(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    assert "synthetic_socp.cfg" in out and "ue_hocbf_socp" in out


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "robust_cbf", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "table1_actuator_ue_hocbf.cfg" in res.stdout
