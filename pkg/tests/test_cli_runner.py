import csv
import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from rpd_lab.cli_runner import main


def write_config(tmp_path, cfg: dict, name: str = "run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(tmp_path, command: str, cfg: dict, *extra: str, out: str = "out"):
    path = write_config(tmp_path, cfg, f"{out}.json")
    code = main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])
    report_path = tmp_path / out / "report.json"
    report = json.loads(report_path.read_text()) if report_path.exists() else None
    return code, report


def chain_cfg(kernel_csv, **kw) -> dict:
    cfg = {"schema_version": 1, "seed": 1, "system": {"kind": "chain", "kernel_csv": str(kernel_csv)}}
    cfg.update(kw)
    return cfg


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_analyze_chain_example(tmp_path, cyclic3_csv):
    code, rep = run(tmp_path, "analyze-chain", chain_cfg(cyclic3_csv))
    assert code == 0
    res = rep["results"]
    assert res["period"] == 2 and res["classes"] == [[0], [1, 2]]
    assert res["periodic_measure"][0] == [1.0, 0.0, 0.0]
    assert np.allclose(res["mean_measure"], [0.5, 0.25, 0.25], atol=1e-12)
    assert res["condition_A_residual"][1:] == [0.0] * 10
    rows = read_csv(tmp_path / "out" / "measures.csv")
    assert rows[0] == ["measure", "cell_lo", "cell_hi", "weight"]
    assert {r[0] for r in rows[1:]} == {"rho_0", "rho_1", "rho_bar"}


def test_kernel_path_is_relative_to_config(tmp_path, cyclic3_csv):
    cfg = chain_cfg(cyclic3_csv.name)
    code, rep = run(tmp_path, "analyze-chain", cfg)
    assert code == 0 and rep["config"]["system"]["kernel_csv"] == str(cyclic3_csv.resolve())


def test_inline_kernel(tmp_path):
    cfg = {"schema_version": 1, "seed": 3, "system": {"kind": "chain", "kernel": [[0, 1], [1, 0]]}}
    code, rep = run(tmp_path, "analyze-chain", cfg)
    assert code == 0 and rep["results"]["period"] == 2


def test_exit_codes_for_bad_kernels(tmp_path):
    ident = tmp_path / "ident.csv"
    ident.write_text("1,0\n0,1\n")
    code, rep = run(tmp_path, "analyze-chain", chain_cfg(ident), out="ident")
    assert code == 3 and rep["error"].startswith("MultipleClosedClasses")
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\nx,0\n")
    assert run(tmp_path, "analyze-chain", chain_cfg(bad), out="bad")[0] == 2
    sub = tmp_path / "sub.csv"
    sub.write_text("0.5,0.4\n1,0\n")
    assert run(tmp_path, "analyze-chain", chain_cfg(sub), out="sub")[0] == 2
    missing = tmp_path / "nope.csv"
    assert run(tmp_path, "analyze-chain", chain_cfg(missing), out="missing")[0] == 2


def test_config_errors(tmp_path, cyclic3_csv, capsys):
    cfg = chain_cfg(cyclic3_csv)
    del cfg["seed"]
    assert run(tmp_path, "analyze-chain", cfg, out="noseed")[0] == 2
    assert "seed" in capsys.readouterr().err
    assert run(tmp_path, "analyze-chain", chain_cfg(cyclic3_csv, schema_version=9), out="schema")[0] == 2
    assert run(tmp_path, "classify", chain_cfg(cyclic3_csv, command="simulate"), out="cmd")[0] == 2
    cfg = chain_cfg(cyclic3_csv, monte_carlo={"n_seeds": 0})
    assert run(tmp_path, "simulate", cfg, out="size")[0] == 2
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["classify", "--config", str(path), "--out", str(tmp_path / "x")]) == 2


def test_classify_cases(tmp_path, cyclic3_csv):
    code, rep = run(tmp_path, "classify", chain_cfg(cyclic3_csv, period=2), out="c2")
    assert code == 0 and rep["results"]["case"] == "I" and rep["results"]["minimal_period"] == 2
    assert np.allclose(rep["results"]["angle_variable"]["phase_per_state"], [0, math.pi, math.pi])
    rows = read_csv(tmp_path / "c2" / "spectrum.csv")
    assert rows[0] == ["index", "real", "imag", "modulus", "on_unit_circle"]
    assert [r[4] for r in rows[1:]] == ["True", "True", "False"]

    code, rep = run(tmp_path, "classify", chain_cfg(cyclic3_csv, period=4), out="c4")
    assert code == 0 and rep["results"]["case"] == "II" and rep["results"]["minimal_period"] == 2

    cfg = {"schema_version": 1, "seed": 1, "period": 2, "system": {"kind": "chain", "kernel": [[0.2, 0.8]] * 2}}
    code, rep = run(tmp_path, "classify", cfg, out="c3")
    assert code == 0 and rep["results"]["case"] == "III"

    assert run(tmp_path, "classify", chain_cfg(cyclic3_csv, period=3), out="c_bad")[0] == 2


def test_inconsistent_evidence_exit_code(tmp_path, cyclic3_csv, monkeypatch):
    from rpd_lab import cli_runner as cli
    from rpd_lab.errors import InconsistentEvidence

    def boom(*args, **kwargs):
        raise InconsistentEvidence("sections and spectrum disagree")

    monkeypatch.setattr(cli, "classify_regime", boom)
    code, rep = run(tmp_path, "classify", chain_cfg(cyclic3_csv))
    assert code == 4 and "InconsistentEvidence" in rep["error"]


def test_simulate_chain(tmp_path, cyclic3_csv):
    cfg = chain_cfg(cyclic3_csv, monte_carlo={"n_seeds": 4000, "n_samples": 2000})
    code, rep = run(tmp_path, "simulate", cfg)
    assert code == 0
    w1 = np.array(rep["results"]["pullback"]["1"]["weights"])
    assert w1[0] == 0 and np.all(np.abs(w1[1:] - 0.5) <= 3 * math.sqrt(0.25 / 4000))
    assert rep["results"]["pullback"]["0"]["weights"] == [1.0, 0.0, 0.0]
    traj = read_csv(tmp_path / "out" / "trajectory.csv")
    assert traj[0] == ["sample", "phase", "t", "state"]


def test_simulate_deterministic_logistic(tmp_path):
    cfg = {"schema_version": 1, "seed": 5, "system": {"kind": "logistic", "lam": 3.2, "mu": 3.2},
           "monte_carlo": {"n_seeds": 50, "n_samples": 50}}
    code, rep = run(tmp_path, "simulate", cfg)
    assert code == 0
    res = rep["results"]
    lo, hi = (4.2 - math.sqrt(0.84)) / 6.4, (4.2 + math.sqrt(0.84)) / 6.4
    assert np.allclose(res["two_cycle_reference"], [lo, hi], atol=1e-15)
    got = sorted([res["pullback"]["0"]["mean"], res["pullback"]["1"]["mean"]])
    assert np.allclose(got, [lo, hi], atol=1e-8)
    assert res["pullback"]["0"]["var"] < 1e-16


def test_simulate_noiseless_ou_is_a_point_mass(tmp_path):
    cfg = {"schema_version": 1, "seed": 2, "system": {"kind": "periodic_ou", "tau": 1.0, "sigma": 0.0, "n_phase": 50},
           "partition": {"lo": -1.0, "hi": 1.0, "n_cells": 20},
           "monte_carlo": {"n_seeds": 20, "n_samples": 50, "k_periods": 40}}
    code, rep = run(tmp_path, "simulate", cfg)
    assert code == 0
    sec = rep["results"]["section_phase0"]
    assert sec["var"] < 1e-28
    assert abs(sec["mean"] - sec["grid_reference_mean"]) < 1e-12
    assert abs(sec["mean"] - sec["reference_mean"]) < 2 * 1.0 / 50
    assert max(rep["results"]["pullback_phase0"]["weights"]) == 1.0


def test_simulate_too_many_failures(tmp_path):
    cfg = {"schema_version": 1, "seed": 2, "system": {"kind": "logistic", "lam": 3.2, "mu": 3.1, "p": 0.5},
           "monte_carlo": {"n_seeds": 20, "K_max": 2, "pullback_tol": 0.0}}
    code, rep = run(tmp_path, "simulate", cfg)
    assert code == 5 and rep["error"].startswith("TooManyFailures")


def test_slln_chain(tmp_path, cyclic3_csv):
    cfg = chain_cfg(cyclic3_csv, window={"F0": [0, 1]}, observable={"states": [0]}, monte_carlo={"T": 20000})
    code, rep = run(tmp_path, "slln", cfg, out="full")
    assert code == 0 and rep["results"]["final_average"] == 0.5
    code, rep = run(tmp_path, "slln", cfg, "--set", "window.F0=[0]", out="locked")
    assert code == 0 and rep["results"]["final_average"] == 1.0 and rep["results"]["final_gap"] == 0.0
    code, rep = run(tmp_path, "slln", cfg, "--set", "observable.states=[1]", "--set", "window.F0=[1]", out="b1")
    assert code == 0 and abs(rep["results"]["final_average"] - 0.5) <= rep["results"]["band"]


def test_slln_logistic_self_consistency(tmp_path):
    cfg = {"schema_version": 1, "seed": 4, "system": {"kind": "logistic", "lam": 3.2, "mu": 3.1, "p": 0.5},
           "window": {"F0": [0, 1]}, "observable": {"interval": [0.7, 0.9]},
           "monte_carlo": {"T": 4000, "n_seeds": 500}}
    code, rep = run(tmp_path, "slln", cfg)
    assert code == 0 and rep["results"]["passed"] and rep["results"]["target_source"] == "ensemble"


def test_slln_failed_check_exit_code(tmp_path, cyclic3_csv, monkeypatch):
    from rpd_lab import cli_runner as cli

    monkeypatch.setattr(cli, "window_targets", lambda pm, w: np.array([0.9, 0.05, 0.05]))
    cfg = chain_cfg(cyclic3_csv, observable={"states": [0]}, monte_carlo={"T": 2000})
    code, rep = run(tmp_path, "slln", cfg)
    assert code == 1 and rep["results"]["passed"] is False


def test_ulam_spectrum_lifted_ou(tmp_path):
    cfg = {"schema_version": 1, "seed": 0, "system": {"kind": "periodic_ou", "tau": 1.0, "sigma": 0.5, "n_phase": 4},
           "partition": {"lo": -2.0, "hi": 2.0, "n_cells": 40}, "ulam": {"n_per_cell": 200}}
    code, rep = run(tmp_path, "ulam-spectrum", cfg)
    assert code == 0
    res = rep["results"]
    assert res["roots_of_unity_match"] and res["n_unit_circle"] == 4 and res["multiplicities"] == [1, 1, 1, 1]
    assert not res["clamp_warning"]
    code, rep = run(tmp_path, "ulam-spectrum", cfg, "--set", "partition.hi=0.0", out="clamped")
    assert rep["results"]["clamp_warning"]


def test_ulam_spectrum_permutation_and_rank_one(tmp_path):
    perm = {"schema_version": 1, "seed": 0, "system": {"kind": "chain", "kernel": np.roll(np.eye(4), 1, 1).tolist()}}
    code, rep = run(tmp_path, "ulam-spectrum", perm, out="perm")
    assert code == 0 and rep["results"]["n_unit_circle"] == 4
    for z, k in zip(rep["results"]["unit_circle"], range(4)):
        assert abs(complex(*z) - np.exp(2j * np.pi * k / 4)) < 1e-12
    rank1 = {"schema_version": 1, "seed": 0, "system": {"kind": "chain", "kernel": [[0.3, 0.7]] * 2}}
    code, rep = run(tmp_path, "ulam-spectrum", rank1, out="rank1")
    assert code == 0 and rep["results"]["n_unit_circle"] == 1


def test_results_are_deterministic_and_echo_round_trips(tmp_path, cyclic3_csv):
    cfg = chain_cfg(cyclic3_csv, monte_carlo={"n_seeds": 300, "n_samples": 300})
    _, a = run(tmp_path, "simulate", cfg, out="a")
    _, b = run(tmp_path, "simulate", cfg, out="b")
    assert json.dumps(a["results"], sort_keys=True) == json.dumps(b["results"], sort_keys=True)
    assert (tmp_path / "a" / "measures.csv").read_bytes() == (tmp_path / "b" / "measures.csv").read_bytes()
    _, c = run(tmp_path, "simulate", a["config"], out="c")
    assert c["results"] == a["results"] and c["config"] == a["config"]
    _, d = run(tmp_path, "simulate", cfg, "--seed", "2", out="d")
    assert d["provenance"]["seed"] == 2 and d["results"] != a["results"]


def test_rpd_executable(tmp_path, cyclic3_csv):
    exe = shutil.which("rpd")
    if exe is None:
        pytest.skip("rpd entry point not installed")
    path = write_config(tmp_path, chain_cfg(cyclic3_csv))
    proc = subprocess.run([exe, "analyze-chain", "--config", str(path), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["exit_code"] == 0
