import json
import os

import numpy as np
import pytest
import yaml

from qptorus import cli, checks
from qptorus.config import RunConfig, ConfigError


BASE_CONFIG = {
    "model": {"name": "duffing", "params": {"k": 1.0, "c": 0.4, "alpha": 0.0}},
    "torus": {"d": 2, "e": 2, "harmonics": [[0, 1]], "s1": 512},
    "forcing": {"terms": [{"amplitude": 0.3, "index": 1},
                          {"amplitude": 0.2, "index": 2}],
                "ratios": [float(1.0 / np.sqrt(2.0))]},
    "omega": {"base": 1.7},
    "seed": {"source": "linear"},
    "continuation": {"parameter": "omega1", "range": [1.7, 1.85],
                     "step": 0.05, "deficit_case": 1, "epsilon": 1e-8,
                     "max_points": 4},
    "run": {"workers": 1},
}


def write_config(tmp_path, overrides=None, name="run.yaml"):
    data = json.loads(json.dumps(BASE_CONFIG))
    for section, vals in (overrides or {}).items():
        data.setdefault(section, {}).update(vals)
    path = os.path.join(tmp_path, name)
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh)
    return path


def test_solve_linear_analytic_seed(tmp_path):
    out = os.path.join(tmp_path, "out")
    cfg = write_config(tmp_path, {"run": {"output_dir": out}})
    rc = cli.main(["solve", cfg])
    assert rc == 0
    snap = json.load(open(os.path.join(out, "snapshot.json")))
    assert snap["residual_norm"] < 1e-8
    assert os.path.exists(os.path.join(out, "resolved_config.yaml"))


def test_solve_duffing_zero_seed(tmp_path):
    out = os.path.join(tmp_path, "out")
    cfg = write_config(tmp_path, {
        "model": {"params": {"k": 1.0, "c": 0.1, "alpha": 1.0}},
        "omega": {"base": 1.9},
        "seed": {"source": "zero"},
        "run": {"output_dir": out},
    })
    assert cli.main(["solve", cfg]) == 0
    snap = json.load(open(os.path.join(out, "snapshot.json")))
    assert snap["residual_norm"] < 1e-8


def test_solve_rerun_bit_identical(tmp_path):
    out1 = os.path.join(tmp_path, "out1")
    out2 = os.path.join(tmp_path, "out2")
    cfg1 = write_config(tmp_path, {"run": {"output_dir": out1}}, "a.yaml")
    cfg2 = write_config(tmp_path, {"run": {"output_dir": out2}}, "b.yaml")
    assert cli.main(["solve", cfg1]) == 0
    assert cli.main(["solve", cfg2]) == 0
    a = open(os.path.join(out1, "snapshot.json")).read()
    b = open(os.path.join(out2, "snapshot.json")).read()
    assert a == b


def test_nyquist_violation_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, {"torus": {"samples": [2]}})
    rc = cli.main(["solve", cfg])
    assert rc == 1
    assert "sampling bound" in capsys.readouterr().err


def test_unknown_key_exits_one(tmp_path):
    path = os.path.join(tmp_path, "bad.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump({"modle": {"name": "duffing"}}, fh)
    assert cli.main(["solve", path]) == 1


def test_nonconvergence_exits_two(tmp_path):
    # a tolerance below the double-precision residual floor cannot be met,
    # so the Newton loop must exhaust its budget and report failure
    cfg = write_config(tmp_path, {
        "continuation": {"epsilon": 1e-18},
        "torus": {"d": 2, "e": 2, "harmonics": [[0, 1]], "s1": 64},
    })
    rc = cli.main(["solve", cfg])
    assert rc == 2


def test_continue_writes_branch_and_sidecar(tmp_path):
    out = os.path.join(tmp_path, "out")
    cfg = write_config(tmp_path, {"run": {"output_dir": out}})
    assert cli.main(["continue", cfg]) == 0
    rows = open(os.path.join(out, "branch.csv")).read().strip().splitlines()
    assert rows[0].startswith("p,omega_1,omega_2,amplitude")
    assert len(rows) >= 3
    side = json.load(open(os.path.join(out, "branch_points.json")))
    assert len(side["points"]) == len(rows) - 1
    # analytic frequency response at every accepted point
    from qptorus.oracle import linear_quasiperiodic_response
    from qptorus.harmonics import HarmonicScheme
    from qptorus.model import make_duffing, FrequencyVector
    sch = HarmonicScheme([[0, 1]])
    m = make_duffing(1.0, 0.4, 0.0, forcing=[(0.3, 1), (0.2, 2)])
    for pt in side["points"]:
        freq = FrequencyVector(np.array(pt["omega"]), 2)
        exact = linear_quasiperiodic_response(
            m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
        assert np.abs(np.array(pt["Z0"]) - exact.Z0).max() < 1e-5


def test_continue_empty_range_single_point(tmp_path):
    out = os.path.join(tmp_path, "out")
    cfg = write_config(tmp_path, {
        "continuation": {"range": [1.7, 1.7], "max_points": 1},
        "run": {"output_dir": out},
    })
    assert cli.main(["continue", cfg]) == 0
    rows = open(os.path.join(out, "branch.csv")).read().strip().splitlines()
    assert len(rows) == 2  # header plus the seed point


def test_continue_seed_failure_exits_two(tmp_path):
    cfg = write_config(tmp_path, {
        "continuation": {"epsilon": 1e-18},
    })
    assert cli.main(["continue", cfg]) == 2


def test_stability_command(tmp_path):
    out = os.path.join(tmp_path, "out")
    cfg = write_config(tmp_path, {"run": {"output_dir": out},
                                  "stability": {"n_ly": 300}})
    assert cli.main(["solve", cfg]) == 0
    snap = os.path.join(out, "snapshot.json")
    assert cli.main(["stability", cfg, snap, "--history"]) == 0
    rows = open(os.path.join(out, "stability.csv")).read().splitlines()
    assert rows[0] == "order,exponent"
    flag = rows[-1].split(",")[1]
    assert flag == "stable"
    exps = [float(r.split(",")[1]) for r in rows[1:-1]]
    assert max(abs(e + 0.2) for e in exps) < 1e-2  # -c/2 for the linear model
    assert os.path.exists(os.path.join(out, "stability_history.csv"))


def test_check_command_passes_fresh(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["check", cfg]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.count("PASS") == len(checks.CHECKS)


def test_check_detects_broken_rotation(tmp_path, capsys, monkeypatch):
    from qptorus import harmonics

    orig = harmonics.rotation_matrix

    def broken(rho, k_matrix):
        R = orig(rho, k_matrix)
        R[1:, 1:] = R[1:, 1:].T  # flip the rotation direction
        return R

    monkeypatch.setattr(harmonics, "rotation_matrix", broken)
    cfg = write_config(tmp_path)
    assert cli.main(["check", cfg]) != 0
    out = capsys.readouterr().out
    assert "FAIL rotation-identities" in out


def test_bench_single_worker_baseline(tmp_path):
    out = os.path.join(tmp_path, "out")
    cfg = write_config(tmp_path, {
        "model": {"name": "cubic_chain",
                  "params": {"n": 6, "k": 1.0, "c": 0.02, "alpha": 0.4}},
        "torus": {"d": 2, "e": 2, "harmonics": [[0, 1]], "s1": 64},
        "run": {"output_dir": out},
    })
    assert cli.main(["bench", cfg, "--workers", "1", "--repeats", "1"]) == 0
    rows = open(os.path.join(out, "bench.csv")).read().strip().splitlines()
    first = rows[1].split(",")
    assert first[0] == "1"
    assert float(first[2]) == 1.0  # speedup is defined against this run


def test_config_validation_rules():
    with pytest.raises(ConfigError):
        RunConfig({"torus": {"d": 2, "e": 3, "harmonics": [[0, 1]]}})
    with pytest.raises(ConfigError):
        RunConfig({"torus": {"d": 2, "e": 2, "harmonics": []}})
    with pytest.raises(ConfigError):
        RunConfig({"forcing": {"terms": [{"amplitude": 1.0, "index": 2}]}})
    cfg = RunConfig(json.loads(json.dumps(BASE_CONFIG)))
    assert cfg.d == 2 and cfg.e == 2
    f = cfg.frequency_vector()
    assert f.omega[1] == pytest.approx(1.7 / np.sqrt(2.0))
