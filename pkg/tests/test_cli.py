import csv
import json
import subprocess
import sys

import pytest
import yaml

from spdefp.cli import emit_plotdata, main


def write_cfg(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


SMALL_CK = {
    "run_kind": "ck",
    "space": {"n_modes": 2},
    "sim": {"dt": 0.0125, "t_end": 0.5, "n_paths": 2000},
    "verify": {"directions": {"n_dir": 2, "n_rand": 2}},
}


def test_validate_exit_codes(tmp_path):
    ok = write_cfg(tmp_path, {"run_kind": "validate", "space": {"n_modes": 64}})
    assert main(["validate", "--config", ok, "--out", str(tmp_path / "a")]) == 0
    bad = write_cfg(tmp_path, {"verify": {"delta": 0.2}}, "bad.yaml")
    assert main(["validate", "--config", bad, "--out", str(tmp_path / "b")]) == 2
    rep = json.load(open(tmp_path / "b" / "report.json"))
    assert rep["status"] == "fail" and rep["result"]["hypotheses"]["trace_finite"] is False


def test_config_errors_exit_one(tmp_path, capsys):
    bad = write_cfg(tmp_path, {"sim": {"bogus": 1}})
    assert main(["run", "--config", bad, "--out", str(tmp_path / "o")]) == 1
    assert "sim.bogus" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml"),
                 "--out", str(tmp_path / "o")]) == 1
    ok = write_cfg(tmp_path, {}, "ok.yaml")
    assert main(["run", "--config", ok, "--out", str(tmp_path / "o"), "--workers", "0"]) == 1
    assert main(["run", "--config", ok, "--out", str(tmp_path / "o"),
                 "--seed", str(2**64)]) == 1


def test_artifacts_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_CK)
    assert main(["ck-check", "--config", cfg, "--out", str(tmp_path / "r1")]) == 0
    assert main(["ck-check", "--config", cfg, "--out", str(tmp_path / "r2"), "--workers", "2"]) == 0
    a = (tmp_path / "r1" / "report.json").read_bytes()
    b = (tmp_path / "r2" / "report.json").read_bytes()
    assert a == b
    for name in ("resolved_config.yaml", "manifest.json", "ck_gaps.csv"):
        assert (tmp_path / "r1" / name).exists()
    man = json.load(open(tmp_path / "r1" / "manifest.json"))
    assert man["exit_code"] == 0 and man["wall_seconds"] >= 0
    assert "ck_gaps.csv" in man["outputs"]
    rep = json.loads(a)
    assert rep["config_hash"] == man["config_hash"] and "workers" not in rep["config"]


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_CK)
    main(["ck-check", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["ck-check", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "99"])
    ra = json.load(open(tmp_path / "a" / "report.json"))
    rb = json.load(open(tmp_path / "b" / "report.json"))
    assert rb["seed"] == "99" and ra["config_hash"] != rb["config_hash"]
    assert ra["result"]["ck"][0]["gaps"] != rb["result"]["ck"][0]["gaps"]
    resolved = yaml.safe_load(open(tmp_path / "b" / "resolved_config.yaml"))
    assert resolved["sim"]["seed"] == 99


def test_subcommand_overrides_run_kind(tmp_path):
    cfg = write_cfg(tmp_path, {"run_kind": "ck", "space": {"n_modes": 64}})
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "v")]) == 0
    assert json.load(open(tmp_path / "v" / "report.json"))["kind"] == "validate"


def test_simulate_writes_estimates_and_ensemble(tmp_path):
    cfg = write_cfg(tmp_path, {
        "run_kind": "simulate", "space": {"n_modes": 2},
        "sim": {"n_paths": 500, "checkpoints": {"n": 4}},
        "output": {"write_ensemble": True},
    })
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    rows = list(csv.reader(open(tmp_path / "s" / "estimates.csv")))
    assert rows[0] == ["time", "functional_id", "value_re", "value_im", "std_error", "n"]
    assert (tmp_path / "s" / "ensemble.bin").exists()
    rep = json.load(open(tmp_path / "s" / "report.json"))
    assert rep["result"]["gaussian_exactness"]["ks_level"] == 0.01


def test_plot_data(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_CK)
    main(["ck-check", "--config", cfg, "--out", str(tmp_path / "r")])
    rep = str(tmp_path / "r" / "report.json")
    assert main(["plot-data", rep, "--kind", "ck_gaps", "--out", str(tmp_path / "p")]) == 0
    rows = list(csv.reader(open(tmp_path / "p" / "ck_gaps.csv")))
    assert rows[0] == ["triple", "direction", "gap", "threshold", "pass"]
    assert len(rows) == 1 + 2 * 6
    assert main(["plot-data", rep, "--kind", "alpha_gaps", "--out", str(tmp_path / "p")]) == 1
    assert main(["plot-data", "--kind", "ck_gaps", "--out", str(tmp_path / "p")]) == 1
    with pytest.raises(ValueError):
        emit_plotdata([rep], "histogram", str(tmp_path))


def test_console_script_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "spdefp.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
