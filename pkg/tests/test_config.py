import pathlib

import pytest
import yaml

from spdefp.config import (
    ConfigError, config_hash, dump_config, load_config, parse_config, resolved_dict,
)


def test_defaults_are_filled():
    cfg = parse_config({})
    d = resolved_dict(cfg)
    assert d["run_kind"] == "validate"
    assert d["space"]["grid_size"] == 16
    assert d["sim"]["checkpoints"]["rule"] == "uniform"


def test_resolved_config_reloads_to_itself(tmp_path):
    cfg = parse_config({"run_kind": "ck", "space": {"n_modes": 4},
                        "drift": {"name": "cubic", "alpha": 0.0625}})
    path = tmp_path / "c.yaml"
    dump_config(cfg, path)
    again = load_config(path)
    assert resolved_dict(again) == resolved_dict(cfg)
    assert config_hash(again) == config_hash(cfg)


def test_unknown_keys_rejected_with_path():
    with pytest.raises(ConfigError, match=r"sim\.n_path"):
        parse_config({"sim": {"n_path": 10}})
    with pytest.raises(ConfigError, match="run_kind"):
        parse_config({"run_kind": "everything"})


@pytest.mark.parametrize("data, msg", [
    ({"space": {"n_modes": 8, "grid_size": 10}}, "2\\*n_modes"),
    ({"noise": {"rule": "fractional"}}, "delta_c"),
    ({"noise": {"rule": "explicit"}}, "values"),
    ({"sim": {"initial": {"kind": "gaussian"}}}, "var"),
    ({"sim": {"initial": {"constant": 1.0, "modes": [1.0]}}}, "at most one"),
    ({"sim": {"s": 0.5, "t_end": 0.5}}, "t_end"),
    ({"drift": {"alpha": 2.0}}, "alpha"),
    ({"sim": {"n_paths": 5}}, "n_paths"),
])
def test_invalid_values(data, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(data)


def test_yaml_error_reports_position(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("space:\n  n_modes: [1\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(path)
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)


def test_hash_ignores_workers_only():
    a = parse_config({"workers": 1})
    b = parse_config({"workers": 4})
    c = parse_config({"sim": {"seed": 7}})
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_acceptance_configs_parse():
    root = pathlib.Path(__file__).resolve().parents[1] / "configs" / "acceptance"
    files = sorted(root.glob("*.yaml"))
    assert len(files) >= 10
    for f in files:
        cfg = load_config(f)
        assert yaml.safe_load(f.read_text())["run_kind"] == cfg.run_kind
