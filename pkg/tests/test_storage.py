import json

import numpy as np
import pytest

from spdefp.engine import InitialLaw, SimConfig, simulate_ensemble
from spdefp.storage import MAGIC, read_ensemble, write_ensemble


@pytest.fixture
def ens(space8, noise8, cubic):
    cfg = SimConfig(0.0, 0.5, 1 / 64, (0.0, 0.25, 0.5), 300, 42)
    return simulate_ensemble(space8, noise8, cubic, cfg, InitialLaw.dirac(np.full(8, 0.1)))


def test_round_trip(tmp_path, ens):
    path = tmp_path / "ensemble.bin"
    write_ensemble(path, ens, extra={"config_hash": "abc"})
    times, ids, states = read_ensemble(path)
    np.testing.assert_array_equal(times, ens.times)
    np.testing.assert_array_equal(ids, ens.path_ids)
    np.testing.assert_array_equal(states, ens.states)
    side = json.load(open(str(path) + ".json"))
    assert side["seed"] == "42" and side["config_hash"] == "abc"
    assert side["diagnostics"]["n_members"] == 300
    assert path.stat().st_size == 28 + 8 * 3 + 8 * 300 + 8 * 300 * 3 * 8


def test_layout_is_path_major(tmp_path, ens):
    path = tmp_path / "e.bin"
    write_ensemble(path, ens)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    body = np.frombuffer(raw, "<f8", offset=28 + 8 * 3 + 8 * 300)
    np.testing.assert_array_equal(body[:8], ens.states[0, 0])
    np.testing.assert_array_equal(body[8:16], ens.states[1, 0])


def test_rejects_corrupt_files(tmp_path, ens):
    path = tmp_path / "e.bin"
    write_ensemble(path, ens)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_ensemble(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"X" + raw[1:])
    with pytest.raises(ValueError, match="not an ensemble"):
        read_ensemble(tmp_path / "magic.bin")
