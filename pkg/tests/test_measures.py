import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spdefp.engine import InitialLaw, SimConfig, simulate_ensemble
from spdefp.measures import (
    MAX_DIRECTIONS, TestDirectionSet, char_functional, char_table, compensated_mean,
    measure_distance, moment, write_estimates_csv,
)
from spdefp.spectral import build_space, identity_noise, ou_variance


@pytest.fixture(scope="module")
def ou_ens():
    sp = build_space(8, 16)
    noise = identity_noise(sp)
    cfg = SimConfig(0.0, 0.5, 1 / 64, (0.0, 0.25, 0.5), 40000, 3)
    return sp, noise, simulate_ensemble(sp, noise, None, cfg, InitialLaw.dirac(np.zeros(8)))


def test_compensated_mean_across_many_blocks():
    v = np.full(1 << 20, 0.1)
    assert abs(compensated_mean(v) - 0.1) <= 2 * np.spacing(0.1)
    w = np.random.default_rng(2).normal(1e8, 1.0, size=300001)
    assert compensated_mean(w) == pytest.approx(math.fsum(w) / len(w), rel=1e-15)
    with pytest.raises(ValueError):
        compensated_mean(np.array([]))


@settings(max_examples=40)
@given(arrays(np.float64, st.integers(1, 700), elements=st.floats(-1e6, 1e6)))
def test_compensated_mean_close_to_fsum(v):
    assert compensated_mean(v) == pytest.approx(math.fsum(v) / len(v), rel=1e-12, abs=1e-9)


def test_char_functional_of_ou_law(ou_ens):
    sp, noise, ens = ou_ens
    h = np.array([1.0, 2.0, 0, 0, 0, 0, 0, 0.5])
    est = char_functional(ens, 0.5, h)
    exact = math.exp(-0.5 * float(np.sum(ou_variance(sp, noise, 0.5) * h * h)))
    assert abs(est.value - exact) <= 4 * est.std_error
    assert est.n == 40000 and est.functional_id.startswith("char[")


def test_char_at_dirac_is_exact(ou_ens):
    _, _, ens = ou_ens
    est = char_functional(ens, 0.0, np.ones(8))
    assert est.value == 1 and est.std_error == 0


def test_moments(ou_ens):
    sp, noise, ens = ou_ens
    m = moment(ens, 0.25, "l2_sq")
    assert abs(m.value - np.sum(ou_variance(sp, noise, 0.25))) <= 4 * m.std_error
    f = moment(ens, 0.25, "frac_sobolev_sq", sp, delta=0.3)
    want = np.sum(sp.wavenumbers**0.6 * ou_variance(sp, noise, 0.25))
    assert abs(f.value - want) <= 4 * f.std_error
    assert moment(ens, 0.25, "l2m_pow", sp, m=1).value == pytest.approx(m.value, rel=1e-12)
    with pytest.raises(ValueError):
        moment(ens, 0.25, "l2m_pow")
    with pytest.raises(ValueError):
        moment(ens, 0.25, "entropy", sp)


def test_direction_set_rules(space8):
    d = TestDirectionSet.generate(space8, n_dir=3, n_rand=5, h_max=10.0)
    assert len(d) == 11 and d.labels[:2] == ("1*e1", "2*e1")
    for h in d.matrix()[6:]:
        assert np.sqrt(np.sum((space8.wavenumbers * h) ** 2)) <= 10.0 + 1e-9
    again = TestDirectionSet.generate(space8, n_dir=3, n_rand=5, h_max=10.0)
    np.testing.assert_array_equal(d.matrix(), again.matrix())
    with pytest.raises(ValueError):
        TestDirectionSet.of([np.ones(8)] * (MAX_DIRECTIONS + 1))
    with pytest.raises(ValueError):
        TestDirectionSet.of([np.zeros(8)])


def test_same_law_distance_passes(space8, noise8):
    law = InitialLaw.dirac(np.full(8, 0.2))
    a = simulate_ensemble(space8, noise8, None,
                          SimConfig(0.0, 0.25, 1 / 64, (0.0, 0.25), 20000, 1), law)
    b = simulate_ensemble(space8, noise8, None,
                          SimConfig(0.0, 0.25, 1 / 64, (0.0, 0.25), 20000, 2), law)
    dirs = TestDirectionSet.generate(space8)
    d = measure_distance(a, 0.25, b, 0.25, dirs)
    assert d.passed and d.max_abs_gap <= max(d.thresholds)
    far = simulate_ensemble(space8, noise8, None,
                            SimConfig(0.0, 0.25, 1 / 64, (0.0, 0.25), 20000, 3),
                            InitialLaw.dirac(np.full(8, 1.0)))
    assert not measure_distance(a, 0.25, far, 0.25, dirs).passed


def test_estimates_csv(tmp_path, ou_ens):
    _, _, ens = ou_ens
    path = tmp_path / "e.csv"
    write_estimates_csv(path, [(0.25, moment(ens, 0.25, "l2_sq"))])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["time", "functional_id", "value_re", "value_im", "std_error", "n"]
    assert rows[1][1] == "l2_sq@0.25" and int(rows[1][5]) == 40000


def test_char_table_shapes(ou_ens, space8):
    _, _, ens = ou_ens
    dirs = TestDirectionSet.generate(space8, n_dir=2, n_rand=3)
    m, se, n = char_table(ens, 0.5, dirs)
    assert m.shape == se.shape == (7,) and n == 40000
    assert np.all(np.abs(m) <= 1 + 1e-12)
