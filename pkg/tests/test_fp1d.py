import math

import numpy as np
import pytest

from spdefp import fp1d
from spdefp.drift import drift_catalog
from spdefp.engine import SimConfig, uniform_checkpoints
from spdefp.fp1d import (
    char_from_density, cross_check, gaussian_density, make_grid, scalar_drift, solve_fp,
)
from spdefp.measures import TestDirectionSet
from spdefp.spectral import build_space, identity_noise, ou_variance


@pytest.fixture
def one_mode():
    sp = build_space(1, 16)
    return sp, identity_noise(sp, 4.0)


def test_gaussian_cells_and_char():
    g = make_grid(-3, 3, 2400)
    p = gaussian_density(g, 0.5, 0.04)
    assert np.sum(p) * g.dx == pytest.approx(1.0, abs=1e-12)
    for h in (0.0, 1.0, 5.0):
        want = np.exp(1j * h * 0.5 - 0.5 * 0.04 * h * h)
        # piecewise-constant cells cost about (h dx)^2 / 24
        assert abs(char_from_density(g, p, [h])[0] - want) < (h * g.dx) ** 2 / 12 + 1e-12


def test_scalar_drift_is_linear_plus_projected(one_mode):
    sp, _ = one_mode
    x = np.array([-1.0, 0.2, 1.5])
    np.testing.assert_allclose(scalar_drift(sp, None, 0.0, x), -math.pi**2 * x)
    d = drift_catalog("cubic", alpha=0.0)
    assert np.all(np.abs(scalar_drift(sp, d, 0.0, x) + math.pi**2 * x) > 0)


def test_pde_reproduces_ou_law(one_mode):
    sp, noise = one_mode
    g = make_grid(-3, 4, 700)
    times = [0.0, 0.05, 0.2]
    dens = solve_fp(sp, noise, None, g, gaussian_density(g, 1.0, 0.01), times, 1e-3)
    for t, p in zip(times, dens):
        mean = math.exp(-math.pi**2 * t)
        var = 0.01 * mean**2 + float(ou_variance(sp, noise, t)[0])
        for h in (1.0, 3.0):
            want = np.exp(1j * h * mean - 0.5 * var * h * h)
            assert abs(char_from_density(g, p, [h])[0] - want) < 2e-4
    mass = dens.sum(axis=1) * g.dx
    np.testing.assert_allclose(mass, 1.0, atol=1e-12)


def test_pde_keeps_density_nonnegative_enough(one_mode):
    sp, noise = one_mode
    g = make_grid(-4, 4, 400)
    d = drift_catalog("cubic", alpha=1 / 16)
    dens = solve_fp(sp, noise, d, g, gaussian_density(g, 1.0, 0.01), [0.0, 0.1], 1e-3)
    assert dens[-1].min() > -1e-6


def test_cross_check_passes_for_cubic(one_mode):
    sp, noise = one_mode
    d = drift_catalog("cubic", alpha=1 / 16, T=0.25)
    sim = SimConfig(0.0, 0.25, 1 / 256, uniform_checkpoints(0.0, 0.25, 4), 20000, 17)
    dirs = TestDirectionSet.generate(sp)
    rep = cross_check(sp, noise, d, sim, 1.0, 0.01, dirs, n_cells=400)
    assert rep.passed and rep.mass_defect < 1e-10
    assert len(rep.gaps) == 5 and len(rep.gaps[0]) == len(dirs)


def test_cross_check_detects_wrong_drift(one_mode):
    # oracle built with a different drift must disagree
    sp, noise = one_mode
    sim = SimConfig(0.0, 0.25, 1 / 256, uniform_checkpoints(0.0, 0.25, 4), 20000, 17)
    dirs = TestDirectionSet.generate(sp)
    real = fp1d.solve_fp

    def wrong(space, noise_, drift, *a):
        return real(space, noise_, drift_catalog("linear", b=5.0, alpha=1 / 16), *a)

    fp1d.solve_fp = wrong
    try:
        rep = cross_check(sp, noise, drift_catalog("cubic", alpha=1 / 16, T=0.25), sim,
                          1.0, 0.01, dirs, n_cells=400)
    finally:
        fp1d.solve_fp = real
    assert not rep.passed


def test_cross_check_needs_one_mode():
    sp = build_space(2, 4)
    sim = SimConfig(0.0, 0.25, 1 / 64, (0.0, 0.25), 200, 1)
    with pytest.raises(ValueError, match="single-mode"):
        cross_check(sp, identity_noise(sp), None, sim, 0.0, 0.1, TestDirectionSet.generate(sp))
