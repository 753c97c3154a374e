import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdefp.drift import drift_batch, drift_catalog
from spdefp.engine import InitialLaw, SimConfig, simulate_ensemble, uniform_checkpoints
from spdefp.measures import TestDirectionSet
from spdefp.spectral import NoiseSpec, build_space, identity_noise, ou_variance
from spdefp import verify
from spdefp.verify import (
    BreakpointWarning, Combination, TestFunction, _cumulative_midpoint, _cumulative_trapezoid,
    alpha_sweep,
    apply_L0, ck_check, fp_residual, fp_residuals, make_test_function, phi_catalog,
    piecewise_test_function,
)


def fd_generator(tf, drift, space, noise, t, x, use_alpha, step=1e-4):
    """Kolmogorov operator by central differences of ``u`` alone."""
    u = lambda s, y: tf.u(s, y)[0]
    out = (u(t + step, x) - u(t - step, x)) / (2 * step)
    F = drift_batch(drift if use_alpha else drift.with_alpha(0.0), space, t, x[None])[0]
    b = space.eigenvalues * x + F
    for k in range(space.n_modes):
        e = np.zeros(space.n_modes)
        e[k] = step
        up, mid, dn = u(t, x + e), u(t, x), u(t, x - e)
        out += 0.5 * noise.c_diag[k] * (up - 2 * mid + dn) / step**2
        out += b[k] * (up - dn) / (2 * step)
    return out


@pytest.mark.parametrize("phi", ["poly1", "poly2", "bump"])
@pytest.mark.parametrize("use_alpha", [False, True])
def test_apply_L0_against_finite_differences(phi, use_alpha):
    sp = build_space(4, 16)
    noise = NoiseSpec(np.array([1.0, 0.5, 2.0, 1.5]), 0.5)
    drift = drift_catalog("cubic", a=1.0, alpha=0.25, T=1.0)
    tf = piecewise_test_function(phi, (0.0, 0.4, 1.0),
                                 [[1.0, 0, 0.5, 0], [0.2, -1.0, 0, 0.3], [0, 0, 1.0, 1.0]], 1.0)
    x = np.array([0.4, -0.2, 0.1, 0.05])
    for t in (0.13, 0.55, 0.87):
        got = apply_L0(tf, drift, sp, noise, t, x, use_alpha=use_alpha)
        want = fd_generator(tf, drift, sp, noise, t, x, use_alpha)
        assert abs(got - want) <= 1e-6 * max(1.0, abs(want))


def test_apply_L0_closed_form_value():
    # u = (T - t) e^{i x_1}, zero drift, c = 1, one mode at x = 0:
    # L u = -1 - (T - t)/2
    sp = build_space(1, 2)
    tf = make_test_function("poly1", [1.0], 1.0)
    val = apply_L0(tf, drift_catalog("zero"), sp, identity_noise(sp), 0.3, np.zeros(1))
    assert val == pytest.approx(-1.0 - 0.35, abs=1e-15)


def test_apply_L0_vectorized_matches_scalar(space8, noise8, cubic, rng):
    tf = make_test_function("poly2", np.linspace(1, 0, 8), 0.5)
    X = rng.normal(scale=0.5, size=(6, 8))
    many = apply_L0(tf, cubic, space8, noise8, 0.2, X, use_alpha=True)
    one = [apply_L0(tf, cubic, space8, noise8, 0.2, x, use_alpha=True) for x in X]
    np.testing.assert_allclose(many, one, rtol=1e-14)


def test_breakpoint_warning_and_sides():
    sp = build_space(2, 4)
    tf = piecewise_test_function("poly1", (0.0, 0.5, 1.0), [[0, 0], [1, 0], [1, 1]], 1.0)
    x = np.array([0.3, 0.1])
    drift = drift_catalog("zero")
    with pytest.warns(BreakpointWarning):
        right = apply_L0(tf, drift, sp, identity_noise(sp), 0.5, x)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        left = apply_L0(tf, drift, sp, identity_noise(sp), 0.5, x, side="left")
    assert right != left


@pytest.mark.parametrize("name", ["poly1", "poly2", "bump"])
def test_phi_profiles(name):
    phi, dphi = phi_catalog(name, 0.5, 0.0)
    assert phi(0.5) == 0.0
    for t in (0.05, 0.2, 0.45):
        fd = (phi(t + 1e-6) - phi(t - 1e-6)) / 2e-6
        assert dphi(t) == pytest.approx(fd, rel=1e-6, abs=1e-9)
    with pytest.raises(ValueError):
        phi_catalog("hat", 1.0)


def test_test_function_validation():
    with pytest.raises(ValueError, match="vanish"):
        TestFunction(lambda t: 1.0, lambda t: 0.0, (0.0,), np.ones((1, 2)), 1.0)
    combo = Combination(((2.0, make_test_function("poly1", [1.0], 1.0)),
                         (-1.0, make_test_function("poly2", [0.5], 1.0))))
    u = combo.u(0.2, np.array([[0.1]]))
    assert u[0] == pytest.approx(2 * 0.8 * np.exp(0.1j) - 0.64 * np.exp(0.05j))


@settings(max_examples=25)
@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=12), st.floats(-3, 3), st.floats(-3, 3))
def test_cumulative_rules_exact_for_linear(steps, a, b):
    times = np.concatenate([[0.0], np.cumsum(steps)])
    g = (a + b * times)[:, None] * np.ones((1, 2))
    exact = (a * times + 0.5 * b * times**2)[:, None]
    np.testing.assert_allclose(_cumulative_trapezoid(times, g, g), exact * np.ones((1, 2)),
                               atol=1e-10)
    # double-cell midpoint is exact for linear integrands only on uniform pairs
    uni = np.linspace(0, 1, len(times))
    gu = (a + b * uni)[:, None]
    np.testing.assert_allclose(_cumulative_midpoint(uni, gu, gu)[:, 0],
                               a * uni + 0.5 * b * uni**2, atol=1e-10)


@pytest.fixture(scope="module")
def zero_setup():
    sp = build_space(4, 8)
    noise = identity_noise(sp)
    cfg = SimConfig(0.0, 0.5, 1 / 64, uniform_checkpoints(0.0, 0.5, 16), 20000, 5)
    ens = simulate_ensemble(sp, noise, None, cfg, InitialLaw.dirac(np.zeros(4)))
    return sp, noise, ens


@pytest.mark.parametrize("phi", ["poly1", "poly2", "bump"])
def test_zero_drift_residual_and_oracle(zero_setup, phi):
    sp, noise, ens = zero_setup
    h = np.array([1.0, 1.0, 0, 0])
    tf = make_test_function(phi, h, 0.5)
    reps = fp_residuals(ens, drift_catalog("zero"), sp, noise, tf)
    assert all(r.passed for r in reps)
    for r in reps:
        quad = float(np.sum(ou_variance(sp, noise, r.t) * h * h))
        exact = float(tf.phi(r.t)) * math.exp(-0.5 * quad)
        assert abs(r.lhs - exact) <= 3 * r.lhs_se + 1e-12
    one = fp_residual(ens, drift_catalog("zero"), sp, noise, tf, 0.25)
    assert one.t == 0.25 and one.residual == reps[8].residual


def test_residual_detects_wrong_generator(zero_setup):
    # feeding the wrong noise into L u must break the identity
    sp, noise, ens = zero_setup
    tf = make_test_function("poly1", [2.0, 0, 0, 0], 0.5)
    reps = fp_residuals(ens, drift_catalog("zero"), sp, noise.scaled(3.0), tf)
    assert sum(r.status == "fail" for r in reps) > len(reps) // 2


def test_residual_requirements(zero_setup):
    sp, noise, ens = zero_setup
    tf = make_test_function("poly1", [1.0, 0, 0, 0], 0.5)
    with pytest.raises(ValueError, match="quadrature"):
        fp_residuals(ens, None, sp, noise, tf, quadrature="simpson")
    mid = fp_residuals(ens, None, sp, noise, tf, quadrature="midpoint")
    assert all(r.passed for r in mid)


def test_cubic_residual_with_dt_allowance():
    sp = build_space(4, 8)
    noise = identity_noise(sp)
    drift = drift_catalog("cubic", alpha=0.25, T=0.5)
    cfg = SimConfig(0.0, 0.5, 1 / 64, uniform_checkpoints(0.0, 0.5, 16), 8000, 6)
    x0 = sp.project_function(np.ones_like)
    ens = simulate_ensemble(sp, noise, drift, cfg, InitialLaw.dirac(x0))
    tf = make_test_function("poly2", [1.0, 0.5, 0, 0], 0.5)
    reps = fp_residuals(ens, drift, sp, noise, tf)
    assert all(r.status != "fail" for r in reps)
    assert any(r.dt_allowance > 0 for r in reps)


def test_ck_zero_drift():
    sp = build_space(4, 8)
    noise = identity_noise(sp)
    cfg = SimConfig(0.0, 0.5, 1 / 64, (0.0, 0.5), 20000, 8)
    rep = ck_check(sp, noise, None, sp.project_function(lambda xi: 0.5 * np.sin(np.pi * xi)),
                   0.0, 0.25, 0.5, cfg)
    assert rep.passed and rep.fraction_within == 1.0
    assert rep.to_dict()["diagnostics"]["leg2"]["n_members"] == 20000
    with pytest.raises(ValueError):
        ck_check(sp, noise, None, np.zeros(4), 0.3, 0.25, 0.5, cfg)


def test_ck_detects_wrong_transition():
    # composing with a leg run under different noise must fail
    sp = build_space(2, 4)
    cfg = SimConfig(0.0, 0.5, 1 / 64, (0.0, 0.5), 20000, 8)
    a = ck_check(sp, identity_noise(sp, 4.0), None, np.ones(2), 0.0, 0.25, 0.5, cfg)
    assert a.passed
    real = verify.continue_ensemble

    def wrong(space, noise, *args, **kw):
        return real(space, noise.scaled(0.1), *args, **kw)

    verify.continue_ensemble = wrong
    try:
        b = ck_check(sp, identity_noise(sp, 4.0), None, np.ones(2), 0.0, 0.25, 0.5, cfg)
    finally:
        verify.continue_ensemble = real
    assert not b.passed


def test_alpha_sweep_structure():
    sp = build_space(2, 4)
    noise = identity_noise(sp)
    drift = drift_catalog("cubic", T=0.25)
    cfg = SimConfig(0.0, 0.25, 1 / 32, uniform_checkpoints(0.0, 0.25, 4), 2000, 4)
    dirs = TestDirectionSet.generate(sp, n_dir=2, n_rand=0)
    rep = alpha_sweep(sp, noise, drift, [1.0, 0.5, 0.25], cfg,
                      InitialLaw.dirac(np.array([1.0, 0.0])), dirs)
    d = rep.to_dict()
    assert d["pairs"] == [[1.0, 0.5], [0.5, 0.25]]
    assert len(d["sup_gaps"]) == 2 and len(d["sup_gaps"][0]) == len(dirs)
    assert len(set(d["seeds"])) == 3
    assert rep.verdict in ("converging", "no convergence evidence", "no signal")
    with pytest.raises(ValueError):
        alpha_sweep(sp, noise, drift, [0.5, 1.0], cfg, InitialLaw.dirac(np.zeros(2)), dirs)


def test_alpha_sweep_without_signal_is_flagged():
    # from rest with tiny noise the drift is negligible: no gap clears the floor
    sp = build_space(2, 4)
    noise = identity_noise(sp, 1e-6)
    drift = drift_catalog("cubic", T=0.25)
    cfg = SimConfig(0.0, 0.25, 1 / 32, uniform_checkpoints(0.0, 0.25, 4), 2000, 4)
    dirs = TestDirectionSet.generate(sp, n_dir=1, n_rand=0)
    rep = alpha_sweep(sp, noise, drift, [1.0, 0.5], cfg, InitialLaw.dirac(np.zeros(2)), dirs)
    assert not rep.signal and rep.verdict == "no signal" and not rep.converged
