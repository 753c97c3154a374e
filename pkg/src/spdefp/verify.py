"""Weak Fokker-Planck identity, Chapman-Kolmogorov and alpha-convergence checks.

Test functions are ``u(t, x) = phi(t) exp(i <x, h(t)>)`` with ``phi(T) = 0``
and ``h`` piecewise C^1 in the span of the first N modes. Their image under
the Kolmogorov operator is available in closed form, so the weak identity
can be checked path by path (paired estimator).
"""

from dataclasses import dataclass, field, replace
import math
from typing import Callable, Optional
import warnings

import numpy as np

from . import rng
from .drift import drift_batch
from .engine import (
    InitialLaw, assemble, continue_ensemble, refined, run_paths, simulate_ensemble,
)
from .measures import TestDirectionSet, _distance, _mean_se, char_table, inner_products


class BreakpointWarning(UserWarning):
    """A test function was evaluated exactly at a breakpoint of its h path."""


# ---------------------------------------------------------------- test functions

def phi_catalog(name, T, s=0.0):
    """Time profiles with ``phi(T) = 0``: ``poly1``, ``poly2``, ``bump``.

    Returns ``(phi, dphi)``.
    """
    if name == "poly1":
        return (lambda t: T - t), (lambda t: -1.0 + 0.0 * t)
    if name == "poly2":
        return (lambda t: (T - t) ** 2), (lambda t: -2.0 * (T - t))
    if name == "bump":
        # exp(1 - 1/(1 - tau^2)) with tau = (t - s)/(T - s): peak 1 at s,
        # flat to all orders at T
        mid, half = s, T - s

        def phi(t):
            tau = (np.asarray(t, dtype=float) - mid) / half
            inside = np.abs(tau) < 1
            out = np.zeros_like(tau)
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - tau[inside] ** 2))
            return out if out.ndim else float(out)

        def dphi(t):
            tau = (np.asarray(t, dtype=float) - mid) / half
            inside = np.abs(tau) < 1
            out = np.zeros_like(tau)
            ti = tau[inside]
            out[inside] = (np.exp(1.0 - 1.0 / (1.0 - ti**2))
                           * (-2.0 * ti / (1.0 - ti**2) ** 2) / half)
            return out if out.ndim else float(out)

        return phi, dphi
    raise ValueError(f"unknown phi profile {name!r}")


PHI_NAMES = ("poly1", "poly2", "bump")


@dataclass(frozen=True)
class TestFunction:
    """``u(t, x) = phi(t) exp(i <x, h(t)>)``.

    ``h`` is piecewise affine through ``knots`` (one knot means constant).
    """

    phi: Callable
    dphi: Callable
    knots: tuple
    values: np.ndarray
    T: float
    label: str = "u"

    __test__ = False

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(self.knots) != vals.shape[0]:
            raise ValueError("one h value per knot")
        if list(self.knots) != sorted(set(self.knots)):
            raise ValueError("knots must be strictly increasing")
        if abs(float(self.phi(self.T))) > 1e-14:
            raise ValueError(f"phi(T) = {self.phi(self.T)!r}, must vanish")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))

    @property
    def breakpoints(self):
        return self.knots[1:-1] if len(self.knots) > 2 else ()

    def is_breakpoint(self, t):
        return any(abs(t - b) < 1e-12 for b in self.breakpoints)

    def _segment(self, t, side):
        k = np.asarray(self.knots)
        if len(k) == 1:
            return None
        if side == "left":
            j = int(np.searchsorted(k, t - 1e-12, side="left")) - 1
        else:
            j = int(np.searchsorted(k, t + 1e-12, side="right")) - 1
        return min(max(j, 0), len(k) - 2)

    def h(self, t):
        if len(self.knots) == 1:
            return self.values[0]
        j = self._segment(t, "right")
        t0, t1 = self.knots[j], self.knots[j + 1]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.values[j] + w * self.values[j + 1]

    def h_prime(self, t, side="right"):
        if len(self.knots) == 1:
            return np.zeros_like(self.values[0])
        j = self._segment(t, side)
        t0, t1 = self.knots[j], self.knots[j + 1]
        return (self.values[j + 1] - self.values[j]) / (t1 - t0)

    def u(self, t, x):
        theta = inner_products(np.atleast_2d(x), self.h(t)[None, :])[:, 0]
        return float(self.phi(t)) * (np.cos(theta) + 1j * np.sin(theta))

    def L(self, drift, space, noise, t, x, use_alpha=True, side="right"):
        return _L0(self, drift, space, noise, t, x, use_alpha, side)

    def terms(self):
        return ((1.0, self),)


@dataclass(frozen=True)
class Combination:
    """Finite linear combination of test functions."""

    terms_: tuple
    label: str = "combo"
    T: float = 1.0

    def u(self, t, x):
        return sum(c * tf.u(t, x) for c, tf in self.terms_)

    def L(self, drift, space, noise, t, x, use_alpha=True, side="right"):
        return sum(c * tf.L(drift, space, noise, t, x, use_alpha, side) for c, tf in self.terms_)

    def is_breakpoint(self, t):
        return any(tf.is_breakpoint(t) for _, tf in self.terms_)

    def terms(self):
        return self.terms_


def make_test_function(phi_name, h, T, s=0.0, label=None):
    """Constant-``h`` test function from the catalog."""
    phi, dphi = phi_catalog(phi_name, T, s)
    return TestFunction(phi, dphi, (s,), np.asarray(h, dtype=float)[None, :], T,
                        label or phi_name)


def piecewise_test_function(phi_name, knots, values, T, s=0.0, label=None):
    phi, dphi = phi_catalog(phi_name, T, s)
    return TestFunction(phi, dphi, tuple(knots), np.asarray(values, dtype=float), T,
                        label or f"{phi_name}-pw")


def _L0(tf, drift, space, noise, t, x, use_alpha, side):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h = tf.h(t)
    hp = tf.h_prime(t, side)
    phi = float(tf.phi(t))
    dphi = float(tf.dphi(t))
    theta = inner_products(x, h[None, :])[:, 0]
    e = np.cos(theta) + 1j * np.sin(theta)
    if phi == 0.0:
        return dphi * e
    lin = inner_products(x, (hp + space.eigenvalues * h)[None, :])[:, 0]
    if drift is not None and not drift.is_zero:
        d = drift if use_alpha else drift.with_alpha(0.0)
        F = drift_batch(d, space, t, x)
        lin = lin + inner_products(F, h[None, :])[:, 0]
    quad = 0.5 * float(np.sum(noise.c_diag * h * h))
    return (dphi - phi * quad + 1j * phi * lin) * e


def apply_L0(tf, drift, space, noise, t, x, use_alpha=False, side=None):
    """Closed-form Kolmogorov operator applied to a test function.

    ``x`` may be one state or an array of states. With ``use_alpha`` the
    regularized drift is used. At a breakpoint of ``h`` the one-sided value
    (``side``, default right) is returned and a :class:`BreakpointWarning`
    is issued unless ``side`` was given explicitly.
    """
    if side is None:
        side = "right"
        if tf.is_breakpoint(t):
            warnings.warn(f"t={t} is a breakpoint of h; returning the right-sided value",
                          BreakpointWarning, stacklevel=2)
    out = tf.L(drift, space, noise, t, x, use_alpha, side)
    return out[0] if np.ndim(x) == 1 else out


# ---------------------------------------------------------------- FP residual

@dataclass
class ResidualReport:
    test_fn_id: str
    t: float
    lhs: complex
    lhs_se: float
    rhs: complex
    rhs_se: float
    residual: complex
    residual_se: float
    quad_error: float
    dt_allowance: float
    error_budget: float
    passed: bool
    status: str
    n: int

    def to_dict(self):
        return {
            "test_fn_id": self.test_fn_id, "t": self.t,
            "lhs": [self.lhs.real, self.lhs.imag], "lhs_se": self.lhs_se,
            "rhs": [self.rhs.real, self.rhs.imag], "rhs_se": self.rhs_se,
            "residual": [self.residual.real, self.residual.imag],
            "residual_abs": abs(self.residual), "residual_se": self.residual_se,
            "quad_error": self.quad_error, "dt_allowance": self.dt_allowance,
            "error_budget": self.error_budget, "pass": self.passed,
            "status": self.status, "n": self.n,
        }


QUADRATURES = ("trapezoid", "midpoint")
MIN_CHECKPOINTS = 8


def _integrand_table(ens, drift, space, noise, tf, use_alpha):
    """Per-path ``L u`` at every checkpoint; left/right values at breakpoints."""
    right, left = [], []
    for j, t in enumerate(ens.times):
        t = float(t)
        X = ens.states[j]
        r = tf.L(drift, space, noise, t, X, use_alpha, "right")
        right.append(r)
        left.append(tf.L(drift, space, noise, t, X, use_alpha, "left")
                    if tf.is_breakpoint(t) else r)
    return np.array(left), np.array(right)


def _cumulative_trapezoid(times, left, right):
    cells = 0.5 * np.diff(times)[:, None] * (right[:-1] + left[1:])
    out = np.zeros_like(right)
    out[1:] = np.cumsum(cells, axis=0)
    return out


def _cumulative_midpoint(times, left, right):
    """Composite midpoint on double cells centred at odd checkpoints; an odd
    trailing cell is closed with the trapezoid."""
    out = np.zeros_like(right)
    acc = np.zeros_like(right[0])
    for j in range(1, len(times)):
        if j % 2 == 0:
            acc = acc + (times[j] - times[j - 2]) * right[j - 1]
            out[j] = acc
        else:
            out[j] = acc + 0.5 * (times[j] - times[j - 1]) * (right[j - 1] + left[j])
    return out


def _half_resolution(times, g):
    """Cumulative integrals of the piecewise-linear interpolant of the mean
    integrand ``g`` through the even-indexed checkpoints (plus the last)."""
    n = len(times)
    nodes = list(range(0, n, 2))
    if nodes[-1] != n - 1:
        nodes.append(n - 1)
    tn = times[nodes]
    re = np.interp(times, tn, g.real[nodes])
    im = np.interp(times, tn, g.imag[nodes])
    vals = re + 1j * im
    # the interpolant is linear between consecutive checkpoints too
    out = np.zeros(n, dtype=complex)
    out[1:] = np.cumsum(0.5 * np.diff(times) * (vals[1:] + vals[:-1]))
    return out


def _residual_samples(ens, drift, space, noise, tf, quadrature, use_alpha, zeta_states):
    """Per-path ``u(t_j, X_j)``, ``u(s, X_s)``, cumulative ``int L u`` and the
    per-checkpoint quadrature error estimate."""
    times = ens.times
    s = float(times[0])
    X_s = ens.states[0] if zeta_states is None else zeta_states
    U_s = tf.u(s, X_s)
    U = np.array([tf.u(float(t), ens.states[j]) for j, t in enumerate(times)])
    left, right = _integrand_table(ens, drift, space, noise, tf, use_alpha)
    trap = _cumulative_trapezoid(times, left, right)
    if quadrature == "trapezoid":
        I = trap
        ref = _half_resolution(times, right.mean(axis=1))
    else:
        I = _cumulative_midpoint(times, left, right)
        ref = trap.mean(axis=1)
    quad_err = np.abs(I.mean(axis=1) - ref) / 3.0
    quad_err[0] = 0.0
    return U, U_s, I, quad_err


def fp_residuals(ens, drift, space, noise, tf, zeta_states=None, quadrature="trapezoid",
                 use_alpha=True, ens_fine=None, dt_allowance=True, n_sigma=3.0, workers=1):
    """Weak Fokker-Planck residual at every checkpoint of ``ens``.

    ``lhs = mean u(t, X_t)`` and ``rhs = mean u(s, X_s) + int_s^t mean L u``,
    the time integral taken per path over the checkpoints (paired
    estimator). The error budget is ``n_sigma`` paired standard errors, a
    quadrature error estimate (Richardson against half resolution for the
    trapezoid, trapezoid comparison for the midpoint rule), and a time-step
    allowance from a coupled rerun at dt/2 (``ens_fine``, simulated on
    demand; skipped for the zero drift, whose OU steps are exact).
    """
    if quadrature not in QUADRATURES:
        raise ValueError(f"quadrature must be one of {QUADRATURES}")
    ens.require_valid()
    if len(ens.times) < MIN_CHECKPOINTS:
        raise ValueError(f"need at least {MIN_CHECKPOINTS} checkpoints for the time integral")
    if abs(ens.times[0] - ens.config.s) > 1e-12:
        raise ValueError("the ensemble must be checkpointed at its start time")
    U, U_s, I, quad_err = _residual_samples(ens, drift, space, noise, tf, quadrature,
                                            use_alpha, zeta_states)
    D = U - U_s - I
    allowance = np.zeros(len(ens.times))
    if dt_allowance and drift is not None and not drift.is_zero:
        if ens_fine is None:
            ens_fine = rerun_refined(ens, space, noise, drift, workers)
        Uf, Uf_s, If, _ = _residual_samples(ens_fine, drift, space, noise, tf, quadrature,
                                            use_alpha, None)
        res_f = (Uf - Uf_s - If).mean(axis=1)
        # first-order weak error: err(dt) ~ 2 (res(dt) - res(dt/2))
        allowance = 2.0 * np.abs(D.mean(axis=1) - res_f)
        allowance[0] = 0.0
    reports = []
    for j, t in enumerate(ens.times):
        lhs, lhs_se, n = _mean_se(U[j])
        rhs, rhs_se, _ = _mean_se(U_s + I[j])
        res, res_se, _ = _mean_se(D[j])
        budget = n_sigma * float(res_se) + float(quad_err[j]) + float(allowance[j])
        passed = abs(complex(res)) <= budget
        if j == 0:
            status = "pass"
        elif quad_err[j] > 10.0 * float(res_se):
            status = "inconclusive"
        else:
            status = "pass" if passed else "fail"
        reports.append(ResidualReport(
            test_fn_id=tf.label, t=float(t),
            lhs=complex(lhs), lhs_se=float(lhs_se), rhs=complex(rhs), rhs_se=float(rhs_se),
            residual=complex(res), residual_se=float(res_se), quad_error=float(quad_err[j]),
            dt_allowance=float(allowance[j]), error_budget=float(budget), passed=bool(passed),
            status=status, n=int(n)))
    return reports


def fp_residual(ens, drift, space, noise, tf, t_eval, **kw):
    """Residual report at the single checkpoint ``t_eval``."""
    return fp_residuals(ens, drift, space, noise, tf, **kw)[ens.index_of(t_eval)]


def rerun_refined(ens, space, noise, drift, workers=1):
    """Coupled rerun of ``ens`` with half the step size (same paths, same law)."""
    cfg = refined(ens.config)
    ids = np.arange(cfg.n_paths, dtype=np.int64)
    x0 = ens.initial_law.sample(cfg.seed, ids, space.n_modes)
    states, conv, ex = run_paths(space, noise, drift, cfg, x0, ids, ens.tag, workers)
    return assemble(cfg, ens.initial_law, states, conv, ex, ids, ens.tag)


# ---------------------------------------------------------------- Chapman-Kolmogorov

@dataclass
class CKReport:
    x: list
    r: float
    s: float
    t: float
    direct: list
    composed: list
    gaps: list
    thresholds: list
    labels: list
    passed: bool
    fraction_within: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "x": self.x, "r": self.r, "s": self.s, "t": self.t,
            "direct": [[v.real, v.imag, se] for v, se in self.direct],
            "composed": [[v.real, v.imag, se] for v, se in self.composed],
            "gaps": self.gaps, "thresholds": self.thresholds, "labels": self.labels,
            "pass": self.passed, "fraction_within": self.fraction_within,
            "diagnostics": self.diagnostics,
        }


def ck_check(space, noise, drift, x, r, s, t, sim, dirs=None, n_sigma=3.0, workers=1):
    """Compare ``p_{r,t}(x, .)`` with ``int p_{s,t}(x', .) p_{r,s}(x, dx')``.

    The direct arm runs from ``x`` over [r, t]. The composed arm runs over
    [r, s] and continues every endpoint over [s, t] on a fresh stream, so the
    two legs and the two arms are independent.
    """
    if not r < s < t:
        raise ValueError("need r < s < t")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    if dirs is None:
        dirs = TestDirectionSet.generate(space)
    law = InitialLaw.dirac(x)
    direct = simulate_ensemble(space, noise, drift, replace(sim, s=r, t_end=t, checkpoints=(r, t)),
                               law, workers=workers)
    leg1 = simulate_ensemble(space, noise, drift, replace(sim, s=r, t_end=s, checkpoints=(r, s)),
                             law, workers=workers, tag=rng.TAG_CK_BASE + 1)
    direct.require_valid()
    leg1.require_valid()
    leg2 = continue_ensemble(space, noise, drift, replace(sim, s=s, t_end=t, checkpoints=(s, t)),
                             leg1.at(s), leg1.path_ids, rng.TAG_CK_BASE + 2, workers)
    leg2.require_valid()
    ma, sa, _ = char_table(direct, t, dirs)
    mb, sb, _ = char_table(leg2, t, dirs)
    d = _distance(ma, sa, mb, sb, dirs, n_sigma)
    within = np.asarray(d.gaps) <= np.asarray(d.thresholds)
    return CKReport(
        x=[float(v) for v in x], r=float(r), s=float(s), t=float(t),
        direct=[(complex(v), float(e)) for v, e in zip(ma, sa)],
        composed=[(complex(v), float(e)) for v, e in zip(mb, sb)],
        gaps=list(d.gaps), thresholds=list(d.thresholds), labels=list(dirs.labels),
        passed=d.passed, fraction_within=float(np.mean(within)),
        diagnostics={"direct": direct.diagnostics(), "leg1": leg1.diagnostics(),
                     "leg2": leg2.diagnostics()},
    )


# ---------------------------------------------------------------- alpha sweep

@dataclass
class ConvergenceReport:
    alphas: list
    seeds: list
    labels: list
    pairs: list
    sup_gaps: list
    noise_floors: list
    monotone: bool
    final_below_floor: bool
    final_ratio: float
    moments: list
    moment_ratio: float
    moment_uniform: bool
    verdict: str
    signal: bool = True

    @property
    def converged(self):
        return self.verdict == "converging"

    def to_dict(self):
        return {
            "alphas": self.alphas, "seeds": [str(s) for s in self.seeds],
            "labels": self.labels, "pairs": self.pairs,
            "sup_gaps": self.sup_gaps, "noise_floors": self.noise_floors,
            "monotone": self.monotone, "final_below_floor": self.final_below_floor,
            "final_ratio": self.final_ratio, "moments": self.moments,
            "moment_ratio": self.moment_ratio, "moment_uniform": self.moment_uniform,
            "verdict": self.verdict, "signal": self.signal,
        }


def alpha_sweep(space, noise, drift_base, alphas, sim, zeta, dirs, workers=1,
                floor_sigma=3.0, final_factor=2.0, moment_factor=3.0):
    """Cauchy test of the alpha -> 0 limit on a finite direction set.

    Each alpha runs on an independent seed. For consecutive pairs the sup over
    checkpoints of the characteristic-functional gap is compared with a noise
    floor of ``floor_sigma`` combined standard errors (maximized over
    checkpoints). A sweep in which no gap clears its floor carries no
    evidence either way and is reported as ``"no signal"``.
    """
    alphas = [float(a) for a in alphas]
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly decreasing")
    seeds, tables, moments = [], [], []
    for i, a in enumerate(alphas):
        seed = rng.derive_seed(sim.seed, 0xA1FA, i)
        ens = simulate_ensemble(space, noise, drift_base.with_alpha(a), replace(sim, seed=seed),
                                zeta, workers=workers)
        ens.require_valid()
        rows = [char_table(ens, float(t), dirs)[:2] for t in ens.times]
        tables.append((np.array([m for m, _ in rows]), np.array([e for _, e in rows])))
        l2 = np.sum(ens.states**2, axis=-1)
        moments.append([float(v) for v in l2.mean(axis=1)])
        seeds.append(seed)
        del ens

    pairs, sup_gaps, floors = [], [], []
    for i in range(len(alphas) - 1):
        (ma, sa), (mb, sb) = tables[i], tables[i + 1]
        gap = np.abs(ma - mb)
        comb = np.sqrt(sa**2 + sb**2)
        pairs.append([alphas[i], alphas[i + 1]])
        sup_gaps.append([float(v) for v in gap.max(axis=0)])
        floors.append([float(v) for v in floor_sigma * comb.max(axis=0)])

    mom = np.array(moments)
    with np.errstate(divide="ignore", invalid="ignore"):
        hi, lo = mom.max(axis=0), mom.min(axis=0)
        ratio = np.where(hi > 0, hi / np.where(lo > 0, lo, np.nan), 1.0)
    moment_ratio = float(np.nanmax(ratio)) if np.all(np.isfinite(ratio)) else math.inf
    moment_uniform = moment_ratio < moment_factor

    if not pairs:
        return ConvergenceReport(alphas, seeds, list(dirs.labels), [], [], [], True, True,
                                 0.0, moments, moment_ratio, moment_uniform, "no comparisons")
    G, Fl = np.array(sup_gaps), np.array(floors)
    monotone = True
    for d in range(G.shape[1]):
        above = [p for p in range(G.shape[0]) if G[p, d] > Fl[p, d]]
        for p, q in zip(above, above[1:]):
            if not G[q, d] < G[p, d]:
                monotone = False
    final_ratio = float(np.max(G[-1] / Fl[-1]))
    final_below = final_ratio < final_factor
    signal = bool(np.any(G > Fl))
    if not signal:
        verdict = "no signal"
    elif monotone and final_below:
        verdict = "converging"
    else:
        verdict = "no convergence evidence"
    return ConvergenceReport(alphas, seeds, list(dirs.labels), pairs, sup_gaps, floors,
                             monotone, final_below, final_ratio, moments, moment_ratio,
                             moment_uniform, verdict, signal)
