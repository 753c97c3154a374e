"""Pointwise (Nemytskii) reaction drifts and their regularization.

A drift is given by two scalar functions ``f(xi, t, z)`` and ``h(xi, t, z)``
acting on the field values ``z = x(xi)``. The regularized drift divides the
summed field pointwise by ``1 + alpha |F|``.
"""

from dataclasses import dataclass, field, replace
import math
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.stats import qmc


class NonFiniteDriftError(FloatingPointError):
    """The drift overflowed on the collocation grid."""


def _const(value):
    value = float(value)

    def c(t):
        return np.full(np.shape(t), value) if np.ndim(t) else value

    c.constant = value
    return c


def profile(spec):
    """Build a scalar time profile from a config entry.

    Accepts a number, ``{"constant": v}``, ``{"affine": [a, b]}`` (a + b t), or
    ``{"piecewise": [[t0, v0], [t1, v1], ...]}`` (linear interpolation).
    """
    if isinstance(spec, (int, float)):
        return _const(spec)
    if callable(spec):
        return spec
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError(f"cannot interpret time profile {spec!r}")
    (kind, arg), = spec.items()
    if kind == "constant":
        return _const(arg)
    if kind == "affine":
        a, b = map(float, arg)
        return lambda t: a + b * np.asarray(t, dtype=float)
    if kind == "piecewise":
        pts = np.asarray(arg, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or np.any(np.diff(pts[:, 0]) <= 0):
            raise ValueError("piecewise profile needs increasing [t, value] pairs")
        return lambda t: np.interp(t, pts[:, 0], pts[:, 1])
    raise ValueError(f"unknown profile kind {kind!r}")


def _zero(xi, t, z):
    return np.zeros(np.broadcast(xi, t, z).shape)


@dataclass(frozen=True)
class DriftSpec:
    f_eval: Callable
    h_eval: Callable
    m: int
    c1_eval: Callable
    c2_eval: Callable
    c3_eval: Callable
    alpha: float = 0.0
    T: float = 1.0
    name: str = "custom"
    h_is_zero: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1 or self.m % 2 == 0:
            raise ValueError(f"polynomial degree m must be odd and positive, got {self.m}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    def with_alpha(self, alpha):
        return replace(self, alpha=float(alpha))

    @property
    def is_zero(self):
        return self.name == "zero" and self.h_is_zero


def drift_catalog(name, *, m=None, alpha=0.0, T=1.0, a=1.0, b=0.0, c=1.0,
                  h="zero", h_coef=0.0, c1=None, c2=None, c3=None):
    """Drifts addressable by name.

    ``cubic``: f = -z^3 + a z; ``cubic_time``: f = -c(t) z^3;
    ``linear``: f = b z; ``zero``: f = 0. ``h`` is one of ``zero``,
    ``linear`` (h_coef z) or ``constant`` (h_coef). ``c`` may be any
    time profile accepted by :func:`profile`. Omitted constants default to
    the smallest values for which the growth conditions hold.
    """
    params = {"a": a, "b": b, "h": h, "h_coef": h_coef}
    if name == "cubic":
        a = float(a)
        f = lambda xi, t, z: z * (a - z * z)
        # for a >= 0 the two terms have opposite signs, so max(1, a) suffices
        c1_def = max(1.0, a) if a >= 0 else 1.0 - a
        m_def, c2_def = 3, max(a, 0.0)
    elif name == "cubic_time":
        cp = profile(c)
        params["c"] = c
        f = lambda xi, t, z: -cp(t) * (z * z * z)
        m_def, c1_def, c2_def = 3, cp, 0.0
    elif name == "linear":
        b = float(b)
        f = lambda xi, t, z: b * z
        m_def, c1_def, c2_def = 1, abs(b), max(b, 0.0)
    elif name == "zero":
        f = _zero
        m_def, c1_def, c2_def = 1, 0.0, 0.0
    else:
        raise ValueError(f"unknown drift {name!r}")

    h_coef = float(h_coef)
    if h == "zero":
        h_fn, c3_def = _zero, 0.0
    elif h == "linear":
        h_fn, c3_def = (lambda xi, t, z: h_coef * z), abs(h_coef)
    elif h == "constant":
        h_fn, c3_def = (lambda xi, t, z: np.full(np.broadcast(xi, t, z).shape, h_coef)), abs(h_coef)
    else:
        raise ValueError(f"unknown h term {h!r}")

    return DriftSpec(
        f_eval=f,
        h_eval=h_fn,
        m=int(m if m is not None else m_def),
        c1_eval=profile(c1 if c1 is not None else c1_def),
        c2_eval=profile(c2 if c2 is not None else c2_def),
        c3_eval=profile(c3 if c3 is not None else c3_def),
        alpha=float(alpha),
        T=float(T),
        name=name,
        h_is_zero=(h == "zero"),
        params=params,
    )


def regularize_pointwise(w, alpha):
    """``w / (1 + alpha |w|)``; the identity when alpha == 0."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0:
        return w
    return w / (1.0 + alpha * np.abs(w))


def drift_on_grid(spec, space, t, values):
    """Pointwise drift ``F_alpha`` applied to grid values (..., Q)."""
    xi = space.grid
    with np.errstate(over="ignore", invalid="ignore"):
        w = spec.f_eval(xi, t, values)
        if not spec.h_is_zero:
            w = w + spec.h_eval(xi, t, values)
        return regularize_pointwise(w, spec.alpha)


def drift_batch(spec, space, t, x_modes):
    """Vectorized drift without the finiteness check (for the engine)."""
    if spec.is_zero:
        return np.zeros_like(np.asarray(x_modes, dtype=float))
    vals = space.to_grid(x_modes)
    return space.to_modes(drift_on_grid(spec, space, t, vals))


def evaluate_drift(spec, space, t, x_modes):
    """``F_alpha(t, x)`` projected onto the modes, via sine collocation."""
    if not -1e-12 <= t <= spec.T + 1e-12:
        raise ValueError(f"t={t} outside [0, {spec.T}]")
    x_modes = np.asarray(x_modes, dtype=float)
    vals = space.to_grid(x_modes)
    g = drift_on_grid(spec, space, t, vals)
    bad = ~np.isfinite(g)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        q = idx[-1]
        raise NonFiniteDriftError(
            f"drift is not finite at grid point xi={space.grid[q]:.6g} "
            f"(field value {vals[tuple(idx)]:.6g}); state left the resolvable range"
        )
    return space.to_modes(g)


def lyapunov_V(spec, space, t, x_modes):
    """``2 (c1(t) + c3(t)) (1 + |x|^m_{L^{2m}})``, vectorized over leading axes."""
    norm = space.lp_norm(x_modes, 2 * spec.m)
    return 2.0 * (spec.c1_eval(t) + spec.c3_eval(t)) * (1.0 + norm**spec.m)


def integrability(spec, T=None):
    """L^2 norm of c1, L^1 of c2, L^2 of c3 over [0, T]."""
    T = spec.T if T is None else T

    def norm(fn, p):
        val, _ = integrate.quad(lambda t: abs(float(fn(t))) ** p, 0.0, T, limit=200)
        return val ** (1.0 / p)

    return {"c1_L2": norm(spec.c1_eval, 2), "c2_L1": norm(spec.c2_eval, 1),
            "c3_L2": norm(spec.c3_eval, 2)}


@dataclass
class ConditionReport:
    f1_worst_ratio: float
    f2_worst: float
    h1_worst_ratio: float
    eq34_worst: float
    v_min: float
    dissipativity_K_estimate: float
    sample_count: int
    z_range: float
    integrability: dict
    passed: dict
    grade: str
    notes: list
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        def fin(v):
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "f1_worst_ratio": fin(self.f1_worst_ratio),
            "f2_worst": fin(self.f2_worst),
            "h1_worst_ratio": fin(self.h1_worst_ratio),
            "lyapunov_dominates_sq_norm_worst": fin(self.eq34_worst),
            "v_min": fin(self.v_min),
            "dissipativity_K_estimate": fin(self.dissipativity_K_estimate),
            "sample_count": self.sample_count,
            "z_range": self.z_range,
            "integrability": self.integrability,
            "passed": dict(self.passed),
            "grade": self.grade,
            "notes": list(self.notes),
            "diagnostics": {k: fin(v) if isinstance(v, float) else v
                            for k, v in self.diagnostics.items()},
        }


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return r


def probe_conditions(spec, space, n_z=256, n_t=9, n_xi=9, z_range=4.0,
                     n_states=256, tol=1e-9):
    """Probe the growth, dissipativity and domination conditions on a box.

    Sampling is deterministic (unscrambled Sobol points), so reports are
    reproducible. ``passed`` is always relative to ``|z| <= z_range``.
    """
    if n_z < 2 or n_t < 1 or n_xi < 1 or z_range <= 0:
        raise ValueError("sampling plan must be nonempty with z_range > 0")
    T = spec.T
    ts = np.linspace(0.0, T, n_t)
    xis = (np.arange(n_xi) + 0.5) / n_xi
    sob = qmc.Sobol(d=2, scramble=False)
    pts = sob.random(1 << int(math.ceil(math.log2(n_z))))[:n_z]
    z = (2 * pts[:, 0] - 1) * z_range
    z2 = (2 * pts[:, 1] - 1) * z_range
    # include exact extremes and a near-diagonal pair family
    z = np.concatenate([z, [z_range, -z_range, 0.0]])
    z2 = np.concatenate([z2, [-z_range, z_range, 1e-6]])

    f1 = f2 = h1 = -np.inf
    for t in ts:
        c1, c2, c3 = float(spec.c1_eval(t)), float(spec.c2_eval(t)), float(spec.c3_eval(t))
        for xi in xis:
            fz = spec.f_eval(xi, t, z)
            hz = spec.h_eval(xi, t, z)
            f1 = max(f1, float(np.max(_ratio(np.abs(fz), c1 * (1 + np.abs(z) ** spec.m)))))
            h1 = max(h1, float(np.max(_ratio(np.abs(hz), c3 * (1 + np.abs(z))))))
            fz2 = spec.f_eval(xi, t, z2)
            d = z2 - z
            f2 = max(f2, float(np.max((fz2 - fz) * d - c2 * d * d)))

    # Galerkin states: coefficients from Sobol points, decaying like 1/k
    N = space.n_modes
    sob_x = qmc.Sobol(d=N, scramble=False)
    raw = sob_x.random(1 << int(math.ceil(math.log2(max(n_states, 2)))))[:n_states]
    scale = z_range / np.arange(1, N + 1)
    xs = (2 * raw - 1) * scale
    # the same pattern at smaller radii, where the linear part of f dominates
    xs = np.concatenate([xs, 0.25 * xs, 0.02 * xs])
    # neighbours in the sequence: distinct first coordinates, so x != y
    ys = np.roll(xs, 1, axis=0)
    unreg = spec.with_alpha(0.0)
    eq34 = -np.inf
    v_min = np.inf
    K = -np.inf
    for t in ts:
        V = lyapunov_V(spec, space, t, xs)
        eq34 = max(eq34, float(np.max(np.sum(xs * xs, axis=-1) - V)))
        v_min = min(v_min, float(np.min(V)))
        fx = drift_batch(unreg, space, t, xs)
        fy = drift_batch(unreg, space, t, ys)
        d = xs - ys
        K = max(K, float(np.max(np.sum((fx - fy) * d, axis=-1) / np.sum(d * d, axis=-1))))

    diag = _regularization_probe(spec, space, ts, xs, ys)
    integ = integrability(spec)
    passed = {
        "polynomial_bound": f1 <= 1 + tol,
        "quasi_dissipative": f2 <= tol,
        "linear_growth_h": h1 <= 1 + tol,
        "lyapunov_dominates_sq_norm": eq34 <= tol,
        "lyapunov_at_least_one": v_min >= 1 - tol,
        "coefficients_integrable": all(math.isfinite(v) for v in integ.values()),
    }
    notes = []
    if not passed["lyapunov_at_least_one"]:
        notes.append("V < 1 on sampled states; need 2(c1 + c3) >= 1")
    c2_const = getattr(spec.c2_eval, "constant", None) is not None
    uniqueness = all(passed.values()) and spec.h_is_zero and c2_const
    if not spec.h_is_zero:
        notes.append("h is not identically zero: existence-grade only")
    if not c2_const:
        notes.append("c2 is not constant: existence-grade only")
    return ConditionReport(
        f1_worst_ratio=f1,
        f2_worst=f2,
        h1_worst_ratio=h1,
        eq34_worst=eq34,
        v_min=v_min,
        dissipativity_K_estimate=K,
        sample_count=int(len(z) * n_t * n_xi + 3 * n_states * n_t),
        z_range=float(z_range),
        integrability=integ,
        passed=passed,
        grade="uniqueness" if uniqueness else "existence",
        notes=notes + diag.pop("notes"),
        diagnostics=diag,
    )


def _regularization_probe(spec, space, ts, xs, ys, eps=1e-6):
    """Recorded, non-gating checks of the regularized drift on sampled states.

    * ``|F_alpha| <= |F|`` in L^2;
    * ``|<h, F - F_alpha>| <= alpha c(h) |F|`` with ``c(h) = |h|``, over the
      unit eigen-directions (worst ratio and violation count);
    * sampled continuity of ``x -> <h, F_alpha(t, x)>`` (warning only).
    """
    unreg = spec.with_alpha(0.0)
    N = space.n_modes
    H = np.eye(N)
    dom_worst = -np.inf
    c_worst = 0.0
    violations = 0
    cont_worst = 0.0
    for t in ts:
        F = drift_batch(unreg, space, t, xs)
        Fa = drift_batch(spec, space, t, xs)
        nF = np.sqrt(np.sum(F * F, axis=-1))
        nFa = np.sqrt(np.sum(Fa * Fa, axis=-1))
        dom_worst = max(dom_worst, float(np.max(nFa - nF)))
        if spec.alpha > 0:
            lhs = np.abs((F - Fa) @ H.T)  # |h| = 1
            ratio = _ratio(lhs, spec.alpha * nF[:, None])
            c_worst = max(c_worst, float(np.max(ratio)))
            violations += int(np.sum(ratio > 1 + 1e-9))
        d = ys - xs
        d = d / np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
        Fb = drift_batch(spec, space, t, xs + eps * d)
        cont_worst = max(cont_worst, float(np.max(np.abs(Fb - Fa))) / eps)
    notes = []
    if violations:
        notes.append(f"<h, F - F_alpha> exceeded alpha |h| |F| in {violations} samples "
                     f"(worst ratio {c_worst:.4g}); the constant c(h) = |h| is too small here")
    if not math.isfinite(cont_worst):
        notes.append("warning: <h, F_alpha> is not continuous on the sampled states")
    return {
        "regularized_norm_excess_worst": dom_worst,
        "regularization_constant_worst_ratio": c_worst,
        "regularization_constant_violations": violations,
        "drift_continuity_modulus": cont_worst,
        "regularized_bounded_by_unregularized": bool(dom_worst <= 1e-9 * (1 + abs(dom_worst))),
        "notes": notes,
    }
