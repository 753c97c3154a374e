"""Truncated Dirichlet-Laplacian eigenstructure on (0, 1).

States are stored as coefficient vectors in the orthonormal basis
``e_k(xi) = sqrt(2) sin(k pi xi)``, k = 1..N. The generator ``A`` acts
diagonally with eigenvalues ``-(k pi)^2``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.fft
from scipy import integrate


@dataclass(frozen=True)
class GalerkinSpace:
    """Galerkin truncation of H = L^2(0, 1) with a sine collocation grid.

    The grid is ``xi_q = q / (Q + 1)``, q = 1..Q. Transforms are DST-I with
    zero padding, so the discrete Gram matrix of the first N modes on this
    grid is exactly the identity.
    """

    n_modes: int
    grid_size: int
    eigenvalues: np.ndarray = field(repr=False)
    grid: np.ndarray = field(repr=False)

    @property
    def wavenumbers(self):
        return -self.eigenvalues

    def to_grid(self, modes):
        """Mode coefficients (..., N) -> grid values (..., Q)."""
        modes = np.asarray(modes, dtype=float)
        padded = np.zeros(modes.shape[:-1] + (self.grid_size,))
        padded[..., : self.n_modes] = modes
        return scipy.fft.dst(padded, type=1, norm="ortho", axis=-1) * math.sqrt(
            self.grid_size + 1
        )

    def to_modes(self, values):
        """Grid values (..., Q) -> first N mode coefficients (..., N)."""
        values = np.asarray(values, dtype=float)
        full = scipy.fft.dst(values, type=1, norm="ortho", axis=-1)
        return full[..., : self.n_modes] / math.sqrt(self.grid_size + 1)

    def basis_on_grid(self):
        """Matrix (N, Q) of ``e_k(xi_q)``."""
        k = np.arange(1, self.n_modes + 1)[:, None]
        return math.sqrt(2.0) * np.sin(k * np.pi * self.grid[None, :])

    def quadrature_weight(self):
        # trapezoid on [0, 1] with zero boundary values
        return 1.0 / (self.grid_size + 1)

    def lp_norm(self, modes, p):
        """``|x|_{L^p(0,1)}`` by grid quadrature, vectorized over leading axes."""
        vals = np.abs(self.to_grid(modes))
        return (np.sum(vals**p, axis=-1) * self.quadrature_weight()) ** (1.0 / p)

    def project_function(self, func):
        """Discrete projection of a scalar profile ``func(xi)`` onto the modes."""
        return self.to_modes(np.broadcast_to(func(self.grid), self.grid.shape))

    def unit_vector(self, k):
        """Mode vector of ``e_k`` (1-based)."""
        e = np.zeros(self.n_modes)
        e[k - 1] = 1.0
        return e


def build_space(n_modes, grid_size):
    if int(n_modes) != n_modes or n_modes < 1:
        raise ValueError(f"n_modes must be a positive integer, got {n_modes!r}")
    if int(grid_size) != grid_size or grid_size < 2 * n_modes:
        raise ValueError(
            f"grid_size={grid_size} < 2*n_modes={2 * n_modes}: the nonlinear term would alias"
        )
    n_modes, grid_size = int(n_modes), int(grid_size)
    k = np.arange(1, n_modes + 1, dtype=float)
    eig = -((k * np.pi) ** 2)
    grid = np.arange(1, grid_size + 1) / (grid_size + 1)
    eig.setflags(write=False)
    grid.setflags(write=False)
    return GalerkinSpace(n_modes, grid_size, eig, grid)


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal covariance ``C`` in the eigenbasis."""

    c_diag: np.ndarray
    c_min: float

    def __post_init__(self):
        c = np.array(self.c_diag, dtype=float)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ValueError("c_diag must be a finite 1-D vector")
        if not self.c_min > 0:
            raise ValueError("c_min must be positive (C^{-1} must be bounded)")
        if np.min(c) < self.c_min:
            raise ValueError(
                f"min(c_diag)={np.min(c):.6g} is below c_min={self.c_min:.6g}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "c_diag", c)

    @property
    def c_norm(self):
        return float(np.max(self.c_diag))

    def scaled(self, factor):
        return NoiseSpec(self.c_diag * factor, self.c_min * factor)


def identity_noise(space, scale=1.0):
    return NoiseSpec(np.full(space.n_modes, float(scale)), float(scale))


def apply_fractional(space, power, x):
    """``(-A)^power x`` on the truncation."""
    if not -1.0 <= power <= 1.0:
        raise ValueError(f"power must lie in [-1, 1], got {power}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != space.n_modes:
        raise ValueError(f"expected {space.n_modes} modes, got {x.shape[-1]}")
    return space.wavenumbers**power * x


def trace_fractional(space, delta, tail_tol=1e-6):
    """``Tr[(-A)^{-2 delta}] = sum_k (k pi)^{-4 delta}`` with a certified tail.

    Returns ``(value, finite)``. The series runs over all modes, not only the
    truncation held by ``space``. When it converges the value is a partial
    sum plus the integral-test midpoint of the tail, so the remaining
    uncertainty is at most ``tail_tol``.
    """
    if not 0.0 < delta <= 0.5:
        raise ValueError(f"delta must lie in (0, 1/2], got {delta}")
    if tail_tol <= 0:
        raise ValueError("tail_tol must be positive")
    p = 4.0 * delta
    if p <= 1.0:
        return math.inf, False
    coef = math.pi ** (-p)
    # for K terms: integral bounds on sum_{k>K} k^-p lie between
    # (K+1)^{1-p}/(p-1) and K^{1-p}/(p-1); pick K so that their gap <= tail_tol
    K = 16
    while coef * (K ** (1 - p) - (K + 1) ** (1 - p)) / (p - 1) > 2 * tail_tol:
        K *= 2
    partial = float(np.sum(np.arange(1, K + 1, dtype=float) ** (-p)))
    lo = (K + 1) ** (1 - p) / (p - 1)
    hi = K ** (1 - p) / (p - 1)
    return coef * (partial + 0.5 * (lo + hi)), True


def truncated_trace(space, delta):
    """``sum_{k<=N} (k pi)^{-4 delta}``; finite for every delta."""
    return float(np.sum(space.wavenumbers ** (-2.0 * delta)))


def ou_variance(space, noise, t):
    """Per-mode variance ``q_k(t) = c_k (1 - e^{2 lambda_k t}) / (-2 lambda_k)``."""
    lam = space.eigenvalues
    return noise.c_diag * (-np.expm1(2.0 * lam * t)) / (-2.0 * lam)


def lambda_diag(space, noise, t):
    """Diagonal of ``Lambda_t`` with ``Q_t^{1/2} Lambda_t = e^{tA}``."""
    return np.exp(space.eigenvalues * t) / np.sqrt(ou_variance(space, noise, t))


def lambda_norm(space, noise, t):
    return float(np.max(lambda_diag(space, noise, t)))


def gamma_lambda(space, noise, lam):
    """``int_0^inf e^{-lam t} ||Lambda_t|| dt``.

    Split at t = 1; on [0, 1] substitute t = u^2 to remove the t^{-1/2}
    singularity.
    """
    def near(u):
        t = u * u
        if t == 0.0:
            # limit of 2u * (c_min-like) (c t)^{-1/2}
            return 2.0 * float(np.max(1.0 / np.sqrt(noise.c_diag)))
        return 2.0 * u * math.exp(-lam * t) * lambda_norm(space, noise, t)

    def far(t):
        return math.exp(-lam * t) * lambda_norm(space, noise, t)

    a, err_a = integrate.quad(near, 0.0, 1.0, limit=200, epsabs=1e-12, epsrel=1e-10)
    b, err_b = integrate.quad(far, 1.0, np.inf, limit=200, epsabs=1e-12, epsrel=1e-10)
    return a + b, err_a + err_b


@dataclass
class HypothesisReport:
    delta: float
    trace_value: float
    trace_finite: bool
    c_delta: float
    lambda_op_norm_samples: list
    gamma_lambda: float
    gamma_finite: bool
    omega: float
    c_min: float
    c_norm: float
    passed: dict
    notes: list

    @property
    def all_passed(self):
        return all(self.passed.values())

    def to_dict(self):
        return {
            "delta": self.delta,
            "trace_value": self.trace_value if self.trace_finite else None,
            "trace_finite": self.trace_finite,
            "c_delta": self.c_delta if self.trace_finite else None,
            "lambda_op_norm_samples": [[t, v] for t, v in self.lambda_op_norm_samples],
            "gamma_lambda": self.gamma_lambda if self.gamma_finite else None,
            "gamma_finite": self.gamma_finite,
            "omega": self.omega,
            "c_min": self.c_min,
            "c_norm": self.c_norm,
            "passed": dict(self.passed),
            "all_passed": self.all_passed,
            "notes": list(self.notes),
        }


def validate_hypotheses(space, noise, delta, lam, t_samples, tail_tol=1e-6):
    """Check the structural assumptions on (A, C, delta); failures are reported."""
    t_samples = [float(t) for t in t_samples]
    if any(t <= 0 for t in t_samples) or t_samples != sorted(t_samples):
        raise ValueError("t_samples must be strictly positive and sorted")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    notes = []
    passed = {}

    omega = float(np.max(space.eigenvalues))
    passed["generator_dissipative"] = bool(np.all(np.diff(space.eigenvalues) < 0)) and omega <= 0

    if noise.c_diag.shape[0] != space.n_modes:
        raise ValueError("noise and space disagree on the number of modes")
    passed["noise_invertible"] = bool(np.min(noise.c_diag) >= noise.c_min > 0)

    if 0.0 < delta <= 0.5:
        value, finite = trace_fractional(space, delta, tail_tol)
    else:
        value, finite = math.inf, False
        notes.append(f"delta={delta} outside (0, 1/2]")
    passed["trace_class"] = finite and delta < 0.5
    if not finite:
        notes.append(
            f"Tr[(-A)^(-2 delta)] diverges for delta={delta}: 4*delta <= 1 in one dimension"
        )
    if delta >= 0.5:
        notes.append("delta=1/2 is a boundary diagnostic, not an admissible exponent")
    c_delta = noise.c_norm * value if finite else math.inf

    samples = [(t, lambda_norm(space, noise, t)) for t in t_samples]
    g, _ = gamma_lambda(space, noise, lam)
    g_finite = bool(np.isfinite(g))
    passed["gamma_finite"] = g_finite
    return HypothesisReport(
        delta=float(delta),
        trace_value=float(value),
        trace_finite=bool(finite),
        c_delta=float(c_delta),
        lambda_op_norm_samples=samples,
        gamma_lambda=float(g),
        gamma_finite=g_finite,
        omega=omega,
        c_min=float(noise.c_min),
        c_norm=noise.c_norm,
        passed=passed,
        notes=notes,
    )

