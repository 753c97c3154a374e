"""Finite-volume Fokker-Planck solver for the single-mode (N=1) truncation.

The scalar SDE ``dX = b(t, X) dt + sqrt(c) dW`` with
``b(t, x) = lambda_1 x + F_alpha(t, x)`` has a density obeying
``p_t = -(b p)_x + (c/2) p_xx``. We discretize on a padded interval with
zero-flux walls, central fluxes and Crank-Nicolson in time, then compare
characteristic functions with an ensemble of the Galerkin engine.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import norm

from .drift import drift_batch
from .engine import InitialLaw, refined, simulate_ensemble
from .measures import char_table


def scalar_drift(space, drift, t, x):
    """``lambda_1 x + F_alpha(t, x)`` for an array of scalar states."""
    x = np.asarray(x, dtype=float)
    b = space.eigenvalues[0] * x
    if drift is not None and not drift.is_zero:
        b = b + drift_batch(drift, space, t, x[:, None])[:, 0]
    return b


@dataclass
class FPGrid:
    edges: np.ndarray
    centres: np.ndarray
    dx: float


def make_grid(lo, hi, n_cells):
    edges = np.linspace(lo, hi, n_cells + 1)
    return FPGrid(edges, 0.5 * (edges[1:] + edges[:-1]), (hi - lo) / n_cells)


def _operator_bands(grid, b_faces, c):
    """Banded form of ``d/dt p = M p`` (cell averages, zero flux at walls)."""
    n = len(grid.centres)
    D = 0.5 * c / grid.dx**2
    adv = 0.5 * b_faces[1:-1] / grid.dx  # interior faces, central interpolation
    upper = np.zeros(n)  # M[i, i+1]
    diag = np.zeros(n)
    lower = np.zeros(n)  # M[i+1, i]
    # flux through interior face j (between cells j and j+1):
    # J = b_f (p_j + p_{j+1}) / 2 - (c/2) (p_{j+1} - p_j) / dx
    # cell j loses J/dx, cell j+1 gains J/dx
    diag[:-1] += -adv - D
    upper[1:] += -adv + D
    lower[:-1] += adv + D
    diag[1:] += adv - D
    return upper, diag, lower


def solve_fp(space, noise, drift, grid, p0, times, dt):
    """Crank-Nicolson march of the density; returns densities at ``times``."""
    c = float(noise.c_diag[0])
    times = np.asarray(times, dtype=float)
    p = np.asarray(p0, dtype=float).copy()
    out = [p.copy()]
    t = float(times[0])
    for t_next in times[1:]:
        n_sub = max(1, int(math.ceil((t_next - t) / dt - 1e-9)))
        h = (t_next - t) / n_sub
        for _ in range(n_sub):
            # drift frozen at the midpoint of the substep
            b = scalar_drift(space, drift, t + 0.5 * h, grid.edges)
            up, di, lo = _operator_bands(grid, b, c)
            n = len(p)
            ab = np.zeros((3, n))
            ab[0, 1:] = -0.5 * h * up[1:]
            ab[1] = 1.0 - 0.5 * h * di
            ab[2, :-1] = -0.5 * h * lo[:-1]
            rhs = p + 0.5 * h * di * p
            rhs[:-1] += 0.5 * h * up[1:] * p[1:]
            rhs[1:] += 0.5 * h * lo[:-1] * p[:-1]
            p = solve_banded((1, 1), ab, rhs)
            t += h
        out.append(p.copy())
        t = float(t_next)
    return np.array(out)


def gaussian_density(grid, mean, var):
    """Cell averages of a normal density (exact through the CDF)."""
    cdf = norm.cdf(grid.edges, loc=mean, scale=math.sqrt(var))
    return np.diff(cdf) / grid.dx


def char_from_density(grid, p, H):
    """``int e^{i x h} p(x) dx`` per direction, integrating each cell exactly
    for piecewise-constant ``p``."""
    H = np.asarray(H, dtype=float)
    out = np.empty(len(H), dtype=complex)
    a, b = grid.edges[:-1], grid.edges[1:]
    for i, h in enumerate(H):
        if h == 0.0:
            out[i] = np.sum(p) * grid.dx
        else:
            out[i] = np.sum(p * (np.exp(1j * h * b) - np.exp(1j * h * a)) / (1j * h))
    return out


@dataclass
class CrossCheckReport:
    times: list
    labels: list
    gaps: list
    thresholds: list
    mc_se: list
    grid_allowance: list
    dt_allowance: list
    passed: bool
    mass_defect: float

    def to_dict(self):
        return {
            "times": self.times, "labels": self.labels, "gaps": self.gaps,
            "thresholds": self.thresholds, "mc_se": self.mc_se,
            "grid_allowance": self.grid_allowance, "dt_allowance": self.dt_allowance,
            "pass": self.passed, "mass_defect": self.mass_defect,
        }


def cross_check(space, noise, drift, sim, mean, var, dirs, n_cells=800, fd_dt=1e-3,
                half_width=None, n_sigma=3.0, workers=1):
    """Ensemble characteristic functions against the finite-volume density.

    The allowance per (checkpoint, direction) is ``n_sigma`` Monte Carlo SEs,
    plus the change of the PDE solution under halving both the grid and the
    time step, plus twice the coupled change of the ensemble under halving dt.
    """
    if space.n_modes != 1:
        raise ValueError("the density oracle needs a single-mode space")
    if half_width is None:
        sd = math.sqrt(var + float(noise.c_diag[0]) / (2.0 * math.pi**2))
        half_width = abs(mean) + 12.0 * sd
    law = InitialLaw.gaussian([mean], [var])
    ens = simulate_ensemble(space, noise, drift, sim, law, workers=workers)
    fine = simulate_ensemble(space, noise, drift, refined(sim), law, workers=workers)
    ens.require_valid()
    fine.require_valid()
    H = dirs.matrix()[:, 0]

    def fd(n, step):
        g = make_grid(-half_width, half_width, n)
        dens = solve_fp(space, noise, drift, g, gaussian_density(g, mean, var), ens.times, step)
        return np.array([char_from_density(g, d, H) for d in dens]), float(
            np.max(np.abs(dens.sum(axis=1) * g.dx - dens[0].sum() * g.dx)))

    ref, mass = fd(n_cells, fd_dt)
    ref2, mass2 = fd(2 * n_cells, 0.5 * fd_dt)
    gaps, thr, ses, galw, dalw = [], [], [], [], []
    passed = True
    for j, t in enumerate(ens.times):
        m, se, _ = char_table(ens, float(t), dirs)
        mf, _, _ = char_table(fine, float(t), dirs)
        g_allow = np.abs(ref2[j] - ref[j])
        d_allow = 2.0 * np.abs(m - mf)
        gap = np.abs(m - ref2[j])
        th = n_sigma * se + g_allow + d_allow
        passed &= bool(np.all(gap <= th))
        gaps.append([float(v) for v in gap])
        thr.append([float(v) for v in th])
        ses.append([float(v) for v in se])
        galw.append([float(v) for v in g_allow])
        dalw.append([float(v) for v in d_allow])
    return CrossCheckReport(
        times=[float(t) for t in ens.times], labels=list(dirs.labels), gaps=gaps,
        thresholds=thr, mc_se=ses, grid_allowance=galw, dt_allowance=dalw,
        passed=passed, mass_defect=max(mass, mass2))
