"""Estimates of measure functionals from ensembles."""

import csv
from dataclasses import dataclass
import math
from typing import NamedTuple

import numpy as np
from scipy.stats import qmc

from .drift import lyapunov_V
from .spectral import apply_fractional

MAX_DIRECTIONS = 32
_BLOCK = 256


def compensated_mean(values, axis=0):
    """Mean along ``axis`` with Kahan-compensated accumulation of block sums.

    Blocks of fixed size are summed pairwise and accumulated in order, so the
    result depends only on the data, never on threading or batch layout.
    """
    v = np.moveaxis(np.asarray(values), axis, 0)
    n = v.shape[0]
    if n == 0:
        raise ValueError("cannot average an empty sample")
    total = np.zeros(v.shape[1:], dtype=v.dtype)
    comp = np.zeros_like(total)
    for lo in range(0, n, _BLOCK):
        y = v[lo:lo + _BLOCK].sum(axis=0) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / n


def _mean_se(samples):
    """Mean and standard error along axis 0; complex SE uses both components."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    mean = compensated_mean(samples)
    if n < 2:
        return mean, np.zeros(np.shape(mean)), n
    dev = samples - mean
    var = compensated_mean((dev * np.conj(dev)).real) * n / (n - 1)
    return mean, np.sqrt(var / n), n


@dataclass(frozen=True)
class FunctionalEstimate:
    value: complex
    std_error: float
    n: int
    functional_id: str

    def to_dict(self):
        v = complex(self.value)
        return {"functional_id": self.functional_id, "value_re": v.real,
                "value_im": v.imag, "std_error": float(self.std_error), "n": self.n}


@dataclass(frozen=True)
class TestDirectionSet:
    directions: tuple
    labels: tuple
    rule: dict

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if len(self.directions) != len(self.labels):
            raise ValueError("one label per direction")
        if len(self.directions) > MAX_DIRECTIONS:
            raise ValueError(f"at most {MAX_DIRECTIONS} directions")
        for h in self.directions:
            if not np.all(np.isfinite(h)) or not np.any(h):
                raise ValueError("directions must be finite and nonzero")

    def matrix(self):
        return np.array(self.directions, dtype=float)

    def __len__(self):
        return len(self.directions)

    @classmethod
    def generate(cls, space, n_dir=4, n_rand=8, h_max=20.0, amplitudes=(1.0, 2.0)):
        """First ``n_dir`` eigenmodes at each amplitude, then ``n_rand`` Sobol
        combinations rescaled so that ``|A h| <= h_max``."""
        N = space.n_modes
        n_dir = min(n_dir, N)
        dirs, labels = [], []
        for k in range(1, n_dir + 1):
            for a in amplitudes:
                dirs.append(a * space.unit_vector(k))
                labels.append(f"{a:g}*e{k}")
        if n_rand:
            sob = qmc.Sobol(d=N, scramble=False)
            pts = sob.random(1 << int(math.ceil(math.log2(n_rand + 1))))[1:n_rand + 1]
            for i, u in enumerate(pts):
                h = (2 * u - 1) / np.arange(1, N + 1)
                if not np.any(h):
                    h = space.unit_vector(1)
                norm_A = float(np.sqrt(np.sum((space.wavenumbers * h) ** 2)))
                if norm_A > h_max:
                    h = h * (h_max / norm_A)
                dirs.append(h)
                labels.append(f"sobol{i}")
        rule = {"n_dir": n_dir, "n_rand": n_rand, "h_max": h_max,
                "amplitudes": list(amplitudes), "generator": "sobol-unscrambled"}
        return cls(tuple(np.asarray(d) for d in dirs), tuple(labels), rule)

    @classmethod
    def of(cls, directions, labels=None):
        directions = tuple(np.asarray(d, dtype=float) for d in directions)
        labels = tuple(labels or (f"h{i}" for i in range(len(directions))))
        return cls(directions, labels, {"explicit": True})


def inner_products(states, H):
    """``<x, h>`` for states (n, N) and directions (D, N), fixed summation order."""
    theta = np.zeros((states.shape[0], H.shape[0]))
    for k in range(states.shape[1]):
        theta += states[:, k, None] * H[None, :, k]
    return theta


def char_samples(states, H):
    theta = inner_products(states, np.atleast_2d(H))
    return np.cos(theta) + 1j * np.sin(theta)


def _require(ensemble):
    ensemble.require_valid()


def char_functional(ensemble, t, h):
    """Empirical characteristic functional ``mean exp(i <X(t), h>)``."""
    _require(ensemble)
    h = np.asarray(h, dtype=float)
    X = ensemble.at(t)
    mean, se, n = _mean_se(char_samples(X, h[None, :])[:, 0])
    return FunctionalEstimate(complex(mean), float(se), n, f"char[{_fmt(h)}]@{t:g}")


def char_table(ensemble, t, dirs):
    """Means and SEs of the characteristic functional over a direction set."""
    _require(ensemble)
    mean, se, n = _mean_se(char_samples(ensemble.at(t), dirs.matrix()))
    return mean, se, n


def _fmt(h):
    return ",".join(f"{v:.4g}" for v in h)


def moment_samples(ensemble, t, kind, space=None, delta=None, m=None, drift=None):
    X = ensemble.at(t)
    if kind == "l2_sq":
        return np.sum(X * X, axis=-1)
    if space is None:
        raise ValueError(f"moment kind {kind!r} needs the Galerkin space")
    if kind == "frac_sobolev_sq":
        if delta is None:
            raise ValueError("frac_sobolev_sq needs delta")
        return np.sum(apply_fractional(space, delta, X) ** 2, axis=-1)
    if kind == "l2m_pow":
        if m is None:
            raise ValueError("l2m_pow needs m")
        vals = space.to_grid(X)
        return np.sum(vals ** (2 * m), axis=-1) * space.quadrature_weight()
    if kind == "lyapunov_sq":
        if drift is None:
            raise ValueError("lyapunov_sq needs a drift")
        return lyapunov_V(drift, space, t, X) ** 2
    raise ValueError(f"unknown moment kind {kind!r}")


def moment(ensemble, t, kind, space=None, delta=None, m=None, drift=None):
    """Ensemble mean of a nonnegative functional with its standard error."""
    _require(ensemble)
    samples = moment_samples(ensemble, t, kind, space, delta, m, drift)
    mean, se, n = _mean_se(samples)
    param = {"frac_sobolev_sq": delta, "l2m_pow": m}.get(kind)
    fid = kind if param is None else f"{kind}({param:g})"
    return FunctionalEstimate(float(mean), float(se), n, f"{fid}@{t:g}")


class Distance(NamedTuple):
    max_abs_gap: float
    threshold: float
    passed: bool
    gaps: tuple
    thresholds: tuple
    labels: tuple


def measure_distance(ens_a, t_a, ens_b, t_b, dirs, n_sigma=3.0):
    """Compare two ensembles on a finite direction set at ``n_sigma`` (SE_A + SE_B)."""
    ma, sa, _ = char_table(ens_a, t_a, dirs)
    mb, sb, _ = char_table(ens_b, t_b, dirs)
    return _distance(ma, sa, mb, sb, dirs, n_sigma)


def _distance(ma, sa, mb, sb, dirs, n_sigma=3.0):
    gaps = np.abs(ma - mb)
    thr = n_sigma * (sa + sb)
    i = int(np.argmax(gaps - thr))
    return Distance(
        max_abs_gap=float(np.max(gaps)),
        threshold=float(thr[i]),
        passed=bool(np.all(gaps <= thr)),
        gaps=tuple(float(g) for g in gaps),
        thresholds=tuple(float(v) for v in thr),
        labels=tuple(dirs.labels),
    )


CSV_COLUMNS = ("time", "functional_id", "value_re", "value_im", "std_error", "n")


def write_estimates_csv(path, rows):
    """``rows``: iterable of (time, FunctionalEstimate)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for t, est in rows:
            v = complex(est.value)
            w.writerow([repr(float(t)), est.functional_id, repr(v.real), repr(v.imag),
                        repr(float(est.std_error)), est.n])
