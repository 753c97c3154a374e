"""Ensemble simulation of the regularized reaction-diffusion SDE.

Each step is a Lie splitting: an explicit drift increment followed by the
exact Ornstein-Uhlenbeck transition of every mode. Noise is drawn from
counter-based streams keyed by ``(seed, path_id, step, tag)``.

Runs with ``refine=L`` take ``2**L`` substeps per step, and their noise is
obtained by exact conditional splitting of the coarse OU increments. A
refined run is therefore pathwise coupled to the unrefined run with the same
seed: with zero drift both agree exactly at every shared time.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import math
from typing import NamedTuple, Optional

import numpy as np

from . import rng
from .drift import drift_batch
from .spectral import apply_fractional, ou_variance, trace_fractional, truncated_trace

SCHEMES = ("exponential_euler_splitting", "tamed_euler")
EXPLODED_LIMIT = 1e-3
CHUNK = 4096


@dataclass(frozen=True)
class SimConfig:
    s: float
    t_end: float
    dt: float
    checkpoints: tuple
    n_paths: int
    seed: int
    scheme: str = "exponential_euler_splitting"
    refine: int = 0
    record_convolution: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= self.s:
            raise ValueError("t_end must not precede s")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if self.refine < 0 or self.refine > 12:
            raise ValueError("refine must lie in [0, 12]")
        cps = tuple(float(c) for c in self.checkpoints)
        if list(cps) != sorted(set(cps)):
            raise ValueError("checkpoints must be strictly increasing")
        for c in cps:
            if c < self.s - 1e-12 or c > self.t_end + 1e-12:
                raise ValueError(f"checkpoint {c} outside [{self.s}, {self.t_end}]")
            k = (c - self.s) / self.dt
            if abs(round(k) * self.dt - (c - self.s)) > 1e-9:
                raise ValueError(f"checkpoint {c} is not aligned with dt={self.dt}")
        k_end = (self.t_end - self.s) / self.dt
        if abs(round(k_end) * self.dt - (self.t_end - self.s)) > 1e-9:
            raise ValueError("t_end - s must be a multiple of dt")
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    @property
    def n_steps(self):
        return int(round((self.t_end - self.s) / self.dt))

    def checkpoint_steps(self):
        return [int(round((c - self.s) / self.dt)) for c in self.checkpoints]

    def to_dict(self):
        return {
            "s": self.s, "t_end": self.t_end, "dt": self.dt,
            "checkpoints": list(self.checkpoints), "n_paths": self.n_paths,
            "seed": self.seed, "scheme": self.scheme, "refine": self.refine,
            "record_convolution": self.record_convolution,
        }


def uniform_checkpoints(s, t_end, n_intervals):
    return tuple(s + (t_end - s) * i / n_intervals for i in range(n_intervals + 1))


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution: ``dirac``, ``gaussian`` (diagonal) or ``samples``.

    For ``samples`` the path with id ``i`` starts at ``samples[i % len]``.
    """

    kind: str
    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    @classmethod
    def dirac(cls, x):
        return cls("dirac", mean=np.asarray(x, dtype=float))

    @classmethod
    def gaussian(cls, mean, var):
        return cls("gaussian", mean=np.asarray(mean, dtype=float), var=np.asarray(var, dtype=float))

    @classmethod
    def from_samples(cls, samples):
        return cls("samples", samples=np.atleast_2d(np.asarray(samples, dtype=float)))

    def sample(self, seed, path_ids, n_modes):
        path_ids = np.asarray(path_ids)
        if self.kind == "dirac":
            return np.broadcast_to(self.mean, (len(path_ids), n_modes)).copy()
        if self.kind == "gaussian":
            g = rng.standard_normals(seed, path_ids, 0, n_modes, tag=rng.TAG_INITIAL)
            return self.mean + np.sqrt(self.var) * g
        if self.kind == "samples":
            return self.samples[path_ids % len(self.samples)].copy()
        raise ValueError(f"unknown initial law {self.kind!r}")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.mean is not None:
            d["mean"] = [float(v) for v in self.mean]
        if self.var is not None:
            d["var"] = [float(v) for v in self.var]
        if self.samples is not None:
            d["n_samples"] = int(len(self.samples))
        return d


@dataclass
class PathRecord:
    states: dict
    path_id: int
    convolution_states: Optional[dict] = None
    exploded: bool = False
    exploded_time: Optional[float] = None


@dataclass
class Ensemble:
    """Checkpoint states of all surviving paths, path_id order.

    ``states`` has shape (n_checkpoints, n_members, n_modes).
    """

    config: SimConfig
    initial_law: InitialLaw
    times: np.ndarray
    states: np.ndarray
    path_ids: np.ndarray
    exploded: list = field(default_factory=list)
    convolution: Optional[np.ndarray] = None
    tag: int = rng.TAG_MAIN

    @property
    def n_members(self):
        return int(self.states.shape[1])

    @property
    def exploded_fraction(self):
        return len(self.exploded) / self.config.n_paths

    @property
    def valid(self):
        return self.exploded_fraction <= EXPLODED_LIMIT

    def require_valid(self):
        if not self.valid:
            raise InvalidEnsembleError(
                f"{len(self.exploded)} of {self.config.n_paths} paths exploded "
                f"(limit {EXPLODED_LIMIT:.1%}); first at t={self.exploded[0][1]:.6g}"
            )

    def index_of(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"t={t} is not a checkpoint of this ensemble")
        return i

    def at(self, t):
        return self.states[self.index_of(t)]

    @property
    def members(self):
        out = []
        for j, pid in enumerate(self.path_ids):
            conv = None
            if self.convolution is not None:
                conv = {float(t): self.convolution[i, j] for i, t in enumerate(self.times)}
            out.append(PathRecord(
                {float(t): self.states[i, j] for i, t in enumerate(self.times)},
                int(pid), conv))
        return out

    def diagnostics(self):
        return {
            "n_paths": self.config.n_paths,
            "n_members": self.n_members,
            "n_exploded": len(self.exploded),
            "exploded_fraction": self.exploded_fraction,
            "valid": self.valid,
            "first_exploded": [[int(p), float(t)] for p, t in self.exploded[:10]],
        }


class InvalidEnsembleError(RuntimeError):
    pass


def ou_factors(space, noise, h):
    """Per-mode decay ``e^{lambda_k h}`` and std ``sigma_k(h)`` of one OU step."""
    return np.exp(space.eigenvalues * h), np.sqrt(ou_variance(space, noise, h))


def ou_step(space, noise, x_modes, dt, gauss):
    """Exact transition of ``dX_k = lambda_k X_k dt + sqrt(c_k) d beta_k``."""
    gauss = np.asarray(gauss, dtype=float)
    if gauss.shape[-1] != space.n_modes:
        raise ValueError(f"gauss must have {space.n_modes} entries")
    decay, sigma = ou_factors(space, noise, dt)
    return decay * np.asarray(x_modes, dtype=float) + sigma * gauss


def _refine_tag(tag, level):
    return tag * 256 + rng.TAG_REFINE_BASE + level


def _step_normals(space, noise, cfg, path_ids, step, tag):
    """Standard normals (n, 2**refine, N) for the substeps of one coarse step."""
    N = space.n_modes
    g = rng.standard_normals(cfg.seed, path_ids, step, N, tag=tag)[:, None, :]
    for level in range(1, cfg.refine + 1):
        h = cfg.dt / 2**level
        decay, sig = ou_factors(space, noise, h)
        sig2 = np.sqrt(ou_variance(space, noise, 2 * h))
        a = decay * sig / sig2
        b = sig / sig2
        n_sub = g.shape[1]
        w = np.stack(
            [rng.standard_normals(cfg.seed, path_ids, step, N, tag=_refine_tag(tag, level), sub=j)
             for j in range(n_sub)],
            axis=1,
        )
        fine = np.empty((g.shape[0], 2 * n_sub, N))
        fine[:, 0::2] = a * g + b * w
        fine[:, 1::2] = b * g - a * w
        g = fine
    return g


def _check_scheme(drift, cfg):
    if (cfg.scheme == "exponential_euler_splitting" and drift is not None
            and drift.alpha == 0 and drift.m > 1 and not drift.is_zero):
        raise ValueError(
            "alpha=0 with a superlinear drift needs scheme='tamed_euler'"
        )


def _run_chunk(space, noise, drift, cfg, x0, path_ids, tag):
    n, N = x0.shape
    n_sub = 2**cfg.refine
    h = cfg.dt / n_sub
    decay, sigma = ou_factors(space, noise, h)
    ck_steps = cfg.checkpoint_steps()
    ck_index = {}
    for i, k in enumerate(ck_steps):
        ck_index.setdefault(k, []).append(i)
    states = np.empty((len(ck_steps), n, N))
    conv = np.empty((len(ck_steps), n, N)) if cfg.record_convolution else None
    x = x0.copy()
    w = np.zeros_like(x)
    exploded_at = np.full(n, np.nan)
    zero_drift = drift is None or drift.is_zero
    tamed = cfg.scheme == "tamed_euler"

    def record(step):
        for i in ck_index.get(step, ()):
            states[i] = x
            if conv is not None:
                conv[i] = w

    record(0)
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(cfg.n_steps):
            g = _step_normals(space, noise, cfg, path_ids, step, tag)
            for j in range(n_sub):
                t = cfg.s + step * cfg.dt + j * h
                if not zero_drift:
                    F = drift_batch(drift, space, t, x)
                    if tamed:
                        F = F / (1.0 + h * np.sqrt(np.sum(F * F, axis=-1, keepdims=True)))
                    x = x + h * F
                x = decay * x + sigma * g[:, j]
                if conv is not None:
                    w = decay * w + sigma * g[:, j]
            bad = ~np.all(np.isfinite(x), axis=-1) & np.isnan(exploded_at)
            if np.any(bad):
                exploded_at[bad] = cfg.s + (step + 1) * cfg.dt
                x[bad] = 0.0
            record(step + 1)
    return states, conv, exploded_at


def run_paths(space, noise, drift, cfg, x0, path_ids, tag=rng.TAG_MAIN, workers=1):
    """Simulate the given paths from the given starting states.

    Returns ``(states, convolution, exploded_at)`` in the order of
    ``path_ids``. Work is split into fixed-size chunks so results do not
    depend on ``workers``.
    """
    _check_scheme(drift, cfg)
    x0 = np.asarray(x0, dtype=float)
    path_ids = np.asarray(path_ids, dtype=np.int64)
    if x0.shape != (len(path_ids), space.n_modes):
        raise ValueError("x0 must have shape (n_paths, n_modes)")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial states must be finite")
    bounds = [(i, min(i + CHUNK, len(path_ids))) for i in range(0, len(path_ids), CHUNK)]

    def job(b):
        lo, hi = b
        return _run_chunk(space, noise, drift, cfg, x0[lo:hi], path_ids[lo:hi], tag)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    states = np.concatenate([p[0] for p in parts], axis=1)
    conv = np.concatenate([p[1] for p in parts], axis=1) if cfg.record_convolution else None
    exploded_at = np.concatenate([p[2] for p in parts])
    return states, conv, exploded_at


def assemble(cfg, law, states, conv, exploded_at, path_ids, tag):
    ok = np.isnan(exploded_at)
    exploded = [(int(p), float(t)) for p, t in zip(path_ids[~ok], exploded_at[~ok])]
    return Ensemble(
        config=cfg,
        initial_law=law,
        times=np.asarray(cfg.checkpoints, dtype=float),
        states=states[:, ok],
        path_ids=path_ids[ok],
        exploded=exploded,
        convolution=conv[:, ok] if conv is not None else None,
        tag=tag,
    )


def simulate_path(space, noise, drift, config, x0, path_id, tag=rng.TAG_MAIN):
    """One path; bit-identical to the same path inside any ensemble run."""
    states, conv, exploded_at = run_paths(
        space, noise, drift, config, np.asarray(x0, dtype=float)[None, :], [path_id], tag)
    times = [float(c) for c in config.checkpoints]
    exploded = not np.isnan(exploded_at[0])
    rec = PathRecord(
        states={t: states[i, 0] for i, t in enumerate(times)
                if not exploded or t < exploded_at[0]},
        path_id=int(path_id),
        convolution_states=(None if conv is None
                            else {t: conv[i, 0] for i, t in enumerate(times)}),
        exploded=exploded,
        exploded_time=float(exploded_at[0]) if exploded else None,
    )
    return rec


def simulate_ensemble(space, noise, drift, config, initial_law, workers=1,
                      tag=rng.TAG_MAIN, min_paths=100):
    """Monte Carlo realization of the transition operator applied to ``initial_law``."""
    if config.n_paths < min_paths:
        raise ValueError(f"n_paths={config.n_paths} is below the minimum of {min_paths}")
    path_ids = np.arange(config.n_paths, dtype=np.int64)
    x0 = initial_law.sample(config.seed, path_ids, space.n_modes)
    states, conv, exploded_at = run_paths(space, noise, drift, config, x0, path_ids, tag, workers)
    return assemble(config, initial_law, states, conv, exploded_at, path_ids, tag)


def continue_ensemble(space, noise, drift, config, start_states, path_ids, tag, workers=1):
    """Run fresh-stream continuations from given per-path starting states."""
    states, conv, exploded_at = run_paths(space, noise, drift, config, start_states,
                                          path_ids, tag, workers)
    law = InitialLaw.from_samples(start_states)
    return assemble(config, law, states, conv, exploded_at, np.asarray(path_ids), tag)


def refined(config, levels=1):
    """The same run with ``2**levels`` times more (coupled) substeps."""
    return replace(config, refine=config.refine + levels)


class ConvolutionMoment(NamedTuple):
    estimate: float
    c_delta: float
    passed: bool
    std_error: float
    t_argmax: float
    means: tuple
    analytic: tuple
    c_delta_kind: str


def convolution_sup_moment(space, noise, delta, config, ensemble=None, workers=1):
    """``max_t`` of the ensemble mean of ``|(-A)^delta W_A(t)|^2`` against ``c_delta``."""
    if ensemble is None:
        ensemble = simulate_ensemble(
            space, noise, None, replace(config, record_convolution=True),
            InitialLaw.dirac(np.zeros(space.n_modes)), workers=workers)
    W = ensemble.convolution if ensemble.convolution is not None else ensemble.states
    vals = np.sum(apply_fractional(space, delta, W) ** 2, axis=-1)
    n = vals.shape[1]
    means = vals.mean(axis=1)
    ses = vals.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(means)
    i = int(np.argmax(means))
    if 0 < delta <= 0.5 and 4 * delta > 1:
        tr, _ = trace_fractional(space, delta)
        kind = "series"
    else:
        tr = truncated_trace(space, delta)
        kind = "truncated"
    c_delta = noise.c_norm * tr
    lam_pow = space.wavenumbers ** (2 * delta)
    analytic = tuple(
        float(np.sum(lam_pow * ou_variance(space, noise, t - ensemble.config.s)))
        for t in ensemble.times)
    return ConvolutionMoment(
        estimate=float(means[i]),
        c_delta=float(c_delta),
        passed=bool(means[i] <= c_delta + 3 * ses[i]),
        std_error=float(ses[i]),
        t_argmax=float(ensemble.times[i]),
        means=tuple(float(v) for v in means),
        analytic=analytic,
        c_delta_kind=kind,
    )
