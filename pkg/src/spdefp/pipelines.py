"""Run kinds: build objects from a resolved config, execute, and report.

Each runner returns ``(status, report, tables)`` where ``status`` is one of
``pass``, ``fail``, ``inconclusive``; ``report`` is JSON-ready and holds no
wall-clock data; ``tables`` maps CSV file names to (header, rows).
"""

import math
import os

import numpy as np
from scipy.stats import chi2, kstest

from . import __version__, rng
from .config import config_hash, numerical_dict
from .drift import drift_catalog, lyapunov_V, probe_conditions
from .engine import (
    InitialLaw, SimConfig, convolution_sup_moment, refined, simulate_ensemble,
    uniform_checkpoints,
)
from .fp1d import cross_check
from .measures import CSV_COLUMNS, TestDirectionSet, char_table, moment
from .spectral import NoiseSpec, build_space, ou_variance, validate_hypotheses
from .storage import write_ensemble
from .verify import alpha_sweep, ck_check, fp_residuals, make_test_function

SCHEMA_VERSION = 1
STATUSES = ("pass", "fail", "inconclusive")


# ---------------------------------------------------------------- builders

def make_space(cfg):
    return build_space(cfg.space.n_modes, cfg.space.grid_size)


def make_noise(cfg, space):
    n = cfg.noise
    if n.rule == "identity":
        c = np.full(space.n_modes, n.scale)
    elif n.rule == "fractional":
        c = n.scale * space.wavenumbers ** (-n.delta_c)
    else:
        c = np.asarray(n.values, dtype=float)
        if len(c) != space.n_modes:
            raise ValueError(f"noise.values has {len(c)} entries, expected {space.n_modes}")
    c_min = float(np.min(c)) if n.c_min is None else n.c_min
    return NoiseSpec(c, c_min)


def make_drift(cfg, alpha=None):
    d = cfg.drift
    return drift_catalog(d.name, m=d.m, alpha=d.alpha if alpha is None else alpha,
                         T=cfg.sim.t_end, a=d.a, b=d.b, c=d.c, h=d.h, h_coef=d.h_coef,
                         c1=d.c1, c2=d.c2, c3=d.c3)


def make_point(p, space):
    if p.modes is not None:
        if len(p.modes) > space.n_modes:
            raise ValueError(f"{len(p.modes)} mode coefficients for {space.n_modes} modes")
        x = np.zeros(space.n_modes)
        x[:len(p.modes)] = p.modes
        return x
    if p.constant is not None:
        return space.project_function(lambda xi: np.full_like(xi, p.constant))
    if p.sine_amplitude is not None:
        return space.project_function(lambda xi: p.sine_amplitude * np.sin(np.pi * xi))
    return np.zeros(space.n_modes)


def make_initial(cfg, space):
    init = cfg.sim.initial
    x = make_point(init, space)
    if init.kind == "dirac":
        return InitialLaw.dirac(x)
    var = np.broadcast_to(np.asarray(init.var, dtype=float), (space.n_modes,)).copy()
    return InitialLaw.gaussian(x, var)


def make_checkpoints(cfg):
    sim, ck = cfg.sim, cfg.sim.checkpoints
    if ck.rule == "uniform":
        return uniform_checkpoints(sim.s, sim.t_end, ck.n)
    if ck.rule == "every_step":
        n_steps = int(round((sim.t_end - sim.s) / sim.dt))
        steps = list(range(0, n_steps + 1, ck.every))
        if steps[-1] != n_steps:
            steps.append(n_steps)
        return tuple(sim.s + k * sim.dt for k in steps)
    if not ck.times:
        raise ValueError("checkpoints.rule 'explicit' needs times")
    return tuple(ck.times)


def make_sim(cfg, seed=None):
    sim = cfg.sim
    return SimConfig(s=sim.s, t_end=sim.t_end, dt=sim.dt, checkpoints=make_checkpoints(cfg),
                     n_paths=sim.n_paths, seed=sim.seed if seed is None else seed,
                     scheme=sim.scheme)


def make_directions(cfg, space):
    d = cfg.verify.directions
    return TestDirectionSet.generate(space, d.n_dir, d.n_rand, d.h_max, tuple(d.amplitudes))


def _pad(h, n):
    h = np.asarray(h, dtype=float)
    if len(h) > n:
        raise ValueError(f"direction {list(h)} has more than {n} entries")
    out = np.zeros(n)
    out[:len(h)] = h
    return out


# ---------------------------------------------------------------- JSON hygiene

def jsonable(v):
    """Plain JSON types; complex -> [re, im]; non-finite floats -> strings."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [jsonable(float(v.real)), jsonable(float(v.imag))]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def _worst(statuses):
    if "fail" in statuses:
        return "fail"
    if "inconclusive" in statuses:
        return "inconclusive"
    return "pass"


# ---------------------------------------------------------------- runners

def run_validate(cfg, workers):
    space = make_space(cfg)
    noise = make_noise(cfg, space)
    v = cfg.verify
    hyp = validate_hypotheses(space, noise, v.delta, v.lam, v.t_samples, v.tail_tol)
    report = {"hypotheses": hyp.to_dict()}
    ok = hyp.all_passed
    drift = make_drift(cfg)
    if not drift.is_zero:
        cond = probe_conditions(drift, space)
        report["drift_conditions"] = cond.to_dict()
        ok = ok and all(cond.passed.values())
    return ("pass" if ok else "fail"), report, {}


def run_convolution(cfg, workers):
    space = make_space(cfg)
    noise = make_noise(cfg, space)
    sim = make_sim(cfg)
    res = convolution_sup_moment(space, noise, cfg.verify.delta, sim, workers=workers)
    report = {"convolution": res._asdict(), "delta": cfg.verify.delta}
    rows = [[t, m, a] for t, m, a in zip(sim.checkpoints, res.means, res.analytic)]
    tables = {"convolution.csv": (("time", "mean", "analytic"), rows)}
    return ("pass" if res.passed else "fail"), report, tables


def gaussian_exactness(ens, space, noise, n_sigma, ks_level, ks_min_fraction):
    """Per-mode mean, variance and KS checks against the exact OU marginals.

    Valid for zero drift and a Dirac or Gaussian initial law.
    """
    law = ens.initial_law
    m0 = law.mean
    v0 = law.var if law.kind == "gaussian" else np.zeros(space.n_modes)
    s = ens.config.s
    var_rows, ks_rows = [], []
    var_ok = True
    for j, t in enumerate(ens.times):
        decay = np.exp(space.eigenvalues * (t - s))
        mean = decay * m0
        var = decay**2 * v0 + ou_variance(space, noise, t - s)
        X = ens.states[j]
        for k in range(space.n_modes):
            dev = X[:, k] - mean[k]
            sq = dev * dev
            est = float(sq.mean())
            se = float(sq.std(ddof=1) / math.sqrt(len(sq)))
            err = abs(est - var[k])
            z = err / se if se > 0 else (0.0 if err < 1e-12 else math.inf)
            within = abs(est - var[k]) <= n_sigma * se + 1e-12
            var_ok &= within
            var_rows.append([float(t), k + 1, est, float(var[k]), se, z, within])
            if var[k] > 0:
                p = float(kstest(X[:, k], "norm", args=(mean[k], math.sqrt(var[k]))).pvalue)
                ks_rows.append([float(t), k + 1, p, p >= ks_level])
    ks_frac = (sum(r[3] for r in ks_rows) / len(ks_rows)) if ks_rows else 1.0
    # aggregate of the per-pair z scores (diagnostic only; the per-pair rule gates)
    zs = [(r[2] - r[3]) / r[4] for r in var_rows if r[4] > 0]
    chi2_stat = float(sum(z * z for z in zs))
    return {
        "variance_chi2": chi2_stat,
        "variance_chi2_dof": len(zs),
        "variance_chi2_pvalue": float(chi2.sf(chi2_stat, len(zs))) if zs else 1.0,
        "variance_within": bool(var_ok),
        "variance_max_z": max(r[5] for r in var_rows),
        "ks_fraction_passing": ks_frac,
        "ks_level": ks_level,
        "ks_pass": ks_frac >= ks_min_fraction,
        "variance_table": var_rows,
        "ks_table": ks_rows,
        "passed": bool(var_ok and ks_frac >= ks_min_fraction),
    }


def run_simulate(cfg, workers, out_dir=None):
    space = make_space(cfg)
    noise = make_noise(cfg, space)
    drift = make_drift(cfg)
    sim = make_sim(cfg)
    law = make_initial(cfg, space)
    ens = simulate_ensemble(space, noise, drift, sim, law, workers=workers)
    report = {"ensemble": ens.diagnostics(), "sim": sim.to_dict(),
              "initial_law": law.to_dict()}
    status = "pass" if ens.valid else "fail"
    est_rows = []
    if ens.valid:
        dirs = make_directions(cfg, space)
        for t in ens.times:
            t = float(t)
            ests = [moment(ens, t, "l2_sq"),
                    moment(ens, t, "frac_sobolev_sq", space, delta=cfg.verify.delta),
                    moment(ens, t, "l2m_pow", space, m=drift.m)]
            if not drift.is_zero:
                ests.append(moment(ens, t, "lyapunov_sq", space, drift=drift))
            mean, se, n = char_table(ens, t, dirs)
            for e in ests:
                est_rows.append([repr(t), e.functional_id, repr(float(e.value)), "0.0",
                                 repr(e.std_error), e.n])
            for lab, v, e in zip(dirs.labels, mean, se):
                est_rows.append([repr(t), f"char[{lab}]@{t:g}", repr(float(v.real)),
                                 repr(float(v.imag)), repr(float(e)), n])
        report["directions"] = {"labels": list(dirs.labels), "rule": dirs.rule}
        if drift.is_zero and law.kind in ("dirac", "gaussian"):
            v = cfg.verify
            ex = gaussian_exactness(ens, space, noise, v.n_sigma, v.ks_level, v.ks_min_fraction)
            report["gaussian_exactness"] = ex
            if not ex["passed"]:
                status = "fail"
    if out_dir is not None and cfg.output.write_ensemble:
        write_ensemble(os.path.join(out_dir, "ensemble.bin"), ens,
                       extra={"config_hash": config_hash(cfg)})
        report["ensemble_file"] = "ensemble.bin"
    return status, report, {"estimates.csv": (CSV_COLUMNS, est_rows)}


def gaussian_char(space, noise, law, s, t, h):
    decay = np.exp(space.eigenvalues * (t - s))
    v0 = law.var if law.kind == "gaussian" else np.zeros(space.n_modes)
    var = decay**2 * v0 + ou_variance(space, noise, t - s)
    return complex(np.exp(1j * np.dot(decay * law.mean, h) - 0.5 * np.dot(var, h * h)))


def run_fp_residual(cfg, workers):
    space = make_space(cfg)
    noise = make_noise(cfg, space)
    drift = make_drift(cfg)
    sim = make_sim(cfg)
    law = make_initial(cfg, space)
    v = cfg.verify
    ens = simulate_ensemble(space, noise, drift, sim, law, workers=workers)
    ens.require_valid()
    fine = None
    if v.dt_allowance and not drift.is_zero:
        fine = simulate_ensemble(space, noise, drift, refined(sim), law, workers=workers)
        fine.require_valid()
    oracle = drift.is_zero and law.kind in ("dirac", "gaussian")
    rows, entries = [], []
    oracle_ok = True
    for phi in v.phi:
        for h in v.h:
            hv = _pad(h, space.n_modes)
            tf = make_test_function(phi, hv, sim.t_end, sim.s,
                                    label=f"{phi}:h=[{','.join(f'{x:g}' for x in h)}]")
            reps = fp_residuals(ens, drift, space, noise, tf, quadrature=v.quadrature,
                                use_alpha=True, ens_fine=fine, dt_allowance=v.dt_allowance,
                                n_sigma=v.n_sigma)
            for r in reps:
                d = r.to_dict()
                if oracle:
                    exact = float(tf.phi(r.t)) * gaussian_char(space, noise, law, sim.s, r.t, hv)
                    z_ok = abs(r.lhs - exact) <= v.n_sigma * r.lhs_se + 1e-12
                    oracle_ok &= z_ok
                    d["oracle_lhs"] = [exact.real, exact.imag]
                    d["oracle_within"] = bool(z_ok)
                entries.append(d)
                rows.append([r.test_fn_id, r.t, r.residual.real, r.residual.imag,
                             r.error_budget, r.passed, r.status])
    counted = [e for e in entries if e["t"] > sim.s]
    n_pass = sum(e["status"] == "pass" for e in counted)
    n_fail = sum(e["status"] == "fail" for e in counted)
    n_inc = sum(e["status"] == "inconclusive" for e in counted)
    frac = n_pass / len(counted)
    terminal = [e for e in entries if abs(e["t"] - sim.t_end) < 1e-12]
    if n_fail or not oracle_ok:
        status = "fail"
    elif frac >= v.min_pass_fraction:
        status = "pass"
    else:
        status = "inconclusive"
    report = {
        "residuals": entries,
        "summary": {"n_pairs": len(counted), "n_pass": n_pass, "n_fail": n_fail,
                    "n_inconclusive": n_inc, "pass_fraction": frac,
                    "min_pass_fraction": v.min_pass_fraction,
                    "oracle_checked": oracle, "oracle_within": bool(oracle_ok)},
        "terminal": [{"test_fn_id": e["test_fn_id"], "residual": e["residual"],
                      "error_budget": e["error_budget"]} for e in terminal],
        "ensemble": ens.diagnostics(),
    }
    header = ("test_fn_id", "t", "re", "im", "budget", "pass", "status")
    return status, report, {"residuals.csv": (header, rows)}


def run_ck(cfg, workers):
    space = make_space(cfg)
    noise = make_noise(cfg, space)
    drift = make_drift(cfg)
    v = cfg.verify
    dirs = make_directions(cfg, space)
    x = make_point(v.ck.x, space)
    out, rows, statuses = [], [], []
    for i, (r, s, t) in enumerate(v.ck.triples):
        seed = rng.derive_seed(cfg.sim.seed, 0xC0C0, i)
        sim = SimConfig(s=r, t_end=t, dt=cfg.sim.dt, checkpoints=(r, t),
                        n_paths=cfg.sim.n_paths, seed=seed, scheme=cfg.sim.scheme)
        rep = ck_check(space, noise, drift, x, r, s, t, sim, dirs, v.n_sigma, workers)
        ok = rep.fraction_within >= v.ck.min_fraction
        statuses.append("pass" if ok else "fail")
        d = rep.to_dict()
        d["seed"] = str(seed)
        d["meets_min_fraction"] = ok
        out.append(d)
        for lab, g, th in zip(rep.labels, rep.gaps, rep.thresholds):
            rows.append([f"{r:g}/{s:g}/{t:g}", lab, g, th, g <= th])
    report = {"ck": out, "min_fraction": v.ck.min_fraction,
              "directions": {"labels": list(dirs.labels), "rule": dirs.rule}}
    header = ("triple", "direction", "gap", "threshold", "pass")
    return _worst(statuses), report, {"ck_gaps.csv": (header, rows)}


def default_alphas():
    return [2.0**-k for k in range(7)]


def run_alpha_sweep(cfg, workers):
    space = make_space(cfg)
    noise = make_noise(cfg, space)
    drift = make_drift(cfg)
    sim = make_sim(cfg)
    law = make_initial(cfg, space)
    dirs = make_directions(cfg, space)
    alphas = cfg.drift.alphas or default_alphas()
    rep = alpha_sweep(space, noise, drift, alphas, sim, law, dirs, workers,
                      final_factor=2.0, moment_factor=cfg.verify.moment.factor)
    rows = []
    for (a, b), gaps, floors in zip(rep.pairs, rep.sup_gaps, rep.noise_floors):
        for lab, g, f in zip(rep.labels, gaps, floors):
            rows.append([f"{a:g}/{b:g}", lab, g, f])
    if rep.verdict == "no signal":
        status = "inconclusive"
    else:
        status = "pass" if rep.converged and rep.moment_uniform else "fail"
    report = {"alpha_sweep": rep.to_dict(), "directions": {"rule": dirs.rule}}
    header = ("alpha_pair", "direction", "sup_gap", "noise_floor")
    return status, report, {"alpha_gaps.csv": (header, rows)}


def scaled_constant(space, level, m):
    """Projected constant field rescaled so that ``|x|^{2m}_{L^{2m}} = level``."""
    if level == 0:
        return np.zeros(space.n_modes)
    shape = space.project_function(np.ones_like)
    norm_pow = float(space.lp_norm(shape, 2 * m)) ** (2 * m)
    return shape * (level / norm_pow) ** (1.0 / (2 * m))


def run_moment_bound(cfg, workers):
    """Moment sweep ``E|X(T)|^{2m}_{L^{2m}}`` over initial states and alphas.

    Two summaries are reported. ``ratio_spread`` is, per alpha, the max/min
    over the sweep of ``E|X(T)|^{2m} / (1 + |x|^{2m})``. ``constant_spread``
    compares the fitted constants ``C_alpha = max_x ratio`` across alphas.
    """
    space = make_space(cfg)
    noise = make_noise(cfg, space)
    mc = cfg.verify.moment
    base = make_drift(cfg)
    m = base.m
    sim0 = make_sim(cfg)
    T = sim0.t_end
    table, rows = [], []
    for i, alpha in enumerate(mc.alphas):
        drift = base.with_alpha(alpha)
        for j, level in enumerate(mc.levels):
            x = scaled_constant(space, level, m)
            seed = rng.derive_seed(cfg.sim.seed, 0x404E, i, j)
            sim = SimConfig(sim0.s, T, sim0.dt, (sim0.s, T), sim0.n_paths, seed, sim0.scheme)
            ens = simulate_ensemble(space, noise, drift, sim, InitialLaw.dirac(x), workers=workers)
            ens.require_valid()
            est = moment(ens, T, "l2m_pow", space, m=m)
            x_pow = float(space.lp_norm(x, 2 * m)) ** (2 * m) if level else 0.0
            ratio = est.value / (1.0 + x_pow)
            v_x = float(lyapunov_V(drift, space, sim0.s, x))
            table.append({"alpha": alpha, "level": level, "x_norm_pow": x_pow,
                          "moment": est.value, "std_error": est.std_error, "ratio": ratio,
                          "ratio_se": est.std_error / (1.0 + x_pow), "V_x": v_x,
                          "seed": str(seed)})
            rows.append([alpha, level, est.value, est.std_error, ratio])
    spreads, consts = {}, {}
    for alpha in mc.alphas:
        r = [e["ratio"] for e in table if e["alpha"] == alpha]
        spreads[repr(alpha)] = max(r) / min(r) if min(r) > 0 else math.inf
        consts[repr(alpha)] = max(r)
    ratio_ok = all(s <= mc.factor for s in spreads.values())
    c = list(consts.values())
    const_spread = max(c) / min(c)
    const_ok = const_spread <= mc.factor
    report = {
        "moment_bound": table,
        "m": m,
        "ratio_spread": spreads,
        "ratio_spread_within_factor": ratio_ok,
        "fitted_constants": consts,
        "constant_spread": const_spread,
        "constant_uniform_in_alpha": const_ok,
        "factor": mc.factor,
    }
    header = ("alpha", "level", "value", "std_error", "ratio")
    status = "pass" if ratio_ok and const_ok else "fail"
    return status, report, {"moment_ratio.csv": (header, rows)}


def run_density_oracle(cfg, workers):
    space = make_space(cfg)
    if space.n_modes != 1:
        raise ValueError("density_oracle needs space.n_modes = 1")
    noise = make_noise(cfg, space)
    drift = make_drift(cfg)
    sim = make_sim(cfg)
    o = cfg.verify.oracle
    dirs = make_directions(cfg, space)
    rep = cross_check(space, noise, drift, sim, o.mean, o.var, dirs, o.n_cells, o.fd_dt,
                      n_sigma=cfg.verify.n_sigma, workers=workers)
    rows = []
    for t, gaps, thr in zip(rep.times, rep.gaps, rep.thresholds):
        for lab, g, th in zip(rep.labels, gaps, thr):
            rows.append([t, lab, g, th, g <= th])
    header = ("t", "direction", "gap", "threshold", "pass")
    return ("pass" if rep.passed else "fail"), {"density_oracle": rep.to_dict()}, \
        {"density_gaps.csv": (header, rows)}


RUNNERS = {
    "validate": run_validate,
    "convolution": run_convolution,
    "simulate": run_simulate,
    "fp_residual": run_fp_residual,
    "ck": run_ck,
    "alpha_sweep": run_alpha_sweep,
    "moment_bound": run_moment_bound,
    "density_oracle": run_density_oracle,
}


def execute(cfg, out_dir=None):
    """Run ``cfg`` and return ``(status, report, tables)``."""
    kind = cfg.run_kind
    if kind == "simulate":
        status, body, tables = run_simulate(cfg, cfg.workers, out_dir)
    else:
        status, body, tables = RUNNERS[kind](cfg, cfg.workers)
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "status": status,
        "code_version": __version__,
        "config_hash": config_hash(cfg),
        "seed": str(cfg.sim.seed),
        "config": numerical_dict(cfg),
        "result": body,
    }
    return status, jsonable(report), tables
