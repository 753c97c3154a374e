"""Command-line entry point.

Exit codes: 0 all checks pass, 2 a check failed, 3 inconclusive, 1 error.
"""

import argparse
import csv
import json
import os
import sys
import time

from . import __version__
from .config import ConfigError, config_hash, dump_config, load_config, parse_config
from .engine import InvalidEnsembleError
from .pipelines import SCHEMA_VERSION, execute

EXIT = {"pass": 0, "fail": 2, "inconclusive": 3}
EXIT_ERROR = 1

SUBCOMMANDS = {
    "validate": "validate",
    "convolution": "convolution",
    "simulate": "simulate",
    "fp-residual": "fp_residual",
    "ck-check": "ck",
    "alpha-sweep": "alpha_sweep",
    "moment-bound": "moment_bound",
    "density-oracle": "density_oracle",
    "run": None,
}

PLOT_KINDS = {
    "residual_vs_t": "fp_residual",
    "ck_gaps": "ck",
    "alpha_gaps": "alpha_sweep",
    "moment_ratio": "moment_bound",
}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def run_experiment(config_path, out_dir, run_kind=None, seed=None, workers=None):
    """Execute one experiment and write its artifacts. Returns the exit code."""
    start = time.time()
    cfg = load_config(config_path)
    updates = {}
    if run_kind is not None:
        updates["run_kind"] = run_kind
    if workers is not None:
        updates["workers"] = workers
    if seed is not None or updates:
        data = cfg.model_dump(mode="json")
        data.update(updates)
        if seed is not None:
            data["sim"]["seed"] = seed
        cfg = parse_config(data, str(config_path))
    os.makedirs(out_dir, exist_ok=True)
    dump_config(cfg, os.path.join(out_dir, "resolved_config.yaml"))
    status, report, tables = execute(cfg, out_dir)
    outputs = ["resolved_config.yaml", "report.json"]
    _write_json(os.path.join(out_dir, "report.json"), report)
    if cfg.output.csv:
        for name, (header, rows) in sorted(tables.items()):
            _write_csv(os.path.join(out_dir, name), header, rows)
            outputs.append(name)
    if "ensemble_file" in report["result"]:
        outputs += ["ensemble.bin", "ensemble.bin.json"]
    end = time.time()
    manifest = {
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "run_kind": cfg.run_kind,
        "seed": str(cfg.sim.seed),
        "start_time": start,
        "end_time": end,
        "wall_seconds": end - start,
        "outputs": outputs,
        "status": status,
        "exit_code": EXIT[status],
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return EXIT[status]


def emit_plotdata(report_paths, kind, out_dir):
    """Flatten reports of one kind into a tidy CSV; returns the CSV path."""
    if not report_paths:
        raise ValueError("no reports given")
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    rows = []
    for p in report_paths:
        with open(p) as fh:
            rep = json.load(fh)
        if rep.get("schema_version") != SCHEMA_VERSION or rep.get("kind") != PLOT_KINDS[kind]:
            raise ValueError(f"{p}: expected a {PLOT_KINDS[kind]} report "
                             f"(schema {SCHEMA_VERSION}), got {rep.get('kind')!r}")
        res = rep["result"]
        if kind == "residual_vs_t":
            header = ("test_fn_id", "t", "re", "im", "budget", "pass")
            for e in res["residuals"]:
                rows.append([e["test_fn_id"], e["t"], e["residual"][0], e["residual"][1],
                             e["error_budget"], e["pass"]])
        elif kind == "ck_gaps":
            header = ("triple", "direction", "gap", "threshold", "pass")
            for c in res["ck"]:
                tri = f"{c['r']:g}/{c['s']:g}/{c['t']:g}"
                for lab, g, th in zip(c["labels"], c["gaps"], c["thresholds"]):
                    rows.append([tri, lab, g, th, g <= th])
        elif kind == "alpha_gaps":
            header = ("alpha_pair", "direction", "sup_gap", "noise_floor")
            a = res["alpha_sweep"]
            for (x, y), gaps, floors in zip(a["pairs"], a["sup_gaps"], a["noise_floors"]):
                for lab, g, f in zip(a["labels"], gaps, floors):
                    rows.append([f"{x:g}/{y:g}", lab, g, f])
        else:
            header = ("alpha", "level", "value", "std_error", "ratio")
            for e in res["moment_bound"]:
                rows.append([e["alpha"], e["level"], e["moment"], e["std_error"], e["ratio"]])
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{kind}.csv")
    _write_csv(path, header, rows)
    return path


def build_parser():
    p = argparse.ArgumentParser(prog="spdefp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        help_ = "run the config's run_kind" if kind is None else f"run kind {kind}"
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override sim.seed (u64)")
        sp.add_argument("--workers", type=int, default=None, help="parallel workers")
    pd = sub.add_parser("plot-data", help="flatten reports into plot-ready CSV")
    pd.add_argument("reports", nargs="*", help="report.json files")
    pd.add_argument("--kind", required=True, choices=sorted(PLOT_KINDS))
    pd.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot-data":
            path = emit_plotdata(args.reports, args.kind, args.out)
            print(path)
            return 0
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be positive")
        code = run_experiment(args.config, args.out, SUBCOMMANDS[args.command],
                              args.seed, args.workers)
        with open(os.path.join(args.out, "manifest.json")) as fh:
            print(f"{json.load(fh)['status']}: {args.out}")
        return code
    except InvalidEnsembleError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT["fail"]
    except (ConfigError, ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
