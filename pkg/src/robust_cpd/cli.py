"""Command line entry point: ``robust-cpd {gen,fit,eval,sweep}``."""

import argparse
import json
import logging
import os
import sys

import numpy as np
import yaml

from . import tensor_io
from .constrained import AdmmConfig, irals_constrained
from .harness import (
    ALGORITHM_KINDS,
    AlgorithmSpec,
    SyntheticSpec,
    fit_with_restarts,
    generate,
    identifiability_margin,
    load_config,
    parse_factor_settings,
    realized_sor,
    run_sweep,
)
from .model import FactorTriple, align_and_mse, reconstruct, to_db
from .solvers import SolverConfig

log = logging.getLogger("robust_cpd")


def _factor_paths(directory, fmt):
    return {k: os.path.join(directory, f"{k}.{fmt}") for k in "ABC"}


def save_factors(directory, f, fmt="bin"):
    os.makedirs(directory, exist_ok=True)
    for k, path in _factor_paths(directory, fmt).items():
        tensor_io.save(path, getattr(f, k))


def load_factors(directory):
    for fmt in ("bin", "csv"):
        paths = _factor_paths(directory, fmt)
        if all(os.path.exists(p) for p in paths.values()):
            return FactorTriple(*(tensor_io.load(paths[k], ndim=2) for k in "ABC"))
    raise FileNotFoundError(f"{directory}: no A/B/C factor files (.bin or .csv)")


def cmd_gen(args):
    spec = SyntheticSpec(tuple(args.dims), args.rank, args.outliers, args.sor, args.seed)
    t, truth, idx = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    tensor_io.save(os.path.join(args.out, f"tensor.{args.format}"), t)
    save_factors(args.out, truth, args.format)
    c, ok = identifiability_margin(spec)
    meta = {
        "dims": list(spec.dims),
        "rank": spec.rank,
        "sor_db": spec.sor_db,
        "seed": spec.seed,
        "outliers": idx.tolist(),
        "realized_sor_db": realized_sor(t, reconstruct(truth), idx) if len(idx) else None,
        "margin_c": c,
        "identifiable_bound": ok,
    }
    with open(os.path.join(args.out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    print(f"wrote {args.out}: outlying slabs {idx.tolist()}")
    return 0


def _fit_settings(args):
    """Merge the optional YAML file with command-line overrides."""
    conf = {}
    if args.config:
        with open(args.config) as fh:
            conf = yaml.safe_load(fh) or {}
    solver = dict(conf.get("solver", {}))
    for key, val in (("p", args.p), ("eps", args.eps), ("max_iters", args.max_iters),
                     ("tol_abs_cost", args.tol), ("seed", args.seed)):
        if val is not None:
            solver[key] = val
    cons = "nonnegative" if args.nonneg else conf.get("constraints")
    regs, cons = parse_factor_settings(conf.get("regularizers"), cons)
    constrained = any(r.active for r in regs) or any(c.kind != "unconstrained" for c in cons)
    algorithm = args.algorithm or conf.get("algorithm", "irals_constrained" if constrained else "irals")
    if algorithm not in ALGORITHM_KINDS:
        raise SystemExit(f"unknown algorithm {algorithm!r}; choose from {ALGORITHM_KINDS}")
    if constrained and algorithm != "irals_constrained":
        raise SystemExit("constraints and regularizers need --algorithm irals_constrained")
    return {
        "algorithm": algorithm,
        "solver": SolverConfig(**solver),
        "admm": AdmmConfig(**conf.get("admm", {})),
        "regs": regs,
        "cons": cons,
        "init": args.init or conf.get("init", "random"),
        "restarts": args.restarts or conf.get("restarts", 1),
    }


def cmd_fit(args):
    t = tensor_io.load(args.tensor, ndim=3)
    s = _fit_settings(args)
    cfg = s["solver"]
    alg = AlgorithmSpec("fit", s["algorithm"], s["regs"], s["cons"])
    first = None
    if s["init"] == "tals" and alg.kind != "tals":
        first = fit_with_restarts(AlgorithmSpec("tals"), t, args.rank, cfg, s["admm"], s["restarts"],
                                  None, cfg.seed).factors
    res = fit_with_restarts(alg, t, args.rank, cfg, s["admm"], s["restarts"], first, cfg.seed or 0)
    save_factors(args.out, res.factors, args.format)
    report = {
        "algorithm": alg.kind,
        "iterations": res.iterations,
        "converged": res.converged,
        "cost_trace": res.cost_trace.tolist(),
        "weights": np.asarray(res.weights).tolist(),
    }
    if args.truth:
        report.update(_mse_report(load_factors(args.truth), res.factors))
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=1)
    msg = f"{alg.kind}: {res.iterations} sweeps, converged={res.converged}, final cost {res.cost_trace[-1]:.6g}"
    if args.truth:
        msg += f", MSE B {report['mse_db_B']:.2f} dB, C {report['mse_db_C']:.2f} dB"
    print(msg)
    return 0


def _mse_report(truth, est):
    return {f"mse_db_{k}": to_db(align_and_mse(getattr(truth, k), getattr(est, k))) for k in "ABC"}


def cmd_eval(args):
    report = _mse_report(load_factors(args.truth), load_factors(args.estimate))
    if args.report:
        existing = {}
        if os.path.exists(args.report):
            with open(args.report) as fh:
                existing = json.load(fh)
        existing.update(report)
        with open(args.report, "w") as fh:
            json.dump(existing, fh, indent=1)
    for k in "ABC":
        print(f"MSE {k}: {report[f'mse_db_{k}']:.4f} dB")
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.trials is not None:
        cfg.trials = args.trials

    def progress(point, n):
        log.info("%s trial %d/%d", point, n + 1, cfg.trials)

    report = run_sweep(cfg, progress)
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    report.write(args.out)
    for p in report.points:
        parts = [f"{name} {s.get('mean_mse_db', float('nan')):.2f} dB" for name, s in p["summary"].items()]
        print(p["point"], "|", ", ".join(parts))
    print(f"wrote {args.out}.json, {args.out}_table.csv, {args.out}_weights.csv")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="robust-cpd", description="Robust PARAFAC with outlying slabs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corrupted tensor and its truth")
    g.add_argument("--dims", type=int, nargs=3, default=[20, 20, 20], metavar=("I", "J", "K"))
    g.add_argument("--rank", type=int, default=5)
    g.add_argument("--outliers", type=int, default=6, help="number of outlying horizontal slabs")
    g.add_argument("--sor", type=float, default=0.0, help="signal-to-outlier ratio in dB")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("bin", "csv"), default="bin")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit a CP model to a tensor file")
    f.add_argument("tensor", help="tensor file (.bin container or i,j,k,value .csv)")
    f.add_argument("--rank", type=int, required=True)
    f.add_argument("--config", help="YAML file with algorithm, solver, admm, regularizers, constraints")
    f.add_argument("--algorithm", choices=ALGORITHM_KINDS)
    f.add_argument("--p", type=float)
    f.add_argument("--eps", type=float)
    f.add_argument("--max-iters", type=int)
    f.add_argument("--tol", type=float)
    f.add_argument("--init", choices=("random", "tals"))
    f.add_argument("--seed", type=int)
    f.add_argument("--restarts", type=int)
    f.add_argument("--nonneg", action="store_true", help="nonnegativity on all factors")
    f.add_argument("--truth", help="directory with true A/B/C, adds MSEs to the report")
    f.add_argument("--format", choices=("bin", "csv"), default="bin")
    f.add_argument("--out", required=True, help="output directory")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="aligned MSE of estimated factors against the truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--estimate", required=True)
    e.add_argument("--report", help="JSON file to create or update with the MSEs")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a Monte-Carlo experiment from a YAML config")
    s.add_argument("config")
    s.add_argument("--out", required=True, help="output prefix for .json and .csv files")
    s.add_argument("--trials", type=int, help="override the trial count")
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
