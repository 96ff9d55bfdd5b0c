"""Synthetic outlying-slab experiments: data generation, sweeps and reports.

A sweep runs every configured algorithm on ``trials`` synthetic instances at
every grid point (rank x number of outlying slabs x SOR) and scores the
estimated B and C against the planted factors with :func:`align_and_mse`.
Trial ``n`` uses data seed ``base_seed + n`` at every grid point, so the grid
is a paired design.
"""

from dataclasses import dataclass, field, asdict
import csv
import itertools
import json
import logging
import time

import numpy as np
import yaml

from .constrained import AdmmConfig, ConstraintSet, Regularizer, irals_constrained
from .model import FactorTriple, align_and_mse, cost_lp, reconstruct, to_db
from .solvers import SolverConfig, irals, tals

log = logging.getLogger(__name__)

ALGORITHM_KINDS = ("tals", "irals", "irals_constrained")


@dataclass
class SyntheticSpec:
    """One synthetic instance: exponential(1) factors, uniform(0, 1) outliers."""

    dims: tuple = (20, 20, 20)
    rank: int = 5
    outlier_count: int = 6
    sor_db: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not 0 <= self.outlier_count <= self.dims[0]:
            raise ValueError(f"outlier_count must lie in [0, {self.dims[0]}]")


def generate(spec):
    """Draw a corrupted tensor, its planted factors and the outlying slab indices.

    Outliers are added to ``outlier_count`` horizontal slabs chosen uniformly
    without replacement. One global scale makes the signal-to-outlier ratio

        10 log10( (1/I) ||clean||^2 / ((1/|N|) sum_{i in N} ||O_i||^2) )

    equal ``spec.sor_db``.
    """
    I, J, K = spec.dims
    rng = np.random.default_rng(spec.seed)
    truth = FactorTriple(*(rng.exponential(1.0, size=(n, spec.rank)) for n in (I, J, K)))
    clean = reconstruct(truth)
    idx = np.sort(rng.choice(I, size=spec.outlier_count, replace=False))
    X = clean.copy()
    if spec.outlier_count:
        O = rng.uniform(0.0, 1.0, size=(spec.outlier_count, J, K))
        signal = np.sum(clean**2) / I
        raw = np.sum(O**2) / spec.outlier_count
        scale = np.sqrt(signal / (raw * 10 ** (spec.sor_db / 10)))
        X[idx] += scale * O
    return X, truth, idx


def realized_sor(tensor, clean, outlier_idx):
    """SOR in dB of ``tensor`` relative to the clean tensor it was built from."""
    outlier_idx = np.asarray(outlier_idx, dtype=int)
    if not len(outlier_idx):
        return np.inf
    O = (np.asarray(tensor) - clean)[outlier_idx]
    signal = np.sum(clean**2) / clean.shape[0]
    return float(10 * np.log10(signal / (np.sum(O**2) / len(outlier_idx))))


def identifiability_margin(spec):
    """Margin ``c = 2R + 2 - min(J, R) - min(K, R)`` and whether the clean slabs suffice.

    The bound holds when the clean slab count ``n_c = I - outlier_count``
    satisfies ``c <= min(n_c, R)`` and ``n_c >= (I + c) / 2``.
    """
    I, J, K = spec.dims
    R = spec.rank
    c = 2 * R + 2 - min(J, R) - min(K, R)
    n_clean = I - spec.outlier_count
    ok = c <= min(n_clean, R) and 2 * n_clean >= I + c
    return c, bool(ok)


@dataclass
class AlgorithmSpec:
    """An algorithm entry of a sweep; constrained runs carry per-factor settings."""

    name: str
    kind: str = ""
    regs: tuple = (Regularizer(), Regularizer(), Regularizer())
    cons: tuple = (ConstraintSet(), ConstraintSet(), ConstraintSet())

    def __post_init__(self):
        self.kind = self.kind or self.name
        if self.kind not in ALGORITHM_KINDS:
            raise ValueError(f"unknown algorithm kind {self.kind!r}; choose from {ALGORITHM_KINDS}")


@dataclass
class ExperimentConfig:
    dims: tuple = (20, 20, 20)
    ranks: list = field(default_factory=lambda: [5])
    outlier_counts: list = field(default_factory=lambda: [6])
    sor_dbs: list = field(default_factory=lambda: [0.0])
    trials: int = 20
    base_seed: int = 0
    restarts: int = 1
    # "tals": start IRALS runs from the trial's TALS estimate; "random" otherwise
    init: str = "tals"
    algorithms: list = field(default_factory=lambda: [AlgorithmSpec("tals"), AlgorithmSpec("irals")])
    solver: SolverConfig = field(default_factory=SolverConfig)
    admm: AdmmConfig = field(default_factory=AdmmConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.init not in ("tals", "random"):
            raise ValueError(f"init must be 'tals' or 'random', got {self.init!r}")

    def grid(self):
        for R, n, sor in itertools.product(self.ranks, self.outlier_counts, self.sor_dbs):
            yield {"rank": int(R), "outlier_count": int(n), "sor_db": float(sor)}


# --- config parsing -------------------------------------------------------

def _parse_reg(entry):
    if entry is None or entry == "none":
        return Regularizer()
    if isinstance(entry, Regularizer):
        return entry
    if isinstance(entry, str):
        return Regularizer(entry)
    return Regularizer(entry.get("kind", "none"), float(entry.get("lam", 0.0)))


def _parse_con(entry):
    if entry is None:
        return ConstraintSet()
    if isinstance(entry, ConstraintSet):
        return entry
    if isinstance(entry, str):
        return ConstraintSet(entry)
    return ConstraintSet(entry.get("kind", "unconstrained"), float(entry.get("lo", 0.0)), float(entry.get("hi", 1.0)))


def parse_factor_settings(regs=None, cons=None):
    """Per-factor (A, B, C) regularizers and constraints from plain config data.

    Either argument may be a single entry applied to all factors or a mapping
    keyed by ``A``/``B``/``C``. A smoothness penalty on B or C with nothing on
    A adds a ridge of the same weight on A, which pins the scaling that
    would otherwise move into A.
    """
    def per_factor(spec, parse):
        if isinstance(spec, dict) and set(spec) <= set("ABC"):
            return tuple(parse(spec.get(k)) for k in "ABC")
        return (parse(spec),) * 3

    reg_t = per_factor(regs, _parse_reg)
    con_t = per_factor(cons, _parse_con)
    smooth = [r.lam for r in reg_t[1:] if r.kind == "smooth" and r.active]
    if smooth and not reg_t[0].active:
        reg_t = (Regularizer("ridge", max(smooth)),) + reg_t[1:]
    return reg_t, con_t


def _parse_algorithm(entry):
    if isinstance(entry, AlgorithmSpec):
        return entry
    if isinstance(entry, str):
        return AlgorithmSpec(entry)
    regs, cons = parse_factor_settings(entry.get("regularizers"), entry.get("constraints"))
    return AlgorithmSpec(entry["name"], entry.get("kind", ""), regs, cons)


def config_from_dict(d):
    """Build an :class:`ExperimentConfig` from parsed YAML/JSON data."""
    d = dict(d or {})
    unknown = set(d) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {k: v for k, v in d.items() if k not in ("algorithms", "solver", "admm")}
    if "dims" in kw:
        kw["dims"] = tuple(kw["dims"])
    for key in ("ranks", "outlier_counts", "sor_dbs"):
        if key in kw and not isinstance(kw[key], (list, tuple)):
            kw[key] = [kw[key]]
    if "algorithms" in d:
        kw["algorithms"] = [_parse_algorithm(a) for a in d["algorithms"]]
    if "solver" in d:
        kw["solver"] = SolverConfig(**d["solver"])
    if "admm" in d:
        kw["admm"] = AdmmConfig(**d["admm"])
    return ExperimentConfig(**kw)


def load_config(path):
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh))


def config_to_dict(cfg):
    out = asdict(cfg)
    out["dims"] = list(cfg.dims)
    out["algorithms"] = [
        {
            "name": a.name,
            "kind": a.kind,
            "regularizers": {k: asdict(r) for k, r in zip("ABC", a.regs)},
            "constraints": {k: asdict(c) for k, c in zip("ABC", a.cons)},
        }
        for a in cfg.algorithms
    ]
    return out


# --- running --------------------------------------------------------------

def _selection_cost(result, t, kind, cfg):
    if kind == "tals":
        return float(result.cost_trace[-1])
    if kind == "irals":
        return cost_lp(t, result.factors, cfg.p, cfg.eps)
    return float(result.cost_trace[-1])


def _run_one(alg, t, R, cfg, admm):
    if alg.kind == "tals":
        return tals(t, R, cfg)
    if alg.kind == "irals":
        return irals(t, R, cfg)
    return irals_constrained(t, R, cfg, alg.regs, alg.cons, admm)


def fit_with_restarts(alg, t, R, cfg, admm, restarts=1, first_init=None, seed=0):
    """Run `alg` from `first_init` (or random) plus ``restarts - 1`` random starts.

    Returns the run with the lowest final cost of the algorithm's own
    objective; ground truth is never consulted.
    """
    best, best_cost = None, np.inf
    for k in range(restarts):
        if k == 0 and first_init is not None:
            run_cfg = _with(cfg, init=first_init)
        else:
            run_cfg = _with(cfg, init="random", seed=seed + 7919 * k)
        res = _run_one(alg, t, R, run_cfg, admm)
        c = _selection_cost(res, t, alg.kind, cfg)
        res.info["restart"] = k
        res.info["selection_cost"] = c
        if c < best_cost:
            best, best_cost = res, c
    return best


def _with(cfg, **kw):
    d = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    d.update(kw)
    return SolverConfig(**d)


def run_trial(cfg, point, trial):
    """All algorithms on one synthetic instance; returns a JSON-ready record."""
    seed = cfg.base_seed + trial
    spec = SyntheticSpec(cfg.dims, point["rank"], point["outlier_count"], point["sor_db"], seed)
    t, truth, idx = generate(spec)
    R = spec.rank
    record = {"trial": trial, "seed": seed, "outliers": idx.tolist(), "algorithms": {}}

    tals_alg = AlgorithmSpec("tals")
    need_tals = cfg.init == "tals" or any(a.kind == "tals" for a in cfg.algorithms)
    baseline = None
    if need_tals:
        t0 = time.perf_counter()
        try:
            baseline = fit_with_restarts(tals_alg, t, R, cfg.solver, cfg.admm, cfg.restarts, None, seed + 10**6)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            log.warning("trial %d: TALS failed: %s", trial, exc)
            baseline = exc
        tals_time = time.perf_counter() - t0

    for alg in cfg.algorithms:
        if alg.kind == "tals":
            res, elapsed = baseline, tals_time
        else:
            if isinstance(baseline, Exception):
                res, elapsed = baseline, 0.0
            else:
                first = baseline.factors if cfg.init == "tals" else None
                t0 = time.perf_counter()
                try:
                    res = fit_with_restarts(alg, t, R, cfg.solver, cfg.admm, cfg.restarts, first, seed + 2 * 10**6)
                except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
                    log.warning("trial %d: %s failed: %s", trial, alg.name, exc)
                    res = exc
                elapsed = time.perf_counter() - t0
        record["algorithms"][alg.name] = _score(res, truth, elapsed)
    return record


def _score(res, truth, elapsed):
    if isinstance(res, Exception):
        return {"ok": False, "error": f"{type(res).__name__}: {res}"}
    try:
        mse_b = align_and_mse(truth.B, res.factors.B)
        mse_c = align_and_mse(truth.C, res.factors.C)
    except ValueError as exc:
        # a component collapsed to a zero column; the metric is undefined
        return {"ok": False, "error": f"degenerate estimate: {exc}"}
    return {
        "ok": True,
        "mse_B": mse_b,
        "mse_C": mse_c,
        "mse": 0.5 * (mse_b + mse_c),
        "time": elapsed,
        "iterations": int(res.iterations),
        "converged": bool(res.converged),
        "weights": np.asarray(res.weights).tolist(),
        "final_cost": float(res.cost_trace[-1]),
    }


def summarize(trials, name):
    """Linear-domain means (reported in dB) over successful trials of one algorithm."""
    ok = [tr["algorithms"][name] for tr in trials if tr["algorithms"][name]["ok"]]
    out = {"n_trials": len(trials), "n_ok": len(ok), "n_failed": len(trials) - len(ok)}
    if not ok:
        return out
    for key in ("mse_B", "mse_C", "mse"):
        vals = [r[key] for r in ok]
        out[f"mean_{key}"] = float(np.mean(vals))
        out[f"mean_{key}_db"] = to_db(np.mean(vals))
    dbs = [to_db(r["mse"]) for r in ok]
    out["mean_of_db"] = float(np.mean(dbs))
    out["median_db"] = float(np.median(dbs))
    out["mean_time"] = float(np.mean([r["time"] for r in ok]))
    return out


@dataclass
class ExperimentReport:
    config: dict
    points: list

    def to_json(self):
        return json.dumps({"config": self.config, "points": self.points}, indent=1)

    def write(self, prefix):
        """Write ``<prefix>.json``, the ``<prefix>_table.csv`` summary and ``<prefix>_weights.csv``."""
        with open(f"{prefix}.json", "w") as fh:
            fh.write(self.to_json())
        write_table(self, f"{prefix}_table.csv")
        write_weights(self, f"{prefix}_weights.csv")

    def summary(self, algorithm, **point):
        for p in self.points:
            if all(p["point"][k] == v for k, v in point.items()):
                return p["summary"][algorithm]
        raise KeyError(f"no grid point matching {point}")


def run_sweep(cfg, progress=None):
    """Run every grid point of `cfg` and collect an :class:`ExperimentReport`."""
    points = []
    for point in cfg.grid():
        trials = []
        for n in range(cfg.trials):
            trials.append(run_trial(cfg, point, n))
            if progress:
                progress(point, n)
        summary = {a.name: summarize(trials, a.name) for a in cfg.algorithms}
        points.append({"point": point, "summary": summary, "trials": trials})
    return ExperimentReport(config_to_dict(cfg), points)


def _point_label(point, varying):
    return " ".join(f"{k}={point[k]:g}" for k in varying) or "all"


def write_table(report, path):
    """Algorithms x measures rows, one column per grid point."""
    keys = ("rank", "outlier_count", "sor_db")
    varying = [k for k in keys if len({p["point"][k] for p in report.points}) > 1]
    labels = [_point_label(p["point"], varying) for p in report.points]
    names = list(report.points[0]["summary"]) if report.points else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "measure", *labels])
        for name in names:
            sums = [p["summary"][name] for p in report.points]
            w.writerow([name, "MSE (dB)", *(f"{s.get('mean_mse_db', float('nan')):.4f}" for s in sums)])
            w.writerow([name, "MSE_B (dB)", *(f"{s.get('mean_mse_B_db', float('nan')):.4f}" for s in sums)])
            w.writerow([name, "MSE_C (dB)", *(f"{s.get('mean_mse_C_db', float('nan')):.4f}" for s in sums)])
            w.writerow([name, "TIME (sec.)", *(f"{s.get('mean_time', float('nan')):.4f}" for s in sums)])
            w.writerow([name, "failed", *(s["n_failed"] for s in sums)])


def write_weights(report, path):
    """Long-format final slab weights, normalized by their maximum, for bar plots."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "outlier_count", "sor_db", "trial", "algorithm", "slab", "weight", "normalized", "outlier"])
        for p in report.points:
            pt = p["point"]
            for tr in p["trials"]:
                planted = set(tr["outliers"])
                for name, res in tr["algorithms"].items():
                    if not res.get("ok") or name == "tals":
                        continue
                    wts = np.asarray(res["weights"])
                    norm = wts / wts.max()
                    for i, (a, b) in enumerate(zip(wts, norm)):
                        w.writerow([pt["rank"], pt["outlier_count"], pt["sor_db"], tr["trial"], name, i,
                                    repr(float(a)), repr(float(b)), int(i in planted)])


def localization_hits(report, algorithm):
    """Per-trial flags: do the smallest |N| final weights sit exactly on the planted slabs?"""
    hits = []
    for p in report.points:
        for tr in p["trials"]:
            res = tr["algorithms"][algorithm]
            if not res.get("ok"):
                hits.append(False)
                continue
            n = len(tr["outliers"])
            flagged = set(np.argsort(res["weights"], kind="stable")[:n].tolist())
            hits.append(flagged == set(tr["outliers"]))
    return hits
