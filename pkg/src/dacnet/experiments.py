"""Random geometric graph experiments: instance construction, repeated trials, output files."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dacnet.barrier import BarrierCertificate, InfeasibleError, certify, feasible_start, wrap_barrier
from dacnet.engine import (
    ConvergenceReport,
    DacConfig,
    DacStepError,
    constant_schedule,
    geometric_schedule,
    run,
)
from dacnet.graph import Graph, GraphError, estimate_growth, random_geometric_graph
from dacnet.oracles import (
    OracleError,
    OracleSolution,
    oracle_entropy,
    oracle_projection,
    oracle_quadratic,
)
from dacnet.partition import Partition, build_partition, select_fusion_centers, voronoi_regions
from dacnet.problems import (
    ProblemInstance,
    ValidationReport,
    compute_kappa,
    contraction_ratio,
    log_delta_R,
    make_entropy_problem,
    make_l2_problem,
    make_quadratic_problem,
    validate_assumptions,
)

KINDS = ("l2", "quadratic", "entropy")
SEED_STRIDE = 1_000_003
GROWTH_DIMENSION = 2.0
ENTROPY_BOX = (0.1, 10.0)


class ExperimentError(RuntimeError):
    """A trial that could not be set up; ``witnesses`` carries the evidence."""

    def __init__(self, message: str, witnesses=None):
        super().__init__(message)
        self.witnesses = witnesses or []


def parse_epsilon(text: str | None):
    """``None`` (exact), ``"1e-3"`` (constant) or ``"geom:EPS0:RATIO"``."""
    if text is None:
        return None
    if text.startswith("geom:"):
        try:
            _, eps0, ratio = text.split(":")
            eps0, ratio = float(eps0), float(ratio)
        except ValueError as exc:
            raise ValueError(f"bad schedule {text!r}; expected geom:EPS0:RATIO") from exc
        if not (eps0 > 0 and 0 < ratio <= 1):
            raise ValueError("geometric schedule needs eps0 > 0 and 0 < ratio <= 1")
        return geometric_schedule(eps0, ratio)
    eps = float(text)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    return constant_schedule(eps)


@dataclass
class ExperimentConfig:
    problem: str = "l2"
    n: int = 1024
    graph_seed: int = 0
    problem_seed: int = 0
    R: int = 1
    extension_radius: int | None = None   # None: extend regions by R as well
    constraint_fraction: float = 0.10
    t: float = 100.0
    trials: int = 1
    max_iters: int = 100
    stop_tol: float = 1e-12
    epsilon: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.problem not in KINDS:
            raise ValueError(f"problem must be one of {KINDS}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.R < 1:
            raise ValueError("R must be a positive integer")
        if self.extension_radius is not None and self.extension_radius < 1:
            raise ValueError("extension_radius must be a positive integer")
        if not 0 < self.constraint_fraction <= 1:
            raise ValueError("constraint_fraction must lie in (0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.t > 0:
            raise ValueError("t must be positive")
        parse_epsilon(self.epsilon)

    @property
    def R_ext(self) -> int:
        return self.R if self.extension_radius is None else self.extension_radius

    def dac_config(self) -> DacConfig:
        eps = parse_epsilon(self.epsilon)
        return DacConfig(max_iters=self.max_iters, stop_tol=self.stop_tol,
                         mode="exact" if eps is None else "inexact", epsilon=eps, R=self.R_ext)

    def seeds(self, trial: int) -> tuple[int, int]:
        return (self.graph_seed * SEED_STRIDE + trial, self.problem_seed * SEED_STRIDE + trial)


@dataclass
class Experiment:
    """One built instance: the problem DAC runs on and its reference solution."""

    graph: Graph
    positions: np.ndarray | None
    partition: Partition
    problem: ProblemInstance
    oracle: OracleSolution
    run_problem: ProblemInstance     # barrier-wrapped for entropy, else ``problem``
    x0: np.ndarray
    report: ValidationReport
    seeds: tuple[int, int]
    barrier: object = None


def build_experiment(cfg: ExperimentConfig, trial: int = 0, validate: bool = True,
                     graph: Graph | None = None) -> Experiment:
    """Instance for one trial on a random geometric graph, or on ``graph`` when given."""
    graph_seed, problem_seed = cfg.seeds(trial)
    if graph is None:
        g, pos = random_geometric_graph(cfg.n, graph_seed)
    else:
        if graph.n != cfg.n:
            raise ValueError("graph size does not match the configuration")
        g, pos = graph, None
    centers = select_fusion_centers(g, cfg.R, graph_seed)
    rng = np.random.default_rng(problem_seed)
    k = math.ceil(cfg.constraint_fraction * cfg.n)
    W = np.union1d(rng.choice(cfg.n, size=k, replace=False), centers)
    if cfg.problem == "l2":
        p = make_l2_problem(g, W, rng.random(cfg.n))
    elif cfg.problem == "quadratic":
        p = make_quadratic_problem(g, W, rng.random(cfg.n))
    else:
        p = make_entropy_problem(g, W, rng.random(len(W)))
    part = build_partition(g, centers, voronoi_regions(g, centers), cfg.R_ext, p.m,
                           p.constraints.A, p.constraints.W)

    report = validate_assumptions(p, part, box=ENTROPY_BOX)
    if validate and report.failures:
        raise ExperimentError("assumption check failed", report.failures)

    bp = None
    if cfg.problem == "entropy":
        bp = wrap_barrier(p, cfg.t)
        x0 = feasible_start(bp)
        oracle = oracle_entropy(p, cfg.t)
        run_problem = bp.wrapped
    else:
        A, b = p.constraints.A, p.constraints.b
        if cfg.problem == "l2":
            oracle = oracle_projection(A, b, p.objective.z)
        else:
            oracle = oracle_quadratic(p.objective.Q, p.objective.c, A, b)
        x0 = np.zeros(cfg.n)
        run_problem = p
    return Experiment(g, pos, part, p, oracle, run_problem, x0, report,
                      (graph_seed, problem_seed), bp)


@dataclass
class RateCertificate:
    kappa: float
    ratio: float
    log_delta_R: float
    dimension: float
    density: float
    kappa_t: float | None = None
    log_delta_R_t: float | None = None
    M_t: float | None = None

    @property
    def delta_R(self) -> float:
        return _exp(self.log_delta_R)

    @property
    def delta_R_t(self) -> float | None:
        return None if self.log_delta_R_t is None else _exp(self.log_delta_R_t)

    @property
    def certified(self) -> bool:
        return self.log_delta_R < 0


def _exp(v: float) -> float:
    return math.exp(v) if v < 700 else math.inf


def certify_experiment(exp: Experiment) -> RateCertificate:
    rep = exp.report
    growth = estimate_growth(exp.graph, GROWTH_DIMENSION)
    R, m = exp.partition.R, exp.problem.m
    kappa = compute_kappa(rep.c1, rep.L1, rep.c2, rep.norm_A)
    cert = RateCertificate(kappa, contraction_ratio(kappa),
                           log_delta_R(kappa, R, m, growth.dimension, growth.density),
                           growth.dimension, growth.density)
    if exp.barrier is not None:
        bc: BarrierCertificate = certify(exp.barrier, exp.partition, R, rep, growth)
        cert.kappa_t, cert.M_t = bc.kappa_t, bc.M_t
        cert.log_delta_R_t = log_delta_R(bc.kappa_t, R, m, growth.dimension, growth.density)
    return cert


@dataclass
class TrialRecord:
    trial: int
    graph_seed: int
    problem_seed: int
    status: str = "ok"
    error: str | None = None
    witnesses: list = field(default_factory=list)
    n_centers: int = 0
    n_constraints: int = 0
    errors_2: list = field(default_factory=list)
    errors_inf: list = field(default_factory=list)
    theta_max: list = field(default_factory=list)
    eta_max: list = field(default_factory=list)
    fitted_rate: float | None = None
    iterations_run: int = 0
    converged: bool = False
    diverged: bool = False
    local_failures: int = 0
    kappa: float | None = None
    log_delta_R: float | None = None
    kappa_t: float | None = None
    log_delta_R_t: float | None = None
    warnings: int = 0
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialRecord:
    graph_seed, problem_seed = cfg.seeds(trial)
    rec = TrialRecord(trial, graph_seed, problem_seed)
    start = time.perf_counter()
    try:
        exp = build_experiment(cfg, trial)
        rec.n_centers = len(exp.partition.centers)
        rec.n_constraints = len(exp.problem.constraints.W)
        rec.warnings = len(exp.report.warnings)
        cert = certify_experiment(exp)
        rec.kappa, rec.log_delta_R = cert.kappa, cert.log_delta_R
        rec.kappa_t, rec.log_delta_R_t = cert.kappa_t, cert.log_delta_R_t
        rep: ConvergenceReport = run(exp.run_problem, exp.partition, cfg.dac_config(),
                                     x0=exp.x0, oracle=exp.oracle.x_star,
                                     delta_R=cert.delta_R)
    except ExperimentError as exc:
        rec.status, rec.error, rec.witnesses = "invalid", str(exc), _jsonable(exc.witnesses)
    except InfeasibleError as exc:
        rec.status, rec.error = "infeasible", str(exc)
    except (DacStepError, OracleError, GraphError) as exc:
        rec.status, rec.error = "failed", str(exc)
    else:
        rec.errors_2, rec.errors_inf = rep.errors_2, rep.errors_inf
        rec.theta_max, rec.eta_max = rep.theta_max, rep.eta_max
        rec.fitted_rate = rep.fitted_rate
        rec.iterations_run, rec.converged, rec.diverged = rep.iterations_run, rep.converged, rep.diverged
        rec.local_failures = rep.local_failures
    rec.wall_time = time.perf_counter() - start
    return rec


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return f"<array of {obj.size}>" if obj.size > 8 else [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    return obj


def _num(v):
    """Floats for JSON: non-finite values become strings so the output stays strict JSON."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def average_series(records: list[TrialRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Mean l2 and l-infinity errors per iteration; short runs are padded with their last value."""
    ok = [r for r in records if r.ok and r.errors_2]
    if not ok:
        return np.empty(0), np.empty(0)
    length = max(len(r.errors_2) for r in ok)

    def pad(s):
        s = np.asarray(s, dtype=float)
        return np.concatenate([s, np.full(length - s.size, s[-1])])

    return (np.mean([pad(r.errors_2) for r in ok], axis=0),
            np.mean([pad(r.errors_inf) for r in ok], axis=0))


def non_increasing_from(series, start: int = 2) -> bool:
    """No increase after ``start`` beyond round-off (100 eps of the first value)."""
    full = np.asarray(series, dtype=float)
    if full.size <= start + 1:
        return True
    noise = 100.0 * np.finfo(float).eps * abs(full[0])
    return bool(np.all(np.diff(full[start:]) <= noise))


def summarize(cfg: ExperimentConfig, records: list[TrialRecord]) -> dict:
    ok = [r for r in records if r.ok]
    rates = [r.fitted_rate for r in ok if r.fitted_rate is not None]
    mean2, _ = average_series(records)
    return {
        "config": asdict(cfg),
        "trials": [
            {
                "trial": r.trial,
                "graph_seed": r.graph_seed,
                "problem_seed": r.problem_seed,
                "status": r.status,
                "error": r.error,
                "witnesses": r.witnesses,
                "n_centers": r.n_centers,
                "n_constraints": r.n_constraints,
                "iterations_run": r.iterations_run,
                "converged": r.converged,
                "diverged": r.diverged,
                "local_failures": r.local_failures,
                "fitted_rate": _num(r.fitted_rate),
                "final_err2": _num(r.errors_2[-1]) if r.errors_2 else None,
                "final_errinf": _num(r.errors_inf[-1]) if r.errors_inf else None,
                "kappa": _num(r.kappa),
                "log_delta_R": _num(r.log_delta_R),
                "delta_R": _num(_exp(r.log_delta_R)) if r.log_delta_R is not None else None,
                "kappa_t": _num(r.kappa_t),
                "log_delta_R_t": _num(r.log_delta_R_t),
                "redundant_row_warnings": r.warnings,
            }
            for r in records
        ],
        "n_failed": len(records) - len(ok),
        "mean_fitted_rate": _num(float(np.mean(rates))) if rates else None,
        "monotone_fraction": (sum(non_increasing_from(r.errors_2) for r in ok) / len(ok)) if ok else None,
        "average_non_increasing": non_increasing_from(mean2) if mean2.size else None,
    }


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(cfg: ExperimentConfig, records: list[TrialRecord], out: str | Path) -> dict:
    """Write per-trial CSVs, the averaged CSV and summary.json into ``out``.

    Wall-clock times are kept out of the files so reruns are byte-identical.
    """
    if not records:
        raise ValueError("need at least one trial record")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for r in records:
        if not r.ok:
            continue
        rows = ([i, _fmt(e2), _fmt(ei), _fmt(th), _fmt(et)]
                for i, (e2, ei, th, et) in enumerate(zip(r.errors_2, r.errors_inf,
                                                         r.theta_max, r.eta_max)))
        _write_csv(out / f"trial_{r.trial:04d}.csv", ["iter", "err2", "errinf", "theta_max", "eta_max"], rows)
    mean2, meaninf = average_series(records)
    _write_csv(out / "average.csv", ["iter", "mean_err2", "mean_errinf"],
               ([i, _fmt(a), _fmt(b)] for i, (a, b) in enumerate(zip(mean2, meaninf))))
    summary = summarize(cfg, records)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def run_trials(cfg: ExperimentConfig) -> tuple[dict, list[TrialRecord]]:
    """Run every trial in index order; write files when ``cfg.out`` is set."""
    records = [run_trial(cfg, k) for k in range(cfg.trials)]
    summary = emit_report(cfg, records, cfg.out) if cfg.out else summarize(cfg, records)
    return summary, records
