"""Command line entry point: ``dacnet run | validate | certify``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from dacnet.experiments import (
    KINDS,
    ExperimentConfig,
    ExperimentError,
    build_experiment,
    certify_experiment,
    run_trials,
    _jsonable,
    _num,
)


def _instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", choices=KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--graph-seed", type=int, default=0)
    p.add_argument("--problem-seed", type=int, default=0)
    p.add_argument("--radius", type=int, default=1, help="fusion center spacing and extension radius R")
    p.add_argument("--extension-radius", type=int, default=None,
                   help="extend regions by this many hops instead of R")
    p.add_argument("--constraint-fraction", type=float, default=0.10)
    p.add_argument("--t", type=float, default=100.0, help="barrier parameter (entropy)")
    p.add_argument("--trial", type=int, default=0, help="trial index used to derive seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dacnet", description="Divide-and-conquer optimization on graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run DAC trials and write CSV/JSON results")
    _instance_args(run)
    run.add_argument("--trials", type=int, default=1)
    run.add_argument("--max-iters", type=int, default=100)
    run.add_argument("--stop-tol", type=float, default=1e-12)
    run.add_argument("--epsilon", default=None,
                     help="inexact local tolerance: a constant or geom:EPS0:RATIO")
    run.add_argument("--out", required=True)

    for name, text in (("validate", "check the modelling assumptions"),
                       ("certify", "report kappa and the certified rate")):
        p = sub.add_parser(name, help=text)
        _instance_args(p)
        p.add_argument("--out", default=None, help="also write the JSON report here")
    return parser


def _config(args) -> ExperimentConfig:
    kw = dict(problem=args.problem, n=args.n, graph_seed=args.graph_seed,
              problem_seed=args.problem_seed, R=args.radius,
              extension_radius=args.extension_radius,
              constraint_fraction=args.constraint_fraction, t=args.t)
    if args.command == "run":
        kw.update(trials=args.trials, max_iters=args.max_iters, stop_tol=args.stop_tol,
                  epsilon=args.epsilon, out=args.out)
    return ExperimentConfig(**kw)


def _validate_report(cfg: ExperimentConfig, trial: int) -> dict:
    exp = build_experiment(cfg, trial, validate=False)
    rep = exp.report
    return {
        "n": cfg.n,
        "seeds": list(exp.seeds),
        "centers": len(exp.partition.centers),
        "constraints": len(exp.problem.constraints.W),
        "m": rep.m,
        "width_A": rep.width_A,
        "width_J": rep.width_J,
        "c1": _num(rep.c1),
        "L1": _num(rep.L1),
        "c2": _num(rep.c2),
        "norm_A": _num(rep.norm_A),
        "ok": rep.ok,
        "failures": _jsonable([f[:3] for f in rep.failures]),
        "redundant_rows": _jsonable(rep.warnings),
    }


def _certify_report(cfg: ExperimentConfig, trial: int) -> dict:
    exp = build_experiment(cfg, trial, validate=False)
    cert = certify_experiment(exp)
    out = {
        "n": cfg.n,
        "R": cfg.R,
        "extension_radius": cfg.R_ext,
        "seeds": list(exp.seeds),
        "kappa": _num(cert.kappa),
        "ratio": _num(cert.ratio),
        "dimension": cert.dimension,
        "density": _num(cert.density),
        "log_delta_R": _num(cert.log_delta_R),
        "delta_R": _num(cert.delta_R),
        "delta_R_below_one": cert.certified,
    }
    if cert.kappa_t is not None:
        out.update(kappa_t=_num(cert.kappa_t), M_t=_num(cert.M_t),
                   log_delta_R_t=_num(cert.log_delta_R_t), delta_R_t=_num(cert.delta_R_t),
                   delta_R_t_below_one=cert.log_delta_R_t < 0)
    return out


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except ValueError as exc:
        print(f"dacnet: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            summary, _ = run_trials(cfg)
            print(f"{cfg.trials} trial(s), {summary['n_failed']} failed, "
                  f"mean fitted rate {summary['mean_fitted_rate']}; results in {cfg.out}")
            return 0 if summary["n_failed"] == 0 else 1
        if args.command == "validate":
            report = _validate_report(cfg, args.trial)
            _emit(report, args.out)
            return 0 if report["ok"] else 1
        _emit(_certify_report(cfg, args.trial), args.out)
        return 0
    except (ExperimentError, OSError, RuntimeError, ValueError) as exc:
        print(f"dacnet: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
