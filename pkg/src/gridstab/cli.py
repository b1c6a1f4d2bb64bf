"""Command-line entry point: ``gridstab <command> ...``."""

from __future__ import annotations

import argparse
import json
import secrets
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    AnalysisError,
    Channels,
    critical_lambda,
    histogram,
    quantile_curve,
    test_plan,
)
from .case import CaseError, default_uncertainty, load_case, parse_case, serialize
from .network import ReductionError, SteadyStateNetwork, network_from_case, reduce_network
from .optimize import (
    AnnealingSchedule,
    DampingPlan,
    NoInteriorMinimum,
    NoisyObjectiveConfig,
    optimize_beta_distinct,
    optimize_beta_equal,
    optimize_beta_uncertain,
)
from .pipeline import ConfigError, PipelineError, load_config, run_pipeline
from .powerflow import PowerFlowError, PowerFlowSolution, solve_power_flow
from .stability import StabilityError, assemble_jacobian, lyapunov_exponent
from .uncertainty import SeededSampler, UncertaintySpec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4

VALIDATION_ERRORS = (CaseError, ConfigError, NoInteriorMinimum, json.JSONDecodeError, OSError)
NUMERICAL_ERRORS = (PowerFlowError, ReductionError, StabilityError, AnalysisError)


class UsageError(ValueError):
    pass


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _emit(args, text: str, name: str) -> None:
    if args.out:
        path = Path(args.out)
        if path.suffix == "":
            path.mkdir(parents=True, exist_ok=True)
            path = path / name
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load(args):
    return load_case(args.case, getattr(args, "dynamics", None))


def _load_spec(args, case) -> UncertaintySpec:
    if getattr(args, "uncertainty", None):
        spec = UncertaintySpec.from_dict(json.loads(Path(args.uncertainty).read_text()))
    else:
        spec = default_uncertainty(case)
    return spec.with_beta_sigma(args.sigma)


def _load_plan(path) -> DampingPlan:
    return DampingPlan.from_json(Path(path).read_text())


def _network(args) -> SteadyStateNetwork:
    text = Path(args.case).read_text()
    if text.lstrip().startswith("{") and '"coupling"' in text:
        return SteadyStateNetwork.from_dict(json.loads(text))
    return network_from_case(_load(args))


def cmd_parse(args) -> int:
    case = _load(args)
    for w in case.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _emit(args, serialize(case) + "\n", "case.json")
    return EXIT_OK


def cmd_powerflow(args) -> int:
    case = _load(args)
    sol = solve_power_flow(case, tolerance=args.tolerance, max_iterations=args.max_iterations)
    if args.format == "csv":
        lines = ["bus,vm,va_deg"] + [
            f"{b.id},{vm!r},{va!r}"
            for b, vm, va in zip(case.buses, sol.voltage_magnitude.tolist(), np.degrees(sol.voltage_angle).tolist())
        ]
        _emit(args, "\n".join(lines) + "\n", "powerflow.csv")
    else:
        _emit(args, _dump(sol.to_dict()), "powerflow.json")
    if not sol.converged:
        print(f"power flow did not converge after {sol.iterations} iterations", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_reduce(args) -> int:
    case = _load(args)
    if args.solution:
        sol = PowerFlowSolution.from_dict(json.loads(Path(args.solution).read_text()))
        net = reduce_network(case, sol)
    else:
        net = network_from_case(case)
    _emit(args, _dump(net.to_dict()), "network.json")
    return EXIT_OK


def cmd_lyapunov(args) -> int:
    net = _network(args)
    beta = _load_plan(args.plan).as_vector() if args.plan else net.beta
    res = lyapunov_exponent(assemble_jacobian(net, beta))
    _emit(args, _dump(res.to_dict(with_spectrum=args.spectrum)), "lyapunov.json")
    return EXIT_OK


def cmd_optimize(args) -> int:
    case = _load(args)
    net = network_from_case(case)
    schedule = AnnealingSchedule.from_dict(json.loads(Path(args.schedule).read_text())) if args.schedule else AnnealingSchedule()
    if args.method == "equal":
        plan = optimize_beta_equal(net)
    elif args.method == "distinct":
        plan = optimize_beta_distinct(net, schedule, SeededSampler(_seed(args)))
    else:
        spec = _load_spec(args, case)
        config = NoisyObjectiveConfig(samples=args.samples)
        plan = optimize_beta_uncertain(case, spec, config, schedule, SeededSampler(_seed(args)), jobs=args.jobs)
    _emit(args, plan.to_json() + "\n", "plan.json")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    case = _load(args)
    spec = _load_spec(args, case)
    plan = _load_plan(args.plan)
    dist = test_plan(case, plan, spec, Channels.parse(args.channels), args.draws, SeededSampler(_seed(args)), jobs=args.jobs)
    curve = quantile_curve(dist)
    crit = critical_lambda(dist) if dist.samples.size >= 100 else []
    summary = {
        "requested": dist.requested,
        "nonconvergent": dist.nonconvergent,
        "seed": args.seed,
        "channels": dist.provenance["channels"],
        "beta_sigma": spec.beta_sigma,
        "critical": [{"percent": c.percent, "lambda_c": c.value} for c in crit],
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "distribution.csv").write_text(dist.to_csv())
        (out / "quantiles.csv").write_text(
            "quantile,lambda_L\n" + "".join(f"{q!r},{v!r}\n" for q, v in curve.to_rows())
        )
        (out / "histogram.csv").write_text(
            "bin_center,count\n" + "".join(f"{c!r},{n}\n" for c, n in histogram(dist, args.bin_width))
        )
        (out / "critical.json").write_text(_dump(summary))
    else:
        sys.stdout.write(_dump(summary))
    if dist.nonconvergent_fraction > args.max_nonconvergent:
        print(f"{dist.nonconvergent} of {dist.requested} draws did not converge", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _run_config(args, path) -> int:
    cfg = load_config(path)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output = Path(args.out)
    result = run_pipeline(cfg, jobs=args.jobs, log=lambda m: print(m, file=sys.stderr))
    print(f"artifacts written to {result.output}", file=sys.stderr)
    return EXIT_PARTIAL if result.partial else EXIT_OK


def cmd_report(args) -> int:
    return _run_config(args, args.matrix)


def cmd_run(args) -> int:
    return _run_config(args, args.config)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (generated and printed if omitted)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for instance generation")
    common.add_argument("--out", default=None, help="output file or directory (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    p = argparse.ArgumentParser(prog="gridstab", description="Small-signal stability and damping selection under uncertainty.")
    sub = p.add_subparsers(dest="command", required=True)

    def case_cmd(name, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.add_argument("case", help="MATPOWER .m or case JSON")
        sp.add_argument("--dynamics", help="CSV/JSON with gen_index,H,D,xd_prime")
        return sp

    sp = case_cmd("parse", "validate a case and print its JSON form")
    sp.set_defaults(func=cmd_parse)

    sp = case_cmd("powerflow", "solve the AC power flow")
    sp.add_argument("--tolerance", type=float, default=1e-8)
    sp.add_argument("--max-iterations", type=int, default=50)
    sp.set_defaults(func=cmd_powerflow)

    sp = case_cmd("reduce", "build the effective generator network")
    sp.add_argument("--solution", help="power-flow JSON to reuse")
    sp.set_defaults(func=cmd_reduce)

    sp = case_cmd("lyapunov", "Lyapunov exponent of a case or network JSON")
    sp.add_argument("--plan", help="damping plan JSON (default: damping from the case)")
    sp.add_argument("--spectrum", action="store_true", help="include the full spectrum")
    sp.set_defaults(func=cmd_lyapunov)

    sp = case_cmd("optimize", "choose damping values")
    sp.add_argument("--method", choices=("equal", "distinct", "uncertain"), required=True)
    sp.add_argument("--sigma", type=float, default=1.0, help="damping noise σ (1/s)")
    sp.add_argument("--samples", type=int, default=100, help="samples per noisy evaluation")
    sp.add_argument("--schedule", help="annealing schedule JSON")
    sp.add_argument("--uncertainty", help="uncertainty spec JSON (default: from printed resolution)")
    sp.set_defaults(func=cmd_optimize)

    sp = case_cmd("evaluate", "Monte Carlo test of a damping plan")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--channels", choices=("full", "beta", "y"), default="full")
    sp.add_argument("--draws", type=int, default=10000)
    sp.add_argument("--bin-width", type=float, default=0.05)
    sp.add_argument("--max-nonconvergent", type=float, default=0.01, help="fraction above which exit code is 4")
    sp.add_argument("--uncertainty", help="uncertainty spec JSON")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", parents=[common], help="run the full comparison matrix from a config")
    sp.add_argument("--matrix", required=True, help="experiment config JSON")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("run", parents=[common], help="run the pipeline from an experiment config")
    sp.add_argument("config")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, VALIDATION_ERRORS + (ValueError,)) and not isinstance(exc.cause, NUMERICAL_ERRORS):
            return EXIT_VALIDATION
        return EXIT_NUMERICAL
    except NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (*VALIDATION_ERRORS, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
