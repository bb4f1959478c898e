"""Command line entry point.

    python -m inertial_spin.main simulate --preset thm1-pass --out output/thm1
    python -m inertial_spin.main check thm2 --preset thm2-pass
    python -m inertial_spin.main gronwall suite --seed 3
    python -m inertial_spin.main sweep --preset thm1-pass --axis gamma --values 5,10,20

Exit codes: 0 all checks pass, 1 unexpected error, 2 a check failed,
3 invalid scenario, 4 numerical divergence.
"""
import argparse
import copy
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import get_settings, setup_logging
from .errors import DivergenceError, ScenarioError
from .gronwall import Gron2Problem, bound_table, gron1_bound, gron2_bound, gron2_rate, integro_ode_oracle
from .runner import RunReport, run, sweep, write_csv, write_json
from .scenario import Scenario, build_gronwall_problem, list_presets, load_preset, load_scenario, scenario_from_dict

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2
EXIT_INVALID = 3
EXIT_DIVERGED = 4

THEOREM_CHECKS = {"thm1": "thm1", "thm2": "thm2", "ha": "ha", "chy": "chy", "cs-flock": "cs_flock"}

GRONWALL_SUITE = {"name": "gronwall-suite", "model": "gronwall", "params": {}, "checks": ["gronwall_suite"]}


def _add_scenario_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    source = parser.add_mutually_exclusive_group(required=required)
    source.add_argument("--scenario", help="Path to a scenario JSON file")
    source.add_argument("--preset", help="Name of a bundled preset")
    parser.add_argument("--out", help="Output directory (default: $INERTIAL_SPIN_OUTPUT_DIR/<scenario name>)")
    parser.add_argument("--seed", type=int, help="Override the seed of generated initial data")
    parser.add_argument("--dt", type=float, help="Override the integrator step")
    parser.add_argument("--t-end", type=float, dest="t_end", help="Override the final time")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inertial_spin",
                                     description="Numerical lab for the inertial spin flocking model")
    parser.add_argument("--log-level", help="Logging level (default: $INERTIAL_SPIN_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Run a scenario with its declared checks")
    _add_scenario_args(simulate)

    check = sub.add_parser("check", help="Evaluate one theorem criterion on a scenario")
    check.add_argument("theorem", choices=sorted(THEOREM_CHECKS))
    _add_scenario_args(check)

    gronwall = sub.add_parser("gronwall", help="Gronwall-type bounds")
    gronwall.add_argument("action", choices=["eval", "oracle", "suite"])
    _add_scenario_args(gronwall, required=False)
    gronwall.add_argument("--samples", type=int, default=201, help="Number of evaluation times (eval, oracle)")

    reduce = sub.add_parser("reduce", help="Compare with a reduced model")
    reduce.add_argument("target", choices=["kuramoto", "cs"])
    _add_scenario_args(reduce)

    sweep_parser = sub.add_parser("sweep", help="Run a scenario over values of one numeric field")
    _add_scenario_args(sweep_parser)
    sweep_parser.add_argument("--axis", required=True, help="Field name (chi, gamma, k, delta0 or a dotted path)")
    sweep_parser.add_argument("--values", default="", help="Comma-separated values")
    sweep_parser.add_argument("--n-jobs", type=int, dest="n_jobs", help="Parallel workers (default: $INERTIAL_SPIN_N_JOBS)")

    report = sub.add_parser("report", help="Summarize an existing run directory")
    report.add_argument("--out", required=True, help="Run directory containing report.json")

    sub.add_parser("presets", help="List bundled presets")
    return parser


def resolve_scenario(args: argparse.Namespace) -> Scenario:
    scenario = load_preset(args.preset) if args.preset else load_scenario(args.scenario)
    if args.seed is not None or args.dt is not None or args.t_end is not None:
        scenario = scenario.with_overrides(seed=args.seed, dt=args.dt, t_end=args.t_end)
    return scenario


def with_checks(scenario: Scenario, checks: List[str]) -> Scenario:
    data = copy.deepcopy(scenario.to_dict())
    data["checks"] = checks
    return scenario_from_dict(data)


def _out_dir(args: argparse.Namespace, scenario: Scenario, suffix: str = "") -> Path:
    if args.out:
        return Path(args.out)
    return Path(get_settings().output_dir) / f"{scenario.name}{suffix}"


def print_report(report: RunReport, out: Path) -> None:
    print(f"Scenario: {report.scenario} ({report.model})")
    print(f"Digest:   {report.digest}")
    print(f"Series:   {out / report.series if report.series else '-'}")
    for outcome in report.checks:
        print(f"  [{'PASS' if outcome.passed else 'FAIL'}] {outcome.name}: {outcome.criterion}")
    print(f"Result:   {'PASS' if report.passed else 'FAIL'}")


def _exit_for(report: RunReport) -> int:
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_run(scenario: Scenario, out: Path) -> int:
    report = run(scenario, out)
    print_report(report, out)
    return _exit_for(report)


def cmd_gronwall(args: argparse.Namespace) -> int:
    if args.action == "suite":
        scenario = resolve_scenario(args) if (args.preset or args.scenario) else scenario_from_dict(
            copy.deepcopy(GRONWALL_SUITE))
        if not (args.preset or args.scenario):
            scenario = scenario.with_overrides(seed=args.seed, t_end=args.t_end)
        return cmd_run(scenario, _out_dir(args, scenario))

    if not (args.preset or args.scenario):
        raise ScenarioError("scenario", f"gronwall {args.action} needs --scenario or --preset")
    scenario = resolve_scenario(args)
    if scenario.model != "gronwall":
        raise ScenarioError("model", f"gronwall {args.action} needs a gronwall scenario, got '{scenario.model}'")
    problem = build_gronwall_problem(scenario)
    t_end = float(scenario.params["t_end"])
    out = _out_dir(args, scenario, f"-{args.action}")
    out.mkdir(parents=True, exist_ok=True)
    if args.action == "eval":
        table = bound_table(problem, np.linspace(0.0, t_end, args.samples))
        write_csv(table, out / "bounds.csv")
        print(f"Bounds written to {out / 'bounds.csv'} (uniform bound {table['uniform_bound'].iloc[0]:.6g})")
        return EXIT_OK

    oracle = integro_ode_oracle(problem, t_end, args.samples)
    frame = oracle.frame()
    if isinstance(problem, Gron2Problem):
        rate = gron2_rate(problem)
        frame["bound"] = [gron2_bound(problem, float(t), rate) for t in oracle.t]
    else:
        frame["bound"] = [gron1_bound(problem, float(t)) for t in oracle.t]
    margin = float((frame["bound"] - frame["y"]).min())
    write_csv(frame, out / "oracle.csv")
    dominated = margin >= -1e-8
    write_json({"problem": scenario.params["problem"], "t_end": t_end, "min_margin": margin,
                "dominated": dominated}, out / "report.json")
    print(f"Oracle written to {out / 'oracle.csv'}; min(bound - y) = {margin:.3e}")
    return EXIT_OK if dominated else EXIT_CHECK_FAILED


def cmd_reduce(args: argparse.Namespace) -> int:
    scenario = resolve_scenario(args)
    if args.target == "kuramoto":
        if scenario.model != "kuramoto":
            raise ScenarioError("model", "reduce kuramoto needs a kuramoto scenario")
        checks = ["kuramoto_reduction"]
    else:
        if scenario.model != "is":
            raise ScenarioError("model", "reduce cs needs an inertial spin scenario")
        checks = ["chi_limit"] if scenario.extra.get("chis") else ["chi_deviation"]
    scenario = with_checks(scenario, checks)
    return cmd_run(scenario, _out_dir(args, scenario, f"-reduce-{args.target}"))


def cmd_sweep(args: argparse.Namespace) -> int:
    scenario = resolve_scenario(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ScenarioError("values", f"not a comma-separated list of numbers: {args.values}") from e
    out = _out_dir(args, scenario, f"-sweep-{args.axis}")
    result = sweep(scenario, args.axis, values, out, args.n_jobs)
    print(f"Sweep over {args.axis}: {len(values)} runs, aggregate in {out / 'sweep.csv'}")
    for value, report in zip(result.values, result.reports):
        print(f"  {args.axis}={value:g}: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.out) / "report.json"
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    print(f"Scenario: {data.get('scenario')} ({data.get('model')})")
    for outcome in data.get("checks", []):
        print(f"  [{'PASS' if outcome['passed'] else 'FAIL'}] {outcome['name']}: {outcome['criterion']}")
    passed = bool(data.get("passed", data.get("dominated", False)))
    print(f"Result:   {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level.upper() if args.log_level else None)

    try:
        if args.command == "presets":
            for name in list_presets():
                print(name)
            return EXIT_OK
        if args.command == "report":
            return cmd_report(args)
        if args.command == "gronwall":
            return cmd_gronwall(args)
        if args.command == "reduce":
            return cmd_reduce(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        scenario = resolve_scenario(args)
        if args.command == "check":
            scenario = with_checks(scenario, [THEOREM_CHECKS[args.theorem]])
            return cmd_run(scenario, _out_dir(args, scenario, f"-{args.theorem}"))
        return cmd_run(scenario, _out_dir(args, scenario))
    except ScenarioError as e:
        logger.error(f"Invalid scenario: {e}")
        return EXIT_INVALID
    except DivergenceError as e:
        logger.error(f"Numerical divergence: {e}")
        return EXIT_DIVERGED
    except (FileNotFoundError, ValueError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID
    except Exception as e:
        logger.exception(f"Error: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
