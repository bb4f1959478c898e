"""Run scenarios: simulate, write the time series, evaluate checks, write the report.

Every run owns its output directory. Outputs carry no timestamps or absolute
paths, so the same scenario always produces byte-identical files.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .config import get_settings
from .diagnostics import (DiagnosticsObserver, dissipation_audit, extremal_pair, inequality_audit,
                          s_integral_audit)
from .errors import AuditNotApplicable, HypothesisViolation
from .gronwall import gronwall_suite
from .integrator import Scheme, Trajectory, simulate
from .kernels import ConstantMatrixKernel, MetricKernel, MultiplicativeKernel, TimeVaryingKernel
from .reductions import (CSState, chi_limit_study, chy_condition, cs_flocking_check, cs_simulate,
                         embed_planar, h_functional, kuramoto_simulate, planar_kernel, planar_params,
                         recover_phases, sddi_audit, strictly_decreasing)
from .scenario import (Scenario, build_cs, build_initial_state, build_integrator, build_kernel,
                       build_kuramoto, build_params)
from .theorems import fit_decay_rate, ha_multiplicative_check, thm1_check, thm2_check, verify_invariance

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
REPORT_FILE = "report.json"

# tolerance of the embedded planar flow against the oscillator phases
PHASE_TOL = 1e-5
H_FUNCTIONAL_TOL = 1e-8


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    criterion: str
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "criterion": self.criterion, "details": self.details}


@dataclass
class RunReport:
    scenario: str
    model: str
    digest: str
    series: Optional[str]
    checks: List[CheckOutcome] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckOutcome:
        for outcome in self.checks:
            if outcome.name == name:
                return outcome
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "model": self.model,
            "digest": self.digest,
            "series": self.series,
            "summary": self.summary,
            "checks": [c.to_dict() for c in self.checks],
            "passed": self.passed,
        }


def jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if value is None or isinstance(value, str):
        return value
    if hasattr(value, "to_dict"):
        return jsonable(value.to_dict())
    return str(value)


def write_json(data: Dict[str, Any], path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(jsonable(data), f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _outcome(name: str, result, criterion: str) -> CheckOutcome:
    return CheckOutcome(name, bool(result.passed), criterion, jsonable(result.to_dict()))


def _not_applicable(name: str, exc: Exception) -> CheckOutcome:
    logger.warning("check %s not applicable: %s", name, exc)
    return CheckOutcome(name, False, "applicable to this scenario", {"error": str(exc)})


# ---------------------------------------------------------------- inertial spin

def spin_decay_factor(config, gamma_over_chi: float, times: np.ndarray) -> np.ndarray:
    """Factor by which the mean spin shrinks under the scheme in use.

    The mean spin obeys a linear ODE for symmetric weights, so an RK4 step
    multiplies it by the stability polynomial R(z), z = -gamma dt / chi.
    """
    if config.scheme == Scheme.REFERENCE:
        return np.exp(-gamma_over_chi * times)
    z = -gamma_over_chi * config.dt
    growth = 1.0 + z + z ** 2 / 2.0 + z ** 3 / 6.0 + z ** 4 / 24.0
    steps = np.rint(times / config.dt)
    return growth ** steps


def _check_conservation(trajectory: Trajectory, frame: pd.DataFrame) -> CheckOutcome:
    params, config = trajectory.params, trajectory.config
    horizon = max(1.0, float(frame["t"].iloc[-1]) / 10.0)
    drift_budget = (1e-8 if config.scheme == Scheme.REFERENCE or config.projected else 1e-6) * horizon
    s0 = trajectory.initial.s.mean(axis=0)
    expected = spin_decay_factor(config, params.gamma / params.chi, trajectory.times)[:, None] * s0
    actual = trajectory.s.mean(axis=1)
    sc_error = float(np.max(np.linalg.norm(actual - expected, axis=1)))
    sc_budget = 1e-6 * float(np.linalg.norm(s0)) + 1e-12
    speed = float(frame["speed_drift"].max())
    product = float(frame["sv_drift"].max())
    details = {"speed_drift": speed, "sv_drift": product, "drift_budget": drift_budget,
               "sc_error": sc_error, "sc_budget": sc_budget}
    passed = speed <= drift_budget and product <= drift_budget and sc_error <= sc_budget
    return CheckOutcome("conservation", passed, "speed and s.v drift within budget; mean spin decays at gamma/chi",
                        details)


def _bounded_weights(kernel):
    if isinstance(kernel, (ConstantMatrixKernel, MultiplicativeKernel, TimeVaryingKernel)):
        return float(kernel.psi_m), float(kernel.psi_M)
    raise AuditNotApplicable(f"bounded-weight theorem needs weights with a positive lower bound, got {kernel.kind}")


def _check_chi_limit(scenario: Scenario, trajectory: Trajectory, out: Path) -> CheckOutcome:
    chis = scenario.extra.get("chis")
    if not chis:
        raise AuditNotApplicable("chi_limit needs extra.chis")
    config, params, kernel = trajectory.config, trajectory.params, trajectory.kernel
    state0 = trajectory.initial
    table = chi_limit_study(params.k, params.gamma, kernel, state0.x, state0.v, chis,
                            config.t_end, config.dt, config.sample_every)
    write_csv(table, out / "chi_limit.csv")
    deviations = table["deviation"].tolist()
    passed = not bool(table["diverged"].any()) and strictly_decreasing(deviations)
    return CheckOutcome("chi_limit", passed, "velocity deviation from the Cucker-Smale limit strictly decreases in chi",
                        {"chi": table["chi"].tolist(), "deviation": deviations})


def _check_invariance(trajectory: Trajectory, delta0: float) -> CheckOutcome:
    result = verify_invariance(trajectory, delta0)
    return CheckOutcome("invariance", result.held, "A(v(t)) > delta0 at every sample", result.to_dict())


def _check_chi_deviation(scenario: Scenario, trajectory: Trajectory) -> CheckOutcome:
    params, config = trajectory.params, trajectory.config
    state0 = trajectory.initial
    limit = cs_simulate(params.kbar, trajectory.kernel, CSState(0.0, state0.x, state0.v), config)
    deviation = float(np.max(np.linalg.norm(trajectory.v - limit.v, axis=2)))
    budget = float(scenario.extra.get("deviation_budget", 10.0 * params.chi))
    return CheckOutcome("chi_deviation", deviation <= budget, "max |v_IS - v_CS| within the deviation budget (default 10 chi)",
                        {"chi": params.chi, "deviation": deviation, "budget": budget})


def _is_checks(scenario: Scenario, trajectory: Trajectory, frame: pd.DataFrame, out: Path) -> List[CheckOutcome]:
    params, kernel = trajectory.params, trajectory.kernel
    state0 = trajectory.initial
    delta0 = scenario.delta0
    runners: Dict[str, Callable[[], CheckOutcome]] = {
        "conservation": lambda: _check_conservation(trajectory, frame),
        "dissipation": lambda: _outcome("dissipation", dissipation_audit(trajectory, kernel, params),
                                        "|d/dt lyap + 2 gamma/(chi k) S| within the finite-difference budget"),
        "s_integral": lambda: _outcome("s_integral", s_integral_audit(trajectory, params),
                                       "cumulative integral of S never exceeds its bound"),
        "inequality": lambda: _outcome("inequality", inequality_audit(trajectory, params, delta0=delta0),
                                       "second-order diameter inequalities hold within the finite-difference budget"),
        "invariance": lambda: _check_invariance(trajectory, delta0),
        "thm1": lambda: _outcome("thm1", thm1_check(state0, params, kernel, delta0, trajectory=trajectory),
                                 "A0 > delta0, C0 < 1 - delta0, invariance held and D(v) decayed"),
        "thm2": lambda: _outcome("thm2", thm2_check(state0, params, *_bounded_weights(kernel), delta0,
                                                    trajectory=trajectory),
                                 "H1 and H2 hold, D(v) stays under the envelope and decays"),
        "ha": lambda: _ha(state0, params, kernel, trajectory),
        "chi_limit": lambda: _check_chi_limit(scenario, trajectory, out),
        "chi_deviation": lambda: _check_chi_deviation(scenario, trajectory),
    }
    return [_guarded(name, runners[name]) for name in scenario.checks]


def _ha(state0, params, kernel, trajectory) -> CheckOutcome:
    if not isinstance(kernel, MultiplicativeKernel):
        raise AuditNotApplicable(f"alignment criterion needs multiplicative weights, got {kernel.kind}")
    return _outcome("ha", ha_multiplicative_check(state0, params, kernel.p, trajectory=trajectory),
                    "a sufficient energy condition holds and every velocity aligns with the weighted mean")


def _guarded(name: str, thunk: Callable[[], CheckOutcome]) -> CheckOutcome:
    try:
        outcome = thunk()
    except (AuditNotApplicable, HypothesisViolation) as exc:
        return _not_applicable(name, exc)
    logger.info("check %s: %s", name, "pass" if outcome.passed else "FAIL")
    return outcome


def _run_is(scenario: Scenario, out: Path) -> RunReport:
    params = build_params(scenario)
    kernel = build_kernel(scenario)
    state0 = build_initial_state(scenario, params, kernel)
    config = build_integrator(scenario)
    observer = DiagnosticsObserver(kernel, params)
    trajectory = simulate(params, kernel, state0, config, observers=[observer])
    frame = observer.frame()
    write_csv(frame, out / "diagnostics.csv")
    checks = _is_checks(scenario, trajectory, frame, out)
    summary = {"samples": len(trajectory), "Dv0": float(frame["Dv"].iloc[0]), "Dv_final": float(frame["Dv"].iloc[-1]),
               "A_min": float(frame["A"].min())}
    return RunReport(scenario.name, scenario.model, scenario.digest(), "diagnostics.csv", checks, summary)


# ---------------------------------------------------------------- reductions

def _run_kuramoto(scenario: Scenario, out: Path) -> RunReport:
    params, state0 = build_kuramoto(scenario)
    config = build_integrator(scenario)
    trajectory = kuramoto_simulate(params, state0, config)
    frame = trajectory.frame()
    write_csv(frame, out / "kuramoto.csv")

    def decay() -> CheckOutcome:
        times = frame["t"].to_numpy()
        spread = (frame["D_theta"] + frame["D_omega"]).to_numpy()
        late = (times >= times[-1] / 2.0) & (spread > 0.0)
        if late.sum() < 2:
            return CheckOutcome("kuramoto_decay", bool(spread[-1] == 0.0), "phases and frequencies collapse",
                                {"final": float(spread[-1])})
        rate = fit_decay_rate(times[late], spread[late])
        return CheckOutcome("kuramoto_decay", rate > 0, "D_theta + D_omega decays exponentially on the late window",
                            {"fitted_rate": rate, "final": float(spread[-1])})

    def reduction() -> CheckOutcome:
        model_params = planar_params(params)
        embedded = simulate(model_params, planar_kernel(params), embed_planar(state0, model_params), config)
        phases = recover_phases(embedded.states, state0.theta)
        error = float(np.max(np.abs(phases - trajectory.theta)))
        off_plane = float(max(np.max(np.abs(embedded.v[..., 2])), np.max(np.abs(embedded.s[..., :2]))))
        return CheckOutcome("kuramoto_reduction", error <= PHASE_TOL and off_plane <= 1e-10,
                            "planar embedding tracks the oscillator phases",
                            {"phase_error": error, "off_plane": off_plane, "tolerance": PHASE_TOL})

    runners = {
        "chy": lambda: _outcome("chy", chy_condition(params, state0), "C1(0) in (0, pi) and mk admissible"),
        "kuramoto_decay": decay,
        "kuramoto_reduction": reduction,
    }
    checks = [_guarded(name, runners[name]) for name in scenario.checks]
    summary = {"samples": len(trajectory.states), "D_theta_final": float(frame["D_theta"].iloc[-1])}
    return RunReport(scenario.name, scenario.model, scenario.digest(), "kuramoto.csv", checks, summary)


def _run_cs(scenario: Scenario, out: Path) -> RunReport:
    kbar, kernel, state0 = build_cs(scenario)
    config = build_integrator(scenario)
    trajectory = cs_simulate(kbar, kernel, state0, config)
    dx = np.array([extremal_pair(s.x)[0] for s in trajectory.states])
    dv = np.array([extremal_pair(s.v)[0] for s in trajectory.states])
    frame = pd.DataFrame({"t": trajectory.times, "Dx": dx, "Dv": dv})
    flock = cs_flocking_check(state0, kbar, kernel) if isinstance(kernel, MetricKernel) else None
    if flock is not None and flock.values["A0"] > 0:
        a0 = flock.values["A0"]
        frame["H_plus"] = [h_functional(s, kbar, a0, kernel, 1) for s in trajectory.states]
        frame["H_minus"] = [h_functional(s, kbar, a0, kernel, -1) for s in trajectory.states]
    write_csv(frame, out / "cs.csv")

    def flocking() -> CheckOutcome:
        if flock is None:
            raise HypothesisViolation("flocking check needs a metric kernel")
        details = jsonable(flock.to_dict())
        if not flock.passed:
            return CheckOutcome("cs_flock", False, "D(v0) below the flocking threshold", details)
        envelope = flock.envelope(trajectory.times)
        details.update({"Dx_max": float(dx.max()), "envelope_margin": float(np.min(envelope - dv))})
        passed = dx.max() <= flock.d_inf + 1e-8 and bool(np.all(dv <= envelope + 1e-8))
        return CheckOutcome("cs_flock", passed, "sup D(x) <= D_inf and D(v) under the exponential envelope",
                            details)

    def monotone_h() -> CheckOutcome:
        if "H_plus" not in frame:
            raise HypothesisViolation("H functionals need a metric kernel and A0 > 0")
        rises = [float(np.max(np.diff(frame[col].to_numpy()), initial=0.0)) for col in ("H_plus", "H_minus")]
        return CheckOutcome("h_functional", max(rises) <= H_FUNCTIONAL_TOL, "H+ and H- never increase between samples",
                            {"max_rise_plus": rises[0], "max_rise_minus": rises[1], "tolerance": H_FUNCTIONAL_TOL})

    runners = {
        "cs_flock": flocking,
        "sddi": lambda: _outcome("sddi", sddi_audit(trajectory, kernel),
                                 "diameter inequalities hold with nonnegative margin"),
        "h_functional": monotone_h,
    }
    checks = [_guarded(name, runners[name]) for name in scenario.checks]
    summary = {"samples": len(trajectory.states), "Dx_max": float(dx.max()), "Dv_final": float(dv[-1])}
    return RunReport(scenario.name, scenario.model, scenario.digest(), "cs.csv", checks, summary)


def _run_gronwall(scenario: Scenario, out: Path) -> RunReport:
    p = scenario.params
    table = gronwall_suite(int(p["n_problems"]), int(p["seed"]), float(p["t_end"]))
    write_csv(table, out / "gronwall_suite.csv")
    admissible = table[table["nonnegative"]]
    checks = []
    if "gronwall_suite" in scenario.checks:
        dominated = bool(admissible["dominated"].all()) and bool(admissible["uniform_dominates"].all())
        checks.append(CheckOutcome(
            "gronwall_suite", dominated, "oracle solution <= pointwise and uniform bounds + 1e-8",
            {"problems": len(table), "admissible": len(admissible), "min_margin": float(admissible["margin"].min())}))
    summary = {"problems": len(table), "admissible": len(admissible)}
    return RunReport(scenario.name, scenario.model, scenario.digest(), "gronwall_suite.csv", checks, summary)


RUNNERS = {"is": _run_is, "kuramoto": _run_kuramoto, "cs": _run_cs, "gronwall": _run_gronwall}


def run(scenario: Scenario, out_dir: Optional[Union[str, Path]] = None) -> RunReport:
    """Run one scenario into ``out_dir`` and write ``report.json`` there."""
    out = Path(out_dir) if out_dir is not None else Path(get_settings().output_dir) / scenario.name
    out.mkdir(parents=True, exist_ok=True)
    logger.info("running scenario %s (%s) into %s", scenario.name, scenario.model, out)
    report = RUNNERS[scenario.model](scenario, out)
    write_json(report.to_dict(), out / REPORT_FILE)
    logger.info("scenario %s finished: %s", scenario.name, "pass" if report.passed else "FAIL")
    return report


@dataclass
class SweepReport:
    axis: str
    values: List[float]
    reports: List[RunReport]
    table: pd.DataFrame

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _flatten(report: RunReport) -> Dict[str, Any]:
    row: Dict[str, Any] = {"passed": report.passed}
    for outcome in report.checks:
        row[f"{outcome.name}.passed"] = outcome.passed
        for key, value in outcome.details.items():
            if isinstance(value, (int, float, str)) and not isinstance(value, bool):
                row[f"{outcome.name}.{key}"] = value
        for section in ("constants", "inputs", "conclusions"):
            for key, value in (outcome.details.get(section) or {}).items():
                if isinstance(value, dict):
                    value = value.get("value")
                if isinstance(value, (int, float, str, bool)):
                    row[f"{outcome.name}.{key}"] = value
    return row


def sweep(scenario: Scenario, axis: str, values: Sequence[float], out_dir: Optional[Union[str, Path]] = None,
          n_jobs: Optional[int] = None) -> SweepReport:
    """One run per value of ``axis`` and an aggregate ``sweep.csv``."""
    out = Path(out_dir) if out_dir is not None else Path(get_settings().output_dir) / f"{scenario.name}-sweep"
    out.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v in values]
    scenario.resolve_axis(axis)
    # every variant is validated before any work starts
    variants = [scenario.with_field(axis, v) for v in values]
    n_jobs = n_jobs if n_jobs is not None else get_settings().n_jobs
    logger.info("sweeping %s over %d values with %d jobs", axis, len(values), n_jobs)
    reports = Parallel(n_jobs=n_jobs)(
        delayed(run)(variant, out / f"{axis}={value!r}") for variant, value in zip(variants, values))
    rows = [{axis: value, **_flatten(report)} for value, report in zip(values, reports)]
    table = pd.DataFrame(rows, columns=None if rows else [axis, "passed"])
    write_csv(table, out / "sweep.csv")
    return SweepReport(axis, values, list(reports), table)

