"""Sufficient conditions for flocking and checks of their conclusions.

Three results are covered: the constant-kernel invariance theorem (C0 test),
the bounded-kernel theorem with an explicit decay envelope (H1/H2 test), and
the multiplicative-weight alignment criterion. Each check returns a
TheoremReport; every constant is stored together with the formula it came from.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .diagnostics import dv_dot, energy_functionals, extremal_pair, geometric_factor
from .errors import AuditNotApplicable, HypothesisViolation
from .gronwall import Gron1Problem, Gron2Problem, gron2_bound, gron2_rate, mu_star
from .integrator import IntegratorConfig, Trajectory, simulate
from .kernels import CommunicationKernel, MultiplicativeKernel
from .model import ModelParams, SwarmState

logger = logging.getLogger(__name__)

ANGLE_TOL = 1e-2
DECAY_FACTOR = 100.0


@dataclass
class Constant:
    value: Optional[float]
    formula: str

    def to_dict(self) -> Dict[str, Any]:
        return {"value": self.value, "formula": self.formula}


@dataclass
class TheoremReport:
    theorem: str
    inputs: Dict[str, Any]
    constants: Dict[str, Constant] = field(default_factory=dict)
    conditions: Dict[str, bool] = field(default_factory=dict)
    conclusions: Dict[str, Any] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def conditions_hold(self) -> bool:
        return all(self.conditions.values())

    @property
    def inconclusive(self) -> bool:
        return self.conclusions.get("outcome") == "inconclusive"

    @property
    def passed(self) -> bool:
        if self.inconclusive:
            return False
        checks = [v for v in self.conclusions.values() if isinstance(v, bool)]
        return self.conditions_hold and all(checks)

    def value(self, name: str) -> Optional[float]:
        return self.constants[name].value

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "inputs": self.inputs,
            "constants": {k: c.to_dict() for k, c in self.constants.items()},
            "conditions": self.conditions,
            "conclusions": self.conclusions,
            "conditions_hold": self.conditions_hold,
            "passed": self.passed,
            "notes": self.notes,
        }


def _check_delta0(delta0: float) -> None:
    if not (0.0 < delta0 < 1.0):
        raise HypothesisViolation(f"delta0 must lie in (0, 1), got {delta0}")


@dataclass
class InvarianceResult:
    held: bool
    first_violation: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {"held": self.held, "first_violation": self.first_violation}


def verify_invariance(trajectory: Union[Trajectory, Sequence[SwarmState]], delta0: float) -> InvarianceResult:
    states = trajectory.states if isinstance(trajectory, Trajectory) else trajectory
    for state in states:
        if geometric_factor(state) <= delta0:
            return InvarianceResult(False, state.t)
    return InvarianceResult(True, None)


def fit_decay_rate(times: Sequence[float], values: Sequence[float],
                   window: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares exponential rate r in values ~ C exp(-r t) over the window."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is not None:
        mask = (times >= window[0]) & (times <= window[1])
        times, values = times[mask], values[mask]
    if len(times) < 2:
        raise ValueError("need at least two samples in the fitting window")
    if np.any(values <= 0):
        raise ValueError("exponential fit needs positive values on the window")
    fit = stats.linregress(times, np.log(values))
    return float(-fit.slope)


def _tail_monotone(times: np.ndarray, dv: np.ndarray, windows: int = 5) -> bool:
    """Window maxima of D(v) never increase."""
    chunks = np.array_split(dv, windows)
    peaks = [float(c.max()) for c in chunks if len(c)]
    return all(b <= a + 1e-12 for a, b in zip(peaks, peaks[1:]))


def _constant_bounds(kernel: CommunicationKernel) -> Tuple[float, float]:
    return float(kernel.psi_m), float(kernel.psi_M)


@dataclass
class C0Result:
    value: float
    case: str
    corollary_value: Optional[float] = None
    envelope_value: Optional[float] = None
    nu1: Optional[float] = None
    threshold: float = 0.0


def thm1_c0(state0: SwarmState, params: ModelParams, kernel: CommunicationKernel, delta0: float,
            psi_m: Optional[float] = None) -> C0Result:
    """Smallness constant of the constant-kernel invariance theorem.

    Case "i" when gamma > sqrt(8 k chi psi_m delta0), case "ii" otherwise.
    """
    _check_delta0(delta0)
    chi, gamma, k = params.chi, params.gamma, params.k
    psi_m = kernel.lower_bound(state0.t, state0.x) if psi_m is None else psi_m
    n = state0.n
    d_v = extremal_pair(state0.v)[0]
    d_dot = dv_dot(state0, params)
    _, _, lyap0 = energy_functionals(state0, kernel, params)
    threshold = math.sqrt(8.0 * k * chi * psi_m * delta0)

    if gamma > threshold:
        nu1 = 0.5 * (gamma / chi + math.sqrt(gamma ** 2 / chi ** 2 - 8.0 * k * psi_m * delta0 / chi))
        if psi_m > 0:
            spin_term = 2.0 * k * n / (gamma * math.sqrt(2.0 * k * chi * psi_m * delta0)) * lyap0
        else:
            spin_term = math.inf if lyap0 > 0 else 0.0
        value = (0.5 * d_v ** 2
                 + chi / (gamma * math.sqrt(1.0 - 8.0 * k * chi * psi_m * delta0 / gamma ** 2))
                 * (d_v * abs(d_dot) + 0.5 * nu1 * d_v ** 2)
                 + spin_term)
        return C0Result(value, "i", nu1=nu1, threshold=threshold)

    spin_term = 4.0 * k * n / gamma ** 2 * lyap0
    if d_dot < 0:
        value = 0.5 * d_v ** 2 + spin_term
        return C0Result(value, "ii", corollary_value=value, envelope_value=value, threshold=threshold)
    # y0 = D^2, y1 = 2 D Ddot, beta = gamma / (2 chi)
    y0, y1, beta = d_v ** 2, 2.0 * d_v * d_dot, gamma / (2.0 * chi)
    slope = beta * y0 + y1
    prefactor = math.exp(-y0 / slope) if y0 > 0 else 0.0
    corollary = 0.5 * prefactor * (1.0 + 2.0 * chi / gamma) * y0 + spin_term
    if slope > 0:
        t_peak = y1 / (beta * slope)
        envelope = 0.5 * math.exp(-beta * t_peak) * (y0 + y1 / beta) + spin_term
    else:
        envelope = spin_term
    value = 0.5 * d_v ** 2 * (1.0 + 2.0 * chi / gamma) + spin_term
    return C0Result(value, "ii", corollary_value=corollary, envelope_value=envelope, threshold=threshold)


def thm1_gron1_problem(state0: SwarmState, params: ModelParams, kernel: CommunicationKernel,
                       delta0: float, psi_m: Optional[float] = None) -> Gron1Problem:
    """The Gron1 instance satisfied by y = D(v)^2 while A(v) > delta0."""
    chi, gamma, k = params.chi, params.gamma, params.k
    psi_m = kernel.lower_bound(state0.t, state0.x) if psi_m is None else psi_m
    d_v = extremal_pair(state0.v)[0]
    _, _, lyap0 = energy_functionals(state0, kernel, params)
    return Gron1Problem(a=1.0, b=gamma / chi, c=2.0 * k * psi_m * delta0 / chi,
                        y0=d_v ** 2, y1=2.0 * d_v * dv_dot(state0, params),
                        g_integral=8.0 * state0.n * k / (chi * gamma) * lyap0)


def thm1_check(state0: SwarmState, params: ModelParams, kernel: CommunicationKernel, delta0: float,
               simulate_conclusion: bool = False, config: Optional[IntegratorConfig] = None,
               trajectory: Optional[Trajectory] = None) -> TheoremReport:
    if not kernel.is_constant:
        raise AuditNotApplicable(f"invariance theorem needs a constant kernel, got {kernel.kind}")
    psi_m, psi_M = _constant_bounds(kernel)
    c0 = thm1_c0(state0, params, kernel, delta0, psi_m)
    a0 = geometric_factor(state0)
    report = TheoremReport("thm1", {"params": params.to_dict(), "psi_m": psi_m, "psi_M": psi_M,
                                     "delta0": delta0, "n": state0.n})
    report.constants["C0"] = Constant(c0.value, "case i: 1/2 D^2 + chi/(gamma sqrt(1-8k chi psi_m delta0/gamma^2))"
                                                "(D|Ddot| + 1/2 nu1 D^2) + 2kN/(gamma sqrt(2k chi psi_m delta0)) L0; "
                                                "case ii: 1/2 D^2 (1+2chi/gamma if Ddot>=0) + 4kN/gamma^2 L0")
    report.constants["case_threshold"] = Constant(c0.threshold, "sqrt(8 k chi psi_m delta0)")
    report.constants["A0"] = Constant(a0, "min_{i!=j} v_i . v_j")
    if c0.nu1 is not None:
        report.constants["nu1"] = Constant(c0.nu1, "(gamma/chi + sqrt(gamma^2/chi^2 - 8k psi_m delta0/chi))/2")
        report.notes.append("nu1 is taken from the Gron1 mapping a=1, b=gamma/chi, c=2k psi_m delta0/chi")
    if c0.corollary_value is not None:
        report.constants["C0_corollary"] = Constant(c0.corollary_value, "with exp(-y0/(beta y0 + y1)) prefactor")
        report.constants["C0_envelope"] = Constant(c0.envelope_value, "exact supremum of the envelope")
    report.inputs["case"] = c0.case
    report.conditions["A0_above_delta0"] = a0 > delta0
    report.conditions["C0_below_1_minus_delta0"] = c0.value < 1.0 - delta0

    if not report.conditions_hold:
        logger.info("thm1 conditions fail (A0=%.4g, C0=%.4g); skipping simulation", a0, c0.value)
        return report
    if trajectory is None and simulate_conclusion:
        trajectory = simulate(params, kernel, state0, config)
    if trajectory is not None:
        _attach_decay_conclusions(report, trajectory, delta0)
    return report


def _attach_decay_conclusions(report: TheoremReport, trajectory: Trajectory, delta0: float) -> None:
    invariance = verify_invariance(trajectory, delta0)
    times = trajectory.times
    dv = np.array([extremal_pair(s.v)[0] for s in trajectory.states])
    report.conclusions["invariance_held"] = invariance.held
    report.conclusions["first_violation"] = invariance.first_violation
    report.conclusions["Dv_final"] = float(dv[-1])
    report.conclusions["decayed"] = bool(dv[-1] < dv[0] / DECAY_FACTOR) if dv[0] > 0 else True
    report.conclusions["tail_monotone"] = _tail_monotone(times, dv)


def dset_coefficients(params: ModelParams, psi_m: float, psi_M: float, delta0: float) -> Tuple[float, ...]:
    """Cubic defining the admissible rates of the bounded-kernel theorem.

    Returns (1, c2, c1, rhs) for mu^3 + c2 mu^2 + c1 mu <= rhs, written directly
    from the model constants.
    """
    chi, gamma, k = params.chi, params.gamma, params.k
    return (1.0, -2.0 * gamma / chi, (2.0 * k * chi * psi_m * delta0 + gamma ** 2) / chi ** 2,
            (2.0 * k / chi) * ((gamma / chi) * psi_m * delta0 - 6.0 * k * psi_M / gamma))


def thm2_gron2_problem(state0: SwarmState, params: ModelParams, psi_m: float, psi_M: float,
                       delta0: float) -> Gron2Problem:
    chi, gamma, k = params.chi, params.gamma, params.k
    d_v = extremal_pair(state0.v)[0]
    d_s = extremal_pair(state0.s)[0]
    smax2 = float(np.max(np.sum(state0.s ** 2, axis=1)))
    return Gron2Problem(a=gamma / chi, b=2.0 * k * psi_m * delta0 / chi, c=12.0 * k ** 2 * psi_M / (gamma * chi),
                        d=(4.0 / chi ** 2) * (d_s ** 2 + 2.0 * smax2), nu=gamma / chi,
                        y0=d_v ** 2, y1=2.0 * d_v * abs(dv_dot(state0, params)))


def thm2_check(state0: SwarmState, params: ModelParams, psi_m: float, psi_M: float, delta0: float,
               trajectory: Optional[Trajectory] = None) -> TheoremReport:
    _check_delta0(delta0)
    chi, gamma, k = params.chi, params.gamma, params.k
    if not (0 < psi_m <= psi_M):
        raise HypothesisViolation(f"need 0 < psi_m <= psi_M, got {psi_m}, {psi_M}")
    d_v = extremal_pair(state0.v)[0]
    d_s = extremal_pair(state0.s)[0]
    smax2 = float(np.max(np.sum(state0.s ** 2, axis=1)))
    d_dot = dv_dot(state0, params)
    a0 = geometric_factor(state0)
    h1_threshold = math.sqrt(6.0 * k * chi * psi_M / (delta0 * psi_m))
    c0 = 0.5 * d_v ** 2 + chi * d_v * abs(d_dot) / gamma + (2.0 / gamma ** 2) * (d_s ** 2 + 2.0 * smax2)
    problem = thm2_gron2_problem(state0, params, psi_m, psi_M, delta0)
    rates = mu_star(problem)

    report = TheoremReport("thm2", {"params": params.to_dict(), "psi_m": psi_m, "psi_M": psi_M,
                                     "delta0": delta0, "n": state0.n})
    report.constants["C0"] = Constant(c0, "1/2 D^2 + chi D|Ddot|/gamma + 2/gamma^2 (D(s0)^2 + 2 max|s_i0|^2)")
    report.constants["H1_threshold"] = Constant(h1_threshold, "sqrt(6 k chi psi_M / (delta0 psi_m))")
    report.constants["d_star"] = Constant(rates.d_star, "b nu - c with a=nu=gamma/chi, b=2k psi_m delta0/chi, "
                                                        "c=12 k^2 psi_M/(gamma chi)")
    report.constants["mu_star"] = Constant(rates.mu_star, "sup of admissible rates of the cubic set")
    report.constants["A0"] = Constant(a0, "min_{i!=j} v_i . v_j")
    report.constants["Dv0"] = Constant(d_v, "D(v0)")
    report.constants["Dv_dot0"] = Constant(d_dot, "Ddot(v0)")
    report.inputs["gron2"] = problem.to_dict()
    if not rates.empty:
        rate = gron2_rate(problem, rates)
        report.constants["envelope_rate"] = Constant(rate.mu, "rate used in the D(v)^2 envelope")
        report.inputs["branch"] = "second" if rate.branch == "double" else "first"
        if rate.note:
            report.notes.append(rate.note)
    report.conditions["H1"] = gamma > h1_threshold
    report.conditions["H2"] = c0 < 1.0 - delta0
    report.conditions["A0_above_delta0"] = a0 > delta0
    report.notes.append("envelope constants come from the explicit Gron2 estimate for y = D(v)^2")

    if trajectory is not None and report.conditions_hold:
        _attach_decay_conclusions(report, trajectory, delta0)
        times = trajectory.times
        dv = np.array([extremal_pair(s.v)[0] for s in trajectory.states])
        envelope = thm2_envelope(report, state0, times)
        report.conclusions["envelope_margin"] = float(np.min(envelope - dv))
        report.conclusions["envelope_dominates"] = bool(np.all(dv <= envelope + 1e-8))
        late = (times[-1] / 2.0, times[-1])
        if np.all(dv[times >= late[0]] > 0):
            fitted = fit_decay_rate(times, dv, late)
            report.conclusions["fitted_rate"] = fitted
            report.conclusions["rate_at_least_half_mu_star"] = fitted >= rates.mu_star / 2.0 - 0.05
    return report


def thm2_envelope(report: TheoremReport, state0: SwarmState, t) -> Union[float, np.ndarray]:
    """Upper bound on D(v(t)) from a passing bounded-kernel report."""
    if report.theorem != "thm2" or not report.conditions.get("H1") or not report.conditions.get("H2"):
        raise HypothesisViolation("envelope needs a thm2 report with H1 and H2 satisfied")
    problem = Gron2Problem(**report.inputs["gron2"])
    rate = gron2_rate(problem)
    times = np.atleast_1d(np.asarray(t, dtype=float))
    values = np.sqrt(np.maximum([gron2_bound(problem, float(s), rate) for s in times], 0.0))
    return float(values[0]) if np.ndim(t) == 0 else values


def ha_multiplicative_check(state0: SwarmState, params: ModelParams, p: Sequence[float],
                            trajectory: Optional[Trajectory] = None, angle_tol: float = ANGLE_TOL) -> TheoremReport:
    """Alignment criterion for weights psi_ij = p_i p_j."""
    kernel = MultiplicativeKernel(p)
    weights = kernel.p
    n = state0.n
    if len(weights) != n:
        raise HypothesisViolation(f"p has {len(weights)} entries, N={n}")
    energy, spin, _ = energy_functionals(state0, kernel, params)
    lhs = energy + 2.0 / (params.chi * params.k) * spin
    p_c = float(weights.mean())
    threshold_i = 2.0 * p_c ** 2
    threshold_ii = float(np.min(8.0 * weights * (n * p_c - weights) / n ** 2))

    report = TheoremReport("ha", {"params": params.to_dict(), "p": weights.tolist(), "n": n})
    report.constants["lhs"] = Constant(lhs, "E(0) + 2/(chi k) S(0)")
    report.constants["threshold_i"] = Constant(threshold_i, "2 p_c^2")
    report.constants["threshold_ii"] = Constant(threshold_ii, "min_i 8 p_i (N p_c - p_i) / N^2")
    condition_i = lhs < threshold_i
    condition_ii = lhs < threshold_ii
    report.conditions["condition_i_or_ii"] = condition_i or condition_ii
    report.inputs["condition_i"] = condition_i
    report.inputs["condition_ii"] = condition_ii

    if trajectory is not None and report.conditions_hold:
        final = trajectory.final
        mean_dir = (weights[:, None] * final.v).mean(axis=0)
        norm = float(np.linalg.norm(mean_dir))
        if norm <= 1e-14:
            report.conclusions["outcome"] = "inconclusive"
            report.notes.append("weighted mean velocity vanishes; limit direction undefined")
            return report
        unit = mean_dir / norm
        angles = np.arccos(np.clip(final.v @ unit, -1.0, 1.0))
        report.conclusions["max_angle"] = float(angles.max())
        if condition_ii:
            report.conclusions["aligned"] = bool(np.all(angles <= angle_tol))
        else:
            report.conclusions["aligned_up_to_sign"] = bool(
                np.all((angles <= angle_tol) | (angles >= math.pi - angle_tol)))
    return report
