"""Special cases of the inertial spin model.

* Planar motion: with velocities in a plane and spins along its normal the
  model is a second-order (inertial) Kuramoto system for the heading angles.
* Vanishing inertia: as chi -> 0 the velocities follow the unit-speed
  Cucker-Smale flow with coupling kbar = k / gamma.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

from .diagnostics import extremal_pair, fd_budget
from .errors import AuditNotApplicable, DivergenceError, HypothesisViolation, KernelContractError
from .integrator import IntegratorConfig, integrate_array, simulate
from .kernels import CommunicationKernel, ConstantMatrixKernel, MetricKernel
from .model import ModelParams, SwarmState, project_orthogonal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KuramotoParams:
    m: np.ndarray
    gamma: np.ndarray
    k: float
    a: np.ndarray
    omega_nat: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        gamma = np.array(self.gamma, dtype=float)
        a = np.array(self.a, dtype=float)
        omega_nat = np.array(self.omega_nat, dtype=float)
        n = len(m)
        if gamma.shape != (n,) or omega_nat.shape != (n,) or a.shape != (n, n):
            raise ValueError("Kuramoto parameters have inconsistent shapes")
        if np.any(m <= 0) or np.any(gamma <= 0):
            raise ValueError("inertias and dampings must be positive")
        if np.any(a < 0) or not np.array_equal(a, a.T):
            raise KernelContractError("coupling matrix must be symmetric and nonnegative")
        for name, value in (("m", m), ("gamma", gamma), ("a", a), ("omega_nat", omega_nat)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def homogeneous(cls, n: int, m: float, gamma: float, k: float, omega: float = 0.0) -> "KuramotoParams":
        return cls(m=np.full(n, m), gamma=np.full(n, gamma), k=k, a=np.full((n, n), 1.0 / n),
                   omega_nat=np.full(n, omega))

    @property
    def n(self) -> int:
        return len(self.m)

    def to_dict(self) -> Dict[str, Any]:
        return {"m": self.m.tolist(), "gamma": self.gamma.tolist(), "k": self.k,
                "a": self.a.tolist(), "omega_nat": self.omega_nat.tolist()}


@dataclass(frozen=True)
class KuramotoState:
    t: float
    theta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        omega = np.array(self.omega, dtype=float)
        if theta.shape != omega.shape or theta.ndim != 1:
            raise ValueError("theta and omega must be vectors of equal length")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega))):
            raise ValueError("phases and frequencies must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "omega", omega)


@dataclass
class KuramotoTrajectory:
    states: List[KuramotoState]
    params: KuramotoParams

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def theta(self) -> np.ndarray:
        return np.stack([s.theta for s in self.states])

    def frame(self) -> pd.DataFrame:
        m = self.params.m
        homogeneous = bool(np.all(m == m[0]))
        rows = []
        for state in self.states:
            d_theta, d_omega, c1 = kuramoto_diameters(state, m[0] if homogeneous else None)
            rows.append({"t": state.t, "D_theta": d_theta, "D_omega": d_omega, "C1": c1})
        return pd.DataFrame(rows, columns=["t", "D_theta", "D_omega", "C1"])


def kuramoto_rhs(params: KuramotoParams, state: KuramotoState) -> Tuple[np.ndarray, np.ndarray]:
    theta = state.theta
    coupling = np.sum(params.a * np.sin(theta[None, :] - theta[:, None]), axis=1)
    domega = (params.omega_nat + params.k * coupling - params.gamma * state.omega) / params.m
    return state.omega.copy(), domega


def kuramoto_simulate(params: KuramotoParams, state0: KuramotoState, config: IntegratorConfig) -> KuramotoTrajectory:
    def flow(t, y):
        return np.stack(kuramoto_rhs(params, KuramotoState(t, y[0], y[1])))

    samples = integrate_array(flow, np.stack([state0.theta, state0.omega]), state0.t, config)
    return KuramotoTrajectory([KuramotoState(t, y[0], y[1]) for t, y in samples], params)


def kuramoto_diameters(state: KuramotoState, m: Optional[float] = None) -> Tuple[float, float, float]:
    """(D_theta, D_omega, C1) with C1 = max(D_theta, D_theta + m dD_theta/dt).

    dD_theta/dt is taken along the extremal pair (argmax, argmin of theta).
    """
    theta, omega = state.theta, state.omega
    hi, lo = int(np.argmax(theta)), int(np.argmin(theta))
    d_theta = float(theta[hi] - theta[lo])
    d_omega = float(omega.max() - omega.min())
    if m is None:
        return d_theta, d_omega, math.nan
    return d_theta, d_omega, max(d_theta, d_theta + m * float(omega[hi] - omega[lo]))


@dataclass
class ConditionReport:
    name: str
    values: Dict[str, Any] = field(default_factory=dict)
    conditions: Dict[str, bool] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.conditions) and all(self.conditions.values())

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "values": self.values, "conditions": self.conditions,
                "passed": self.passed, "notes": self.notes}


def chy_condition(params: KuramotoParams, state0: KuramotoState) -> ConditionReport:
    """Synchronization condition for identical inertial oscillators with all-to-all coupling."""
    n = params.n
    if not (np.all(params.m == params.m[0]) and np.all(params.gamma == 1.0)
            and np.allclose(params.a, 1.0 / n, rtol=0, atol=1e-15)
            and np.all(params.omega_nat == params.omega_nat[0])):
        raise HypothesisViolation("condition needs identical m, unit damping, a_ij = 1/N and identical natural frequencies")
    m = float(params.m[0])
    _, _, c1 = kuramoto_diameters(state0, m)
    mk = m * params.k
    report = ConditionReport("chy", {"C1": c1, "mk": mk})
    report.conditions["C1_in_range"] = 0.0 < c1 < math.pi
    first = 0.0 < mk < 0.25
    second = c1 > 0 and mk > c1 / (4.0 * math.sin(c1)) if 0 < c1 < math.pi else False
    report.values["mk_second_threshold"] = c1 / (4.0 * math.sin(c1)) if 0 < c1 < math.pi else None
    report.conditions["mk_admissible"] = first or second
    if c1 <= 0.0:
        report.notes.append("boundary case: C1(0) = 0")
    return report


def planar_kernel(params: KuramotoParams) -> ConstantMatrixKernel:
    return ConstantMatrixKernel(params.n * params.a)


def planar_params(params: KuramotoParams) -> ModelParams:
    """Model parameters whose planar dynamics coincide with the oscillators."""
    if not (np.all(params.m == params.m[0]) and np.all(params.gamma == params.gamma[0])
            and np.all(params.omega_nat == 0.0)):
        raise HypothesisViolation("planar embedding needs identical m, identical gamma and zero natural frequencies")
    return ModelParams(chi=float(params.m[0]), gamma=float(params.gamma[0]), k=float(params.k))


def embed_planar(kstate: KuramotoState, params: ModelParams, positions=None) -> SwarmState:
    theta = kstate.theta
    n = len(theta)
    v = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n)])
    s = np.column_stack([np.zeros(n), np.zeros(n), params.chi * kstate.omega])
    if positions is None:
        x = np.zeros((n, 3))
    else:
        positions = np.asarray(positions, dtype=float)
        x = positions if positions.shape[1] == 3 else np.column_stack([positions, np.zeros(n)])
    return SwarmState(t=kstate.t, x=x, v=v, s=s)


def recover_phases(states: Sequence[SwarmState], theta0: Sequence[float]) -> np.ndarray:
    """Continuous heading angles along a planar trajectory, anchored at theta0."""
    raw = np.stack([np.arctan2(s.v[:, 1], s.v[:, 0]) for s in states])
    unwrapped = np.unwrap(raw, axis=0)
    shift = np.round((np.asarray(theta0, dtype=float) - unwrapped[0]) / (2.0 * math.pi)) * 2.0 * math.pi
    return unwrapped + shift


def kuramoto_residual(theta: np.ndarray, times: np.ndarray, params: KuramotoParams) -> np.ndarray:
    """Residual of m th'' + gamma th' - Omega - k sum a sin(...) from centered differences."""
    h = float(times[1] - times[0])
    acc = (theta[2:] - 2.0 * theta[1:-1] + theta[:-2]) / h ** 2
    vel = (theta[2:] - theta[:-2]) / (2.0 * h)
    mid = theta[1:-1]
    coupling = np.sum(params.a[None, :, :] * np.sin(mid[:, None, :] - mid[:, :, None]), axis=2)
    return params.m * acc + params.gamma * vel - params.omega_nat - params.k * coupling


@dataclass(frozen=True)
class CSState:
    t: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        v = np.array(self.v, dtype=float)
        if x.shape != v.shape or x.ndim != 2 or x.shape[1] != 3:
            raise ValueError("x and v must both have shape (N, 3)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_swarm(cls, state: SwarmState) -> "CSState":
        return cls(state.t, state.x, state.v)


@dataclass
class CSTrajectory:
    states: List[CSState]
    kbar: float
    kernel: CommunicationKernel
    config: IntegratorConfig

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def v(self) -> np.ndarray:
        return np.stack([s.v for s in self.states])


def cs_rhs(kbar: float, kernel: CommunicationKernel, state: CSState) -> Tuple[np.ndarray, np.ndarray]:
    w = kernel.matrix(state.t, state.x)
    dv = (kbar / len(state.v)) * project_orthogonal(state.v, w @ state.v)
    return state.v.copy(), dv


def _unit_velocities(y: np.ndarray) -> np.ndarray:
    return np.stack([y[0], y[1] / np.linalg.norm(y[1], axis=1, keepdims=True)])


def cs_simulate(kbar: float, kernel: CommunicationKernel, state0: CSState, config: IntegratorConfig) -> CSTrajectory:
    def flow(t, y):
        return np.stack(cs_rhs(kbar, kernel, CSState(t, y[0], y[1])))

    samples = integrate_array(flow, np.stack([state0.x, state0.v]), state0.t, config,
                              project=_unit_velocities if config.projected else None)
    return CSTrajectory([CSState(t, y[0], y[1]) for t, y in samples], kbar, kernel, config)


def _cs_geometric_factor(state: CSState) -> float:
    gram = state.v @ state.v.T
    rows, cols = np.triu_indices(len(state.v), 1)
    return float(gram[rows, cols].min())


def _infinite_root(kernel: MetricKernel, dx0: float, target: float) -> float:
    """D_inf with integral of psi over [dx0, D_inf] equal to target."""
    def excess(r):
        return kernel.primitive(r) - kernel.primitive(dx0) - target

    hi = max(2.0 * dx0, 1.0)
    while excess(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise HypothesisViolation("flocking radius bracket exceeded 1e12")
    return float(optimize.bisect(excess, dx0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps))


@dataclass
class CSFlockingReport(ConditionReport):
    d_inf: Optional[float] = None
    rate: Optional[float] = None
    dv0: float = 0.0

    def envelope(self, t):
        if self.rate is None:
            raise HypothesisViolation("flocking condition fails; no envelope")
        return self.dv0 * np.exp(-self.rate * np.asarray(t, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out.update({"D_inf": self.d_inf, "rate": self.rate})
        return out


def cs_flocking_constants(kbar: float, a0: float, dx0: float, dv0: float, kernel: MetricKernel) -> CSFlockingReport:
    """Flocking condition and decay envelope from the scalar initial data."""
    head = kernel.primitive(dx0)
    tail = kernel.tail(dx0)
    threshold = kbar * a0 * min(head, tail)
    report = CSFlockingReport("cs_flock", dv0=dv0)
    report.values.update({"A0": a0, "Dx0": dx0, "Dv0": dv0, "head_integral": head,
                          "tail_integral": tail if math.isfinite(tail) else None, "threshold": threshold})
    report.conditions["A0_positive"] = a0 > 0
    report.conditions["Dv0_in_range"] = 0.0 < dv0 < threshold
    if dv0 == 0.0:
        report.notes.append("boundary case: D(v0) = 0")
    if report.passed:
        report.d_inf = _infinite_root(kernel, dx0, dv0 / (kbar * a0))
        report.rate = kbar * a0 * float(kernel(report.d_inf))
    return report


def cs_flocking_check(state0: CSState, kbar: float, kernel: MetricKernel) -> CSFlockingReport:
    if not isinstance(kernel, MetricKernel):
        raise HypothesisViolation("flocking check needs a metric kernel")
    return cs_flocking_constants(kbar, _cs_geometric_factor(state0), extremal_pair(state0.x)[0],
                                 extremal_pair(state0.v)[0], kernel)


def h_functional(state: CSState, kbar: float, a0: float, psi: MetricKernel, sign: int) -> float:
    """D(v) + sign * kbar A0 * int_0^{D(x)} psi."""
    if a0 <= 0:
        raise HypothesisViolation("A0 must be positive")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return extremal_pair(state.v)[0] + sign * kbar * a0 * psi.primitive(extremal_pair(state.x)[0])


@dataclass
class SDDIAudit:
    margin_position: float
    margin_velocity: float
    min_geometric_factor: float
    a0: float
    budget: float
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return (self.margin_position >= -self.budget and self.margin_velocity >= -self.budget
                and self.min_geometric_factor >= self.a0 - 1e-8)

    def to_dict(self) -> Dict[str, Any]:
        return {"name": "sddi", "passed": self.passed, "margin_position": self.margin_position,
                "margin_velocity": self.margin_velocity, "min_geometric_factor": self.min_geometric_factor,
                "A0": self.a0, "budget": self.budget, "skipped_samples": self.skipped}


def sddi_audit(trajectory: CSTrajectory, kernel: MetricKernel) -> SDDIAudit:
    """Differential inequalities for D(x), D(v) from centered differences.

    Samples whose five-point stencil sees a change of either extremal pair are
    skipped, since the diameters are not differentiable there. The budget is the
    stencil-doubling allowance shared with the other audits.
    """
    states = trajectory.states
    m = len(states)
    if m < 5:
        raise AuditNotApplicable("audit needs at least five samples")
    h = trajectory.config.sample_spacing
    kbar = trajectory.kbar
    x_pairs = [extremal_pair(s.x) for s in states]
    v_pairs = [extremal_pair(s.v) for s in states]
    dx = np.array([p[0] for p in x_pairs])
    dv = np.array([p[0] for p in v_pairs])
    a_series = np.array([_cs_geometric_factor(s) for s in states])
    a0 = float(a_series[0])

    steady = [i for i in range(2, m - 2)
              if len({p[1:] for p in x_pairs[i - 2:i + 3]}) == 1 and len({p[1:] for p in v_pairs[i - 2:i + 3]}) == 1]
    if not steady:
        raise AuditNotApplicable("extremal pairs change on every audited stencil")
    idx = np.array(steady)
    ddx = (dx[idx + 1] - dx[idx - 1]) / (2.0 * h)
    ddv = (dv[idx + 1] - dv[idx - 1]) / (2.0 * h)
    ddx_coarse = (dx[idx + 2] - dx[idx - 2]) / (4.0 * h)
    ddv_coarse = (dv[idx + 2] - dv[idx - 2]) / (4.0 * h)
    budget = max(fd_budget(ddx, ddx_coarse), fd_budget(ddv, ddv_coarse))

    margin_x = dv[idx] - np.abs(ddx)
    margin_v = -kbar * kernel(dx[idx]) * dv[idx] * a0 - ddv
    skipped = m - 4 - len(steady)
    if skipped:
        logger.warning("sddi audit skipped %d samples where an extremal pair changes", skipped)
    return SDDIAudit(float(margin_x.min()), float(margin_v.min()), float(a_series.min()), a0, budget, skipped)


def quasi_steady_spins(params: ModelParams, kernel: CommunicationKernel, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Spins with zero spin rate: chi k / (gamma N) v_i x sum_j psi_ij v_j."""
    w = kernel.matrix(0.0, x)
    s = (params.chi * params.k / (params.gamma * len(v))) * np.cross(v, w @ v)
    return s - np.sum(s * v, axis=1, keepdims=True) * v


def chi_limit_study(k: float, gamma: float, kernel: CommunicationKernel, x0: np.ndarray, v0: np.ndarray,
                    chis: Sequence[float], t_end: float, dt: float,
                    sample_every: int = 1) -> pd.DataFrame:
    """Velocity deviation between the inertial model and its chi -> 0 limit."""
    config = IntegratorConfig(dt=dt, t_end=t_end, sample_every=sample_every)
    limit = cs_simulate(k / gamma, kernel, CSState(0.0, x0, v0), config)
    rows = []
    for chi in chis:
        params = ModelParams(chi=float(chi), gamma=gamma, k=k)
        state0 = SwarmState(t=0.0, x=x0, v=v0, s=quasi_steady_spins(params, kernel, x0, v0))
        try:
            trajectory = simulate(params, kernel, state0, config)
        except DivergenceError as exc:
            logger.warning("chi=%g diverged at t=%g", chi, exc.time)
            rows.append({"chi": float(chi), "deviation": math.nan, "diverged": True})
            continue
        deviation = float(np.max(np.linalg.norm(trajectory.v - limit.v, axis=2)))
        rows.append({"chi": float(chi), "deviation": deviation, "diverged": False})
    return pd.DataFrame(rows, columns=["chi", "deviation", "diverged"])


def strictly_decreasing(values: Sequence[float]) -> bool:
    values = list(values)
    return all(b < a for a, b in zip(values, values[1:]))
