"""Scalar observables of a swarm and audits of the identities they satisfy.

Extremal pairs are tie-broken towards the lexicographically smallest (i, j).
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from .config import FD_FLOOR
from .errors import AuditNotApplicable, UndefinedFactorError
from .integrator import Trajectory
from .kernels import CommunicationKernel
from .model import ModelParams, SwarmState

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "Dx", "Dv", "Ds", "A", "E", "S", "lyap", "sc_norm", "Dv_dot", "speed_drift", "sv_drift")

# multiplier on the Richardson estimate of finite-difference error
FD_SAFETY = 4.0


@dataclass
class DiagnosticsRecord:
    t: float
    Dx: float
    Dv: float
    Ds: float
    A: float
    E: float
    S: float
    lyap: float
    sc_norm: float
    Dv_dot: float
    speed_drift: float
    sv_drift: float

    def to_row(self) -> Dict[str, float]:
        return asdict(self)


def extremal_pair(a: np.ndarray) -> Tuple[float, int, int]:
    """Largest pairwise distance of the rows of ``a`` and the pair attaining it."""
    a = np.asarray(a, dtype=float)
    n = len(a)
    if n < 2:
        return 0.0, 0, 0
    diff = a[:, None, :] - a[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = np.triu_indices(n, 1)
    values = d2[rows, cols]
    idx = int(np.argmax(values))
    return math.sqrt(values[idx]), int(rows[idx]), int(cols[idx])


def diameters(state: SwarmState) -> Tuple[float, float, float]:
    return (extremal_pair(state.x)[0], extremal_pair(state.v)[0], extremal_pair(state.s)[0])


def geometric_factor(state: SwarmState) -> float:
    if state.n < 2:
        raise UndefinedFactorError("geometric factor needs at least two particles")
    gram = state.v @ state.v.T
    rows, cols = np.triu_indices(state.n, 1)
    return float(gram[rows, cols].min())


def dv_dot(state: SwarmState, params: ModelParams) -> float:
    """Time derivative of D(v) along the maximizing pair; 0 when D(v) = 0."""
    dv_norm, i, j = extremal_pair(state.v)
    if dv_norm == 0.0:
        return 0.0
    vdot = np.cross(state.s, state.v) / params.chi
    return float(np.dot(state.v[i] - state.v[j], vdot[i] - vdot[j]) / dv_norm)


def energy_functionals(state: SwarmState, kernel: CommunicationKernel,
                       params: ModelParams) -> Tuple[float, float, float]:
    """Return (E, S, lyap) with lyap = chi/2 E + S/k."""
    n = state.n
    w = kernel.matrix(state.t, state.x)
    diff = state.v[:, None, :] - state.v[None, :, :]
    energy = float(np.sum(w * np.einsum("ijk,ijk->ij", diff, diff)) / n ** 2)
    spin = float(np.mean(np.sum(state.s ** 2, axis=1)))
    return energy, spin, 0.5 * params.chi * energy + spin / params.k


def diagnostics_record(state: SwarmState, kernel: CommunicationKernel, params: ModelParams,
                       reference: Optional[SwarmState] = None) -> DiagnosticsRecord:
    reference = reference or state
    dx, dv, ds = diameters(state)
    energy, spin, lyap = energy_functionals(state, kernel, params)
    sv0 = np.sum(reference.s * reference.v, axis=1)
    return DiagnosticsRecord(
        t=state.t, Dx=dx, Dv=dv, Ds=ds,
        A=geometric_factor(state) if state.n >= 2 else math.nan,
        E=energy, S=spin, lyap=lyap,
        sc_norm=float(np.linalg.norm(state.s.mean(axis=0))),
        Dv_dot=dv_dot(state, params),
        speed_drift=float(np.max(np.abs(np.linalg.norm(state.v, axis=1) - 1.0))),
        sv_drift=float(np.max(np.abs(np.sum(state.s * state.v, axis=1) - sv0))),
    )


class DiagnosticsObserver:
    """Observer for `simulate` collecting one record per sample."""

    def __init__(self, kernel: CommunicationKernel, params: ModelParams):
        self.kernel = kernel
        self.params = params
        self.reference: Optional[SwarmState] = None
        self.records: List[DiagnosticsRecord] = []

    def __call__(self, state: SwarmState) -> None:
        if self.reference is None:
            self.reference = state
        self.records.append(diagnostics_record(state, self.kernel, self.params, self.reference))

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_row() for r in self.records], columns=list(CSV_COLUMNS))


def diagnostics_frame(trajectory: Trajectory) -> pd.DataFrame:
    observer = DiagnosticsObserver(trajectory.kernel, trajectory.params)
    for state in trajectory.states:
        observer(state)
    return observer.frame()


def lower_weight_bound(kernel: CommunicationKernel) -> Callable[[SwarmState], float]:
    """psi(D(x)) for metric kernels, the global minimum weight otherwise."""
    return lambda state: kernel.lower_bound(state.t, state.x)


def fd_budget(fine: np.ndarray, coarse: np.ndarray, floor: float = FD_FLOOR) -> float:
    """Allowance for centered differences from a stencil-doubling comparison.

    For an O(h^2) stencil the fine error is about (coarse - fine) / 3.
    """
    if len(fine) == 0:
        return floor
    return max(floor, FD_SAFETY * float(np.max(np.abs(coarse - fine))) / 3.0)


@dataclass
class AuditResult:
    name: str
    times: np.ndarray
    residual: np.ndarray
    budget: float
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual))) if len(self.residual) else 0.0

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.budget

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "max_abs_residual": self.max_abs,
                "budget": self.budget, **self.details}


def _series(trajectory: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    lyap, spin = [], []
    for state in trajectory.states:
        _, s_val, l_val = energy_functionals(state, trajectory.kernel, trajectory.params)
        lyap.append(l_val)
        spin.append(s_val)
    return np.array(lyap), np.array(spin)


def dissipation_audit(trajectory: Trajectory, kernel: CommunicationKernel, params: ModelParams) -> AuditResult:
    """Residual of d/dt lyap + (2 gamma / (chi k)) S = 0 at interior samples."""
    if not kernel.is_constant:
        raise AuditNotApplicable(f"dissipation identity needs constant weights, kernel is {kernel.kind}")
    if len(trajectory) < 5:
        raise AuditNotApplicable("dissipation audit needs at least five samples")
    h = trajectory.spacing
    lyap, spin = _series(trajectory)
    rate = 2.0 * params.gamma / (params.chi * params.k)
    fine = (lyap[2:] - lyap[:-2]) / (2.0 * h) + rate * spin[1:-1]
    coarse = (lyap[4:] - lyap[:-4]) / (4.0 * h) + rate * spin[2:-2]
    budget = fd_budget(fine[1:-1], coarse)
    return AuditResult("dissipation", trajectory.times[1:-1], fine, budget, {"spacing": h})


def s_integral_audit(trajectory: Trajectory, params: ModelParams, E0: Optional[float] = None,
                     S0: Optional[float] = None) -> AuditResult:
    """Cumulative integral of S against (chi k / 2 gamma)(chi/2 E0 + S0/k).

    The residual is cumulative minus bound; it must stay below the trapezoid
    error allowance.
    """
    kernel = trajectory.kernel
    if not kernel.is_constant:
        raise AuditNotApplicable(f"spin-integral bound needs constant weights, kernel is {kernel.kind}")
    if E0 is None or S0 is None:
        e_init, s_init, _ = energy_functionals(trajectory.initial, kernel, params)
        E0 = e_init if E0 is None else E0
        S0 = s_init if S0 is None else S0
    times = trajectory.times
    spin = np.array([float(np.mean(np.sum(s.s ** 2, axis=1))) for s in trajectory.states])
    bound = (params.chi * params.k / (2.0 * params.gamma)) * (0.5 * params.chi * E0 + S0 / params.k)
    cumulative = cumulative_trapezoid(spin, times, initial=0.0)
    if len(times) >= 3:
        coarse = cumulative_trapezoid(spin[::2], times[::2], initial=0.0)
        trapezoid_error = float(np.max(np.abs(coarse - cumulative[::2]))) / 3.0
    else:
        trapezoid_error = 0.0
    budget = 2.0 * trapezoid_error + 1e-12 * (1.0 + bound)
    excess = np.maximum(cumulative - bound, 0.0)
    return AuditResult("s_integral", times, excess, budget,
                       {"bound": bound, "integral": float(cumulative[-1]), "E0": E0, "S0": S0})


@dataclass
class InequalityAudit:
    times: np.ndarray
    lhs: np.ndarray
    rhs_pointwise: np.ndarray
    lhs_delta0: Optional[np.ndarray]
    rhs_convolution: Optional[np.ndarray]
    budget: float
    skipped: List[float] = field(default_factory=list)
    convolution_note: str = ""

    @property
    def margin_pointwise(self) -> float:
        return float(np.min(self.rhs_pointwise - self.lhs)) if len(self.lhs) else math.inf

    @property
    def margin_convolution(self) -> Optional[float]:
        if self.rhs_convolution is None:
            return None
        return float(np.min(self.rhs_convolution - self.lhs)) if len(self.lhs) else math.inf

    @property
    def margin_delta0(self) -> Optional[float]:
        """Margin with delta0 in place of A(v), against every available right side."""
        if self.lhs_delta0 is None:
            return None
        if not len(self.lhs_delta0):
            return math.inf
        margin = float(np.min(self.rhs_pointwise - self.lhs_delta0))
        if self.rhs_convolution is not None:
            margin = min(margin, float(np.min(self.rhs_convolution - self.lhs_delta0)))
        return margin

    @property
    def passed(self) -> bool:
        ok = self.margin_pointwise >= -self.budget
        if self.rhs_convolution is not None:
            ok = ok and self.margin_convolution >= -self.budget
        if self.lhs_delta0 is not None:
            ok = ok and self.margin_delta0 >= -self.budget
        return ok

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": "inequality",
            "passed": self.passed,
            "samples": int(len(self.times)),
            "skipped_samples": len(self.skipped),
            "first_skipped_time": self.skipped[0] if self.skipped else None,
            "margin_pointwise": self.margin_pointwise,
            "margin_convolution": self.margin_convolution,
            "margin_delta0": self.margin_delta0,
            "convolution_note": self.convolution_note,
            "budget": self.budget,
        }


def _uniform_weights(trajectory: Trajectory) -> bool:
    for state in trajectory.states:
        w = trajectory.kernel.matrix(state.t, state.x)
        if not np.all(w == w.flat[0]):
            return False
    return True


def inequality_audit(trajectory: Trajectory, params: ModelParams,
                     psi_eval: Optional[Callable[[SwarmState], float]] = None,
                     delta0: Optional[float] = None) -> InequalityAudit:
    """Check the second-order differential inequalities for D(v)^2.

    The left side is evaluated with centered differences of |v_i - v_j|^2 for the
    pair maximizing D(v) at each sample. The pointwise right side uses D(s) and
    max |s_i|; the convolution form is only evaluated for uniform weights. With
    ``delta0`` the left side is also taken with delta0 in place of A(v), and that
    form must hold against every right side as well.
    """
    states = trajectory.states
    m = len(states)
    if m < 5:
        raise AuditNotApplicable("inequality audit needs at least five samples")
    psi_eval = psi_eval or lower_weight_bound(trajectory.kernel)
    h = trajectory.spacing
    chi, gamma, k = params.chi, params.gamma, params.k
    nu = gamma / chi
    v = trajectory.v
    times = trajectory.times

    dv2 = np.array([extremal_pair(st.v)[0] ** 2 for st in states])
    ds2 = np.array([extremal_pair(st.s)[0] ** 2 for st in states])
    smax2 = np.array([float(np.max(np.sum(st.s ** 2, axis=1))) for st in states])

    uniform = _uniform_weights(trajectory)
    conv = np.zeros(m)
    decay = math.exp(-nu * h)
    for i in range(1, m):
        conv[i] = decay * conv[i - 1] + 0.5 * h * (decay * dv2[i - 1] + dv2[i])
    s_init = states[0].s
    c2 = (4.0 / chi ** 2) * (extremal_pair(s_init)[0] ** 2 + 2.0 * float(np.max(np.sum(s_init ** 2, axis=1))))
    psi_M = trajectory.kernel.psi_M

    rows: List[Tuple[float, float, float, Optional[float], float, float]] = []
    skipped: List[float] = []
    for i in range(2, m - 2):
        a_val = geometric_factor(states[i]) if states[i].n >= 2 else 1.0
        if a_val <= 0.0:
            skipped.append(float(times[i]))
            continue
        _, p, q = extremal_pair(states[i].v)
        y = np.sum((v[i - 2:i + 3, p] - v[i - 2:i + 3, q]) ** 2, axis=1)
        d1 = (y[3] - y[1]) / (2.0 * h)
        d2 = (y[3] - 2.0 * y[2] + y[1]) / h ** 2
        d1c = (y[4] - y[0]) / (4.0 * h)
        d2c = (y[4] - 2.0 * y[2] + y[0]) / (4.0 * h ** 2)
        psi_low = psi_eval(states[i])
        core = d2 + nu * d1
        lhs = core + (2.0 * k / chi) * psi_low * dv2[i] * a_val
        lhs_d0 = core + (2.0 * k / chi) * psi_low * dv2[i] * delta0 if delta0 is not None else None
        rhs = (4.0 / chi ** 2) * (ds2[i] + smax2[i] * dv2[i])
        c1 = (4.0 * k ** 2 * psi_M / (gamma * chi)) * (1.0 + dv2[i])
        rhs_conv = c1 * conv[i] + c2 * math.exp(-nu * times[i])
        fd_gap = (d2c - d2) + nu * (d1c - d1)
        rows.append((float(times[i]), lhs, rhs, lhs_d0, rhs_conv, fd_gap))

    if not rows:
        raise AuditNotApplicable("geometric factor is nonpositive on every audited sample")
    if skipped:
        logger.warning("inequality audit skipped %d samples with A(v) <= 0", len(skipped))
    table = np.array([[r[0], r[1], r[2], r[4], r[5]] for r in rows])
    budget = fd_budget(np.zeros(len(table)), table[:, 4])
    note = "" if uniform else "not applicable: weights are not uniform"
    return InequalityAudit(
        times=table[:, 0], lhs=table[:, 1], rhs_pointwise=table[:, 2],
        lhs_delta0=np.array([r[3] for r in rows]) if delta0 is not None else None,
        rhs_convolution=table[:, 3] if uniform else None,
        budget=budget, skipped=skipped, convolution_note=note,
    )
