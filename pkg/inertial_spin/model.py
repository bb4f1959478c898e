"""Inertial spin model: parameters, swarm state and right-hand sides.

State per particle i: position x_i, unit velocity v_i and spin s_i with
s_i . v_i = 0. The first-order system is

    dx_i/dt = v_i
    dv_i/dt = s_i x v_i / chi
    ds_i/dt = (k/N) sum_j psi_ij v_i x v_j - (gamma/chi) s_i
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .config import TOL_ORTH, TOL_SPEED
from .errors import NumericInputError
from .kernels import CommunicationKernel

logger = logging.getLogger(__name__)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParams:
    chi: float
    gamma: float
    k: float

    def __post_init__(self):
        for name in ("chi", "gamma", "k"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def kbar(self) -> float:
        """Coupling of the unit-speed Cucker-Smale limit, k / gamma."""
        return self.k / self.gamma

    def to_dict(self) -> Dict[str, float]:
        return {"chi": float(self.chi), "gamma": float(self.gamma), "k": float(self.k)}


@dataclass(frozen=True)
class SwarmState:
    t: float
    x: np.ndarray
    v: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("x", "v", "s"):
            a = _frozen(getattr(self, name))
            if a.ndim != 2 or a.shape[1] != 3:
                raise ValueError(f"{name} must have shape (N, 3), got {a.shape}")
            arrays[name] = a
        if not (len(arrays["x"]) == len(arrays["v"]) == len(arrays["s"])):
            raise ValueError("x, v and s must hold the same number of particles")
        if len(arrays["x"]) < 1:
            raise ValueError("a swarm needs at least one particle")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.x)

    def stacked(self) -> np.ndarray:
        return np.stack([self.x, self.v, self.s])

    @classmethod
    def from_stacked(cls, t: float, y: np.ndarray) -> "SwarmState":
        return cls(t=t, x=y[0], v=y[1], s=y[2])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.s)))

    def to_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "x": self.x.tolist(), "v": self.v.tolist(), "s": self.s.tolist()}


@dataclass(frozen=True)
class SwarmDerivative:
    dx: np.ndarray
    dv: np.ndarray
    ds: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.dx, self.dv, self.ds])


@dataclass
class ValidationReport:
    speed_error: np.ndarray
    orth_error: np.ndarray
    tol: float
    speed_violations: List[int] = field(default_factory=list)
    orth_violations: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.speed_violations and not self.orth_violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "max_speed_error": float(self.speed_error.max()),
            "max_orth_error": float(self.orth_error.max()),
            "speed_violations": self.speed_violations,
            "orth_violations": self.orth_violations,
        }


def _require_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericInputError("non-finite component in model input")


def kernel_weight(kernel: CommunicationKernel, i: int, j: int, state: SwarmState) -> float:
    n = state.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"pair ({i}, {j}) out of range for N={n}")
    return kernel.weight(i, j, state.t, state.x)


def project_orthogonal(vi: np.ndarray, vj: np.ndarray) -> np.ndarray:
    """Component of vj orthogonal to vi: vj - (vi . vj) vi.

    Works row-wise on (N, 3) arrays as well.
    """
    vi = np.asarray(vi, dtype=float)
    vj = np.asarray(vj, dtype=float)
    _require_finite(vi, vj)
    return vj - np.sum(vi * vj, axis=-1, keepdims=True) * vi


def eval_rhs(params: ModelParams, kernel: CommunicationKernel, state: SwarmState,
             check_finite: bool = True) -> SwarmDerivative:
    if check_finite:
        _require_finite(state.x, state.v, state.s)
    w = kernel.matrix(state.t, state.x)
    v, s = state.v, state.s
    n = state.n
    dv = np.cross(s, v) / params.chi
    ds = (params.k / n) * np.cross(v, w @ v) - (params.gamma / params.chi) * s
    return SwarmDerivative(dx=v.copy(), dv=dv, ds=ds)


def spin_rate_literal(params: ModelParams, kernel: CommunicationKernel, state: SwarmState) -> np.ndarray:
    """Spin rate in its unexpanded form v_i x [(k/N) sum_j psi_ij (v_j - v_i) - gamma dv_i]."""
    _require_finite(state.x, state.v, state.s)
    w = kernel.matrix(state.t, state.x)
    v = state.v
    n = state.n
    dv = np.cross(state.s, v) / params.chi
    pull = (params.k / n) * (w @ v - w.sum(axis=1)[:, None] * v)
    return np.cross(v, pull - params.gamma * dv)


def eval_accel_second_order(params: ModelParams, kernel: CommunicationKernel, state: SwarmState) -> np.ndarray:
    """Velocity acceleration from the second-order form of the model.

    chi a_i + gamma dv_i + chi |dv_i|^2 v_i = (k/N) sum_k psi_ik (v_k - (v_i . v_k) v_i),
    with dv_i = s_i x v_i / chi. Needs s_i . v_i = 0.
    """
    _require_finite(state.x, state.v, state.s)
    w = kernel.matrix(state.t, state.x)
    v = state.v
    dv = np.cross(state.s, v) / params.chi
    alignment = project_orthogonal(v, w @ v)
    speed2 = np.sum(dv * dv, axis=1, keepdims=True)
    return ((params.k / state.n) * alignment - params.gamma * dv - params.chi * speed2 * v) / params.chi


def validate_initial(state: SwarmState, tol: float = TOL_SPEED, orth_tol: Optional[float] = None) -> ValidationReport:
    orth_tol = TOL_ORTH if orth_tol is None else orth_tol
    speed_error = np.abs(np.linalg.norm(state.v, axis=1) - 1.0)
    orth_error = np.abs(np.sum(state.s * state.v, axis=1))
    report = ValidationReport(
        speed_error=speed_error,
        orth_error=orth_error,
        tol=tol,
        speed_violations=[int(i) for i in np.flatnonzero(~(speed_error <= tol))],
        orth_violations=[int(i) for i in np.flatnonzero(~(orth_error <= orth_tol))],
    )
    if not report.passed:
        logger.debug("state validation failed: %s", report.to_dict())
    return report


def rotate_state(state: SwarmState, rotation: np.ndarray) -> SwarmState:
    """Apply an orthogonal map; spins are axial vectors and pick up det(O)."""
    o = np.asarray(rotation, dtype=float)
    det = float(np.sign(np.linalg.det(o)))
    return SwarmState(t=state.t, x=state.x @ o.T, v=state.v @ o.T, s=det * (state.s @ o.T))


def cone_state(n: int, half_angle: float, spin_scale: float = 0.0, box: float = 1.0,
               axis=(1.0, 0.0, 0.0), seed: int = 0, t: float = 0.0) -> SwarmState:
    """Random admissible state: unit velocities uniform on a spherical cap.

    Spins are Gaussian with standard deviation ``spin_scale`` and projected
    orthogonal to their velocity; positions are uniform in [0, box]^3.
    """
    if not (0 <= half_angle < math.pi):
        raise ValueError(f"half_angle must lie in [0, pi), got {half_angle}")
    rng = np.random.default_rng(seed)
    cos_theta = rng.uniform(math.cos(half_angle), 1.0, size=n)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
    sin_theta = np.sqrt(np.clip(1.0 - cos_theta ** 2, 0.0, None))
    local = np.column_stack([cos_theta, sin_theta * np.cos(phi), sin_theta * np.sin(phi)])

    e1 = np.asarray(axis, dtype=float)
    e1 = e1 / np.linalg.norm(e1)
    helper = np.array([0.0, 0.0, 1.0]) if abs(e1[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e2 = np.cross(helper, e1)
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    v = local @ np.vstack([e1, e2, e3])
    v /= np.linalg.norm(v, axis=1, keepdims=True)

    s = project_orthogonal(v, spin_scale * rng.standard_normal((n, 3)))
    x = rng.uniform(0.0, box, size=(n, 3))
    return SwarmState(t=t, x=x, v=v, s=s)
