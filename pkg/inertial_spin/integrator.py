"""Time stepping for the inertial spin model and its reductions.

The fixed-step classical Runge-Kutta driver (`integrate_array`) works on any
array-valued flow, so the Kuramoto and Cucker-Smale reductions reuse it.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .config import REFERENCE_ATOL, REFERENCE_RTOL
from .errors import DivergenceError, InvalidStateError, OracleBudgetError
from .kernels import CommunicationKernel
from .model import ModelParams, SwarmState, eval_rhs, validate_initial

logger = logging.getLogger(__name__)

Flow = Callable[[float, np.ndarray], np.ndarray]
Observer = Callable[[SwarmState], None]


class Scheme(str, Enum):
    RK4 = "rk4"
    RK4_PROJECTED = "rk4_projected"
    REFERENCE = "reference"


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_end: float
    scheme: Scheme = Scheme.RK4
    renormalize: bool = False
    sample_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError(f"sample_every must be a positive integer, got {self.sample_every}")

    @property
    def projected(self) -> bool:
        return self.renormalize or self.scheme is Scheme.RK4_PROJECTED

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def sample_spacing(self) -> float:
        return self.dt * self.sample_every

    def to_dict(self) -> Dict[str, Any]:
        return {"dt": self.dt, "t_end": self.t_end, "scheme": self.scheme.value,
                "renormalize": self.renormalize, "sample_every": int(self.sample_every)}


@dataclass
class Trajectory:
    states: List[SwarmState]
    params: ModelParams
    kernel: CommunicationKernel
    config: IntegratorConfig
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def x(self) -> np.ndarray:
        return np.stack([s.x for s in self.states])

    @property
    def v(self) -> np.ndarray:
        return np.stack([s.v for s in self.states])

    @property
    def s(self) -> np.ndarray:
        return np.stack([s.s for s in self.states])

    @property
    def initial(self) -> SwarmState:
        return self.states[0]

    @property
    def final(self) -> SwarmState:
        return self.states[-1]

    @property
    def spacing(self) -> float:
        return self.config.sample_spacing

    def describe(self) -> Dict[str, Any]:
        return {"params": self.params.to_dict(), "kernel": self.kernel.describe(),
                "config": self.config.to_dict(), "samples": len(self.states)}


def rk4_step(flow: Flow, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = flow(t, y)
    k2 = flow(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = flow(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = flow(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _first_bad_particle(y: np.ndarray) -> int:
    """Index along the particle axis (axis 1 of stacked fields) of the first non-finite entry."""
    bad = ~np.isfinite(y)
    axes = tuple(i for i in range(y.ndim) if i != 1) if y.ndim >= 2 else ()
    rows = np.flatnonzero(bad.any(axis=axes)) if axes else np.flatnonzero(bad)
    return int(rows[0]) if len(rows) else -1


def integrate_array(flow: Flow, y0: np.ndarray, t0: float, config: IntegratorConfig,
                    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                    on_sample: Optional[Callable[[float, np.ndarray], None]] = None) -> List[tuple]:
    """Advance ``y' = flow(t, y)`` and return the sampled ``(t, y)`` pairs.

    Sample times are t0 + n dt (never accumulated). A non-finite value raises
    DivergenceError carrying the samples recorded so far.
    """
    n_steps = config.n_steps
    if abs(n_steps * config.dt - config.t_end) > 1e-9 * max(1.0, config.t_end):
        logger.warning("t_end=%g is not a multiple of dt=%g; stopping at %g",
                       config.t_end, config.dt, n_steps * config.dt)
    y = np.array(y0, dtype=float)
    samples = [(t0, y.copy())]
    if on_sample:
        on_sample(t0, samples[0][1])

    if config.scheme is Scheme.REFERENCE:
        return _integrate_reference(flow, y, t0, config, samples, on_sample)

    for n in range(1, n_steps + 1):
        t_prev = t0 + (n - 1) * config.dt
        y = rk4_step(flow, t_prev, y, config.dt)
        if project is not None:
            y = project(y)
        t = t0 + n * config.dt
        if not np.all(np.isfinite(y)):
            raise DivergenceError(_first_bad_particle(y), t, trajectory=samples)
        if n % config.sample_every == 0:
            samples.append((t, y.copy()))
            if on_sample:
                on_sample(t, samples[-1][1])
    return samples


def _integrate_reference(flow: Flow, y: np.ndarray, t0: float, config: IntegratorConfig,
                         samples: List[tuple], on_sample) -> List[tuple]:
    shape = y.shape
    n_samples = config.n_steps // config.sample_every
    if n_samples == 0:
        return samples
    t_eval = t0 + config.sample_spacing * np.arange(1, n_samples + 1)

    def fun(t, flat):
        return flow(t, flat.reshape(shape)).ravel()

    sol = solve_ivp(fun, (t0, t_eval[-1]), y.ravel(), method="DOP853", t_eval=t_eval,
                    rtol=REFERENCE_RTOL, atol=REFERENCE_ATOL)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        bad_t = float(sol.t[-1]) if len(sol.t) else t0
        last = sol.y[:, -1].reshape(shape) if sol.y.size else y
        raise DivergenceError(_first_bad_particle(last), bad_t, trajectory=samples)
    for j, t in enumerate(t_eval):
        samples.append((float(t), sol.y[:, j].reshape(shape)))
        if on_sample:
            on_sample(float(t), samples[-1][1])
    return samples


def project_constraints(y: np.ndarray) -> np.ndarray:
    """Renormalize v, then remove the v-component of s."""
    x, v, s = y
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    s = s - np.sum(s * v, axis=1, keepdims=True) * v
    return np.stack([x, v, s])


def swarm_flow(params: ModelParams, kernel: CommunicationKernel) -> Flow:
    # non-finite stage values propagate so the step loop can report the diverging particle
    def flow(t: float, y: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return eval_rhs(params, kernel, SwarmState.from_stacked(t, y), check_finite=False).stacked()
    return flow


def step(params: ModelParams, kernel: CommunicationKernel, state: SwarmState,
         config: IntegratorConfig) -> SwarmState:
    y = rk4_step(swarm_flow(params, kernel), state.t, state.stacked(), config.dt)
    if config.projected:
        y = project_constraints(y)
    t = state.t + config.dt
    if not np.all(np.isfinite(y)):
        raise DivergenceError(_first_bad_particle(y), t)
    return SwarmState.from_stacked(t, y)


def simulate(params: ModelParams, kernel: CommunicationKernel, state0: SwarmState,
             config: IntegratorConfig, observers: Sequence[Observer] = ()) -> Trajectory:
    report = validate_initial(state0)
    if not report.passed:
        raise InvalidStateError(f"initial state fails validation: {report.to_dict()}")

    def notify(t, y):
        snapshot = SwarmState.from_stacked(t, y)
        for observer in observers:
            observer(snapshot)

    try:
        samples = integrate_array(swarm_flow(params, kernel), state0.stacked(), state0.t, config,
                                  project=project_constraints if config.projected else None,
                                  on_sample=notify if observers else None)
    except DivergenceError as exc:
        partial = Trajectory([SwarmState.from_stacked(t, y) for t, y in exc.trajectory or []],
                             params, kernel, config)
        logger.error("simulation diverged: %s", exc)
        raise DivergenceError(exc.particle, exc.time, trajectory=partial) from exc
    states = [SwarmState.from_stacked(t, y) for t, y in samples]
    return Trajectory(states, params, kernel, config)


def reference_solve(params: ModelParams, kernel: CommunicationKernel, state0: SwarmState,
                    t_end: float, dt0: float = 1e-2, sample_dt: Optional[float] = None,
                    tol: float = 1e-10, max_steps: int = 2_000_000) -> Trajectory:
    """RK4 with the step halved until two successive solutions agree to ``tol``.

    Agreement is measured in sup norm over the states sampled every
    ``sample_dt`` (default ``dt0``). ``max_steps`` caps the total work.
    """
    sample_dt = dt0 if sample_dt is None else sample_dt
    ratio = sample_dt / dt0
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError("sample_dt must be a positive multiple of dt0")
    every = int(round(ratio))
    dt = dt0
    spent = 0
    previous = None
    while True:
        config = IntegratorConfig(dt=dt, t_end=t_end, scheme=Scheme.RK4, sample_every=every)
        spent += config.n_steps
        if spent > max_steps:
            raise OracleBudgetError(f"no agreement to {tol:g} within {max_steps} steps (dt={dt:g})")
        current = simulate(params, kernel, state0, config)
        if previous is not None:
            gap = float(np.max(np.abs(np.stack([s.stacked() for s in current.states])
                                      - np.stack([s.stacked() for s in previous.states]))))
            logger.debug("reference halving dt=%g gap=%g", dt, gap)
            if gap <= tol:
                current.metadata["reference_gap"] = gap
                return current
        previous = current
        dt /= 2.0
        every *= 2
