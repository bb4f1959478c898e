"""Scenario documents: one JSON file describing a run.

A scenario names the model ("is", "kuramoto", "cs" or "gronwall"), its
parameters, the kernel, the initial data (explicit or generated from a seed),
the integrator settings, the checks to evaluate and delta0. Bundled presets
live in ``presets/`` next to this module.
"""
import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .errors import HypothesisViolation, KernelContractError, ScenarioError
from .gronwall import Gron1Problem, Gron2Problem, problem_from_spec
from .integrator import IntegratorConfig, Scheme
from .kernels import CommunicationKernel, kernel_from_spec
from .model import ModelParams, SwarmState, cone_state, validate_initial
from .reductions import CSState, KuramotoParams, KuramotoState, quasi_steady_spins

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"

MODELS = ("is", "kuramoto", "cs", "gronwall")

CHECKS = {
    "is": ("conservation", "dissipation", "s_integral", "inequality", "invariance",
           "thm1", "thm2", "ha", "chi_limit", "chi_deviation"),
    "kuramoto": ("chy", "kuramoto_decay", "kuramoto_reduction"),
    "cs": ("cs_flock", "sddi", "h_functional"),
    "gronwall": ("gronwall_suite",),
}

DEFAULT_INTEGRATOR = {"dt": 0.01, "t_end": 10.0, "scheme": "rk4", "renormalize": False, "sample_every": 1}
DEFAULT_KERNEL = {"type": "constant", "value": 1.0}
GRONWALL_DEFAULTS = {"n_problems": 50, "seed": 0, "t_end": 20.0}

AXIS_ALIASES = {"chi": "params.chi", "gamma": "params.gamma", "k": "params.k", "kbar": "params.kbar",
                "m": "params.m", "dt": "integrator.dt", "t_end": "integrator.t_end", "seed": "initial.seed"}


@dataclass
class Scenario:
    name: str
    model: str
    params: Dict[str, Any]
    kernel: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_KERNEL))
    initial: Dict[str, Any] = field(default_factory=dict)
    integrator: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_INTEGRATOR))
    checks: List[str] = field(default_factory=list)
    delta0: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "model": self.model, "params": self.params, "kernel": self.kernel,
                "initial": self.initial, "integrator": self.integrator, "checks": list(self.checks),
                "delta0": self.delta0, "extra": self.extra}

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def n(self) -> int:
        initial = self.initial
        for key in ("x", "theta", "v"):
            if key in initial:
                return len(initial[key])
        return int(initial.get("n", 0))

    def with_overrides(self, seed: Optional[int] = None, dt: Optional[float] = None,
                       t_end: Optional[float] = None) -> "Scenario":
        data = copy.deepcopy(self.to_dict())
        if seed is not None:
            if "seed" not in data["initial"] and data["model"] != "gronwall":
                raise ScenarioError("initial.seed", "scenario has no generated initial data to reseed")
            target = data["params"] if data["model"] == "gronwall" else data["initial"]
            target["seed"] = int(seed)
        if dt is not None:
            data["integrator"]["dt"] = float(dt)
        if t_end is not None:
            key = "t_end"
            (data["params"] if data["model"] == "gronwall" else data["integrator"])[key] = float(t_end)
        return scenario_from_dict(data)

    def resolve_axis(self, axis: str) -> str:
        """Dotted path of a numeric field, accepting the short names in AXIS_ALIASES."""
        path = AXIS_ALIASES.get(axis, axis)
        self._parent(self.to_dict(), path)
        return path

    @staticmethod
    def _parent(data: Dict[str, Any], path: str) -> Dict[str, Any]:
        target = data
        for part in path.split(".")[:-1]:
            if not isinstance(target, dict) or part not in target:
                raise ScenarioError(path, "no such scenario field")
            target = target[part]
        leaf = path.split(".")[-1]
        if not isinstance(target, dict) or leaf not in target:
            raise ScenarioError(path, "no such scenario field")
        if not isinstance(target[leaf], (int, float)) or isinstance(target[leaf], bool):
            raise ScenarioError(path, f"field is not numeric ({type(target[leaf]).__name__})")
        return target

    def with_field(self, axis: str, value: float) -> "Scenario":
        path = self.resolve_axis(axis)
        data = copy.deepcopy(self.to_dict())
        target = self._parent(data, path)
        leaf = path.split(".")[-1]
        target[leaf] = int(value) if isinstance(target[leaf], int) and float(value).is_integer() else float(value)
        return scenario_from_dict(data)


def _require(data: Dict[str, Any], key: str, where: str):
    if key not in data:
        raise ScenarioError(f"{where}.{key}" if where else key, "missing required field")
    return data[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(where, f"expected a finite number, got {value!r}")
    return float(value)


def scenario_from_dict(data: Dict[str, Any]) -> Scenario:
    """Validate a scenario document and fill in defaults."""
    if not isinstance(data, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    model = _require(data, "model", "")
    if model not in MODELS:
        raise ScenarioError("model", f"unknown model '{model}', expected one of {', '.join(MODELS)}")
    integrator = dict(DEFAULT_INTEGRATOR)
    integrator.update(data.get("integrator") or {})
    scenario = Scenario(
        name=str(data.get("name", "scenario")),
        model=model,
        params=dict(_require(data, "params", "")),
        kernel=dict(data.get("kernel") or DEFAULT_KERNEL),
        initial=dict(data.get("initial") or {}),
        integrator=integrator,
        checks=list(data.get("checks") or []),
        delta0=data.get("delta0"),
        extra=dict(data.get("extra") or {}),
    )
    for i, check in enumerate(scenario.checks):
        if check not in CHECKS[model]:
            raise ScenarioError(f"checks[{i}]", f"'{check}' is not a check of model '{model}'")
    if scenario.delta0 is not None:
        delta0 = _number(scenario.delta0, "delta0")
        if not 0.0 < delta0 < 1.0:
            raise ScenarioError("delta0", f"must lie in (0, 1), got {delta0}")
    needs_delta0 = {"inequality", "invariance", "thm1", "thm2"} & set(scenario.checks)
    if needs_delta0 and scenario.delta0 is None:
        raise ScenarioError("delta0", f"required by checks {sorted(needs_delta0)}")
    # building every object once surfaces invariant violations with their field path
    if model != "gronwall":
        build_integrator(scenario)
    if model == "is":
        params = build_params(scenario)
        kernel = build_kernel(scenario)
        build_initial_state(scenario, params, kernel)
    elif model == "kuramoto":
        build_kuramoto(scenario)
    elif model == "cs":
        build_cs(scenario)
    else:
        for key, default in GRONWALL_DEFAULTS.items():
            scenario.params.setdefault(key, default)
            _number(scenario.params[key], f"params.{key}")
        if "problem" in scenario.params:
            build_gronwall_problem(scenario)
    return scenario


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        logger.error(f"Scenario file not found: {path}")
        raise
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON in scenario file {path}: {e}")
        raise ScenarioError("", f"invalid JSON: {e}") from e
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario.to_dict(), f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def list_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_preset(name: str) -> Scenario:
    path = PRESET_DIR / f"{name}.json"
    if not path.exists():
        raise ScenarioError("preset", f"unknown preset '{name}' (available: {', '.join(list_presets())})")
    return load_scenario(path)


def build_integrator(scenario: Scenario) -> IntegratorConfig:
    spec = scenario.integrator
    try:
        return IntegratorConfig(
            dt=_number(spec["dt"], "integrator.dt"),
            t_end=_number(spec["t_end"], "integrator.t_end"),
            scheme=Scheme(spec.get("scheme", "rk4")),
            renormalize=bool(spec.get("renormalize", False)),
            sample_every=int(spec.get("sample_every", 1)),
        )
    except ValueError as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError("integrator", str(e)) from e


def build_params(scenario: Scenario) -> ModelParams:
    p = scenario.params
    values = {key: _number(_require(p, key, "params"), f"params.{key}") for key in ("chi", "gamma", "k")}
    try:
        return ModelParams(**values)
    except ValueError as e:
        raise ScenarioError("params", str(e)) from e


def build_kernel(scenario: Scenario, n: Optional[int] = None) -> CommunicationKernel:
    try:
        return kernel_from_spec(scenario.kernel, n or scenario.n)
    except (KernelContractError, KeyError, TypeError) as e:
        raise ScenarioError("kernel", str(e)) from e


def _vectors(spec: Dict[str, Any], key: str, n: Optional[int] = None) -> np.ndarray:
    a = np.array(_require(spec, key, "initial"), dtype=float)
    if a.ndim != 2 or a.shape[1] not in (2, 3) or (n is not None and len(a) != n):
        raise ScenarioError(f"initial.{key}", f"expected a list of {n or 'N'} vectors, got shape {a.shape}")
    if a.shape[1] == 2:
        a = np.column_stack([a, np.zeros(len(a))])
    return a


def _planar_fan(spec: Dict[str, Any]) -> tuple:
    n = int(_require(spec, "n", "initial"))
    if n < 2:
        raise ScenarioError("initial.n", "fan needs at least two particles")
    spread = _number(spec.get("angle", 0.1), "initial.angle")
    width = _number(spec.get("dx", 1.0), "initial.dx")
    angles = np.linspace(-spread, spread, n)
    x = np.column_stack([np.linspace(0.0, width, n), np.zeros(n), np.zeros(n)])
    v = np.column_stack([np.cos(angles), np.sin(angles), np.zeros(n)])
    return x, v


def build_initial_state(scenario: Scenario, params: Optional[ModelParams] = None,
                        kernel: Optional[CommunicationKernel] = None) -> SwarmState:
    spec = scenario.initial
    kind = spec.get("type", "explicit")
    if kind == "explicit":
        x = _vectors(spec, "x")
        v = _vectors(spec, "v", len(x))
        s = _vectors(spec, "s", len(x)) if "s" in spec else np.zeros_like(v)
    elif kind == "cone":
        half_angle = _number(_require(spec, "half_angle", "initial"), "initial.half_angle")
        if not 0 <= half_angle < math.pi / 2:
            raise ScenarioError("initial.half_angle", "cone half-angle must lie in [0, pi/2)")
        state = cone_state(int(_require(spec, "n", "initial")), half_angle,
                           spin_scale=_number(spec.get("spin_scale", 0.0), "initial.spin_scale"),
                           box=_number(spec.get("box", 1.0), "initial.box"),
                           axis=spec.get("axis", [1.0, 0.0, 0.0]), seed=int(spec.get("seed", 0)))
        x, v, s = state.x, state.v, state.s
    elif kind == "aligned":
        n = int(_require(spec, "n", "initial"))
        direction = np.array(spec.get("direction", [1.0, 0.0, 0.0]), dtype=float)
        direction = direction / np.linalg.norm(direction)
        x = np.outer(np.arange(n) * _number(spec.get("spacing", 1.0), "initial.spacing"), [0.0, 1.0, 0.0])
        v = np.tile(direction, (n, 1))
        s = np.zeros((n, 3))
    elif kind == "planar_fan":
        x, v = _planar_fan(spec)
        s = np.zeros_like(v)
    else:
        raise ScenarioError("initial.type", f"unknown initial data type '{kind}'")

    if spec.get("spins") == "quasi_steady":
        params = params or build_params(scenario)
        kernel = kernel or build_kernel(scenario, len(x))
        s = quasi_steady_spins(params, kernel, x, v)
    try:
        state = SwarmState(t=0.0, x=x, v=v, s=s)
    except ValueError as e:
        raise ScenarioError("initial", str(e)) from e
    report = validate_initial(state)
    if not report.passed:
        raise ScenarioError("initial", f"state violates unit speed or s.v = 0: {report.to_dict()}")
    return state


def build_kuramoto(scenario: Scenario) -> tuple:
    p = scenario.params
    spec = scenario.initial
    if spec.get("type", "explicit") == "explicit":
        theta = np.array(_require(spec, "theta", "initial"), dtype=float)
        omega = np.array(spec.get("omega", np.zeros(len(theta))), dtype=float)
    elif spec["type"] == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        n = int(_require(spec, "n", "initial"))
        theta = rng.uniform(-0.5, 0.5, n) * _number(spec.get("theta_spread", 1.0), "initial.theta_spread")
        omega = rng.standard_normal(n) * _number(spec.get("omega_scale", 0.0), "initial.omega_scale")
    else:
        raise ScenarioError("initial.type", f"unknown initial data type '{spec['type']}'")
    n = len(theta)

    def vector(key, default=None):
        value = p.get(key, default)
        if value is None:
            raise ScenarioError(f"params.{key}", "missing required field")
        return np.full(n, float(value)) if np.isscalar(value) else np.array(value, dtype=float)

    a = p.get("a", "uniform")
    a = np.full((n, n), 1.0 / n) if a == "uniform" else np.array(a, dtype=float)
    try:
        params = KuramotoParams(m=vector("m"), gamma=vector("gamma", 1.0), k=_number(_require(p, "k", "params"), "params.k"),
                                a=a, omega_nat=vector("omega", 0.0))
        state = KuramotoState(0.0, theta, omega)
    except ValueError as e:
        raise ScenarioError("params", str(e)) from e
    return params, state


def build_cs(scenario: Scenario) -> tuple:
    kbar = _number(_require(scenario.params, "kbar", "params"), "params.kbar")
    if kbar <= 0:
        raise ScenarioError("params.kbar", "must be positive")
    spec = scenario.initial
    kind = spec.get("type", "explicit")
    if kind == "planar_fan":
        x, v = _planar_fan(spec)
    elif kind == "explicit":
        x = _vectors(spec, "x")
        v = _vectors(spec, "v", len(x))
    elif kind == "cone":
        state = cone_state(int(_require(spec, "n", "initial")), _number(spec["half_angle"], "initial.half_angle"),
                           box=_number(spec.get("box", 1.0), "initial.box"), seed=int(spec.get("seed", 0)))
        x, v = state.x, state.v
    else:
        raise ScenarioError("initial.type", f"unknown initial data type '{kind}'")
    if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > 1e-9):
        raise ScenarioError("initial.v", "velocities must have unit length")
    kernel = build_kernel(scenario, len(x))
    return kbar, kernel, CSState(0.0, x, v)


def build_gronwall_problem(scenario: Scenario) -> Union[Gron1Problem, Gron2Problem]:
    spec = scenario.params.get("problem")
    if not isinstance(spec, dict):
        raise ScenarioError("params.problem", "scenario has no Gronwall problem object")
    try:
        return problem_from_spec(spec)
    except KeyError as e:
        raise ScenarioError(f"params.problem.{e.args[0]}", "missing required field") from e
    except (HypothesisViolation, ValueError, TypeError) as e:
        raise ScenarioError("params.problem", str(e)) from e
