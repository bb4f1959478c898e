"""Second-order Gronwall estimates and the equality-ODE oracles that test them.

Two problem shapes are covered:

    Gron1:  a y'' + b y' + c y <= g(t)
    Gron2:  y'' + a y' + b y <= c int_0^t exp(-nu (t - s)) y(s) ds + d exp(-nu t)

Each has a pointwise bound, a uniform bound, and an oracle that integrates the
equality version (the extremal admissible y).
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, optimize
from scipy.integrate import IntegrationWarning, solve_ivp

from .config import QUAD_EPSABS, QUAD_EPSREL, REFERENCE_ATOL, REFERENCE_RTOL
from .errors import DivergenceError, HypothesisViolation, NoDecayRateError, QuadratureError

logger = logging.getLogger(__name__)

Forcing = Callable[[float], float]

MU_GRID_POINTS = 10_000
MU_XTOL = 1e-13
# rate used when sup D is the open endpoint nu and d > 0
OPEN_ENDPOINT_SHRINK = 1e-3


def zero_forcing(t: float) -> float:
    return 0.0


def _quad(f: Callable[[float], float], lo: float, hi: float, points: Sequence[float] = ()) -> float:
    if hi <= lo:
        return 0.0
    inner = [p for p in points if lo < p < hi] or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = integrate.quad(f, lo, hi, epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS,
                                      limit=500, points=inner)
        except IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{lo:g}, {hi:g}] did not converge: {exc}") from exc
    if not math.isfinite(value):
        raise QuadratureError(f"quadrature on [{lo:g}, {hi:g}] returned {value}")
    return value


@dataclass(frozen=True)
class Gron1Problem:
    a: float
    b: float
    c: float
    y0: float
    y1: float
    g: Forcing = zero_forcing
    g_integral: Optional[float] = None
    breakpoints: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.a > 0:
            raise HypothesisViolation(f"a must be positive, got {self.a}")
        if self.y0 < 0:
            raise HypothesisViolation(f"y0 must be nonnegative, got {self.y0}")

    @property
    def discriminant(self) -> float:
        return self.b ** 2 - 4.0 * self.a * self.c

    @property
    def distinct_roots(self) -> bool:
        return self.discriminant > 0

    @property
    def nu1(self) -> float:
        return (self.b + math.sqrt(self.discriminant)) / (2.0 * self.a)

    @property
    def nu2(self) -> float:
        return (self.b - math.sqrt(self.discriminant)) / (2.0 * self.a)

    @property
    def beta(self) -> float:
        return self.b / (2.0 * self.a)

    def forcing_integral(self) -> float:
        if self.g_integral is not None:
            return float(self.g_integral)
        if self.g is zero_forcing:
            return 0.0
        try:
            return _quad(self.g, 0.0, math.inf)
        except QuadratureError as exc:
            raise HypothesisViolation(f"integral of g over [0, inf) is not available: {exc}") from exc


@dataclass(frozen=True)
class Gron2Problem:
    a: float
    b: float
    c: float
    d: float
    nu: float
    y0: float
    y1: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d", "y0"):
            if getattr(self, name) < 0:
                raise HypothesisViolation(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.nu > 0:
            raise HypothesisViolation(f"nu must be positive, got {self.nu}")

    @property
    def d_star(self) -> float:
        return self.b * self.nu - self.c

    def cubic(self, mu):
        """mu^3 - (a + nu) mu^2 + (b + a nu) mu - d_star; feasible where <= 0."""
        return mu ** 3 - (self.a + self.nu) * mu ** 2 + (self.b + self.a * self.nu) * mu - self.d_star

    def to_dict(self) -> Dict[str, float]:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d, "nu": self.nu,
                "y0": self.y0, "y1": self.y1}


def t_kernels(g: Forcing, nu1: float, nu2: float, b: float, a: float, t: float,
              breakpoints: Sequence[float] = ()) -> Tuple[float, float]:
    """The two vanishing double integrals, reduced to single integrals.

    T1(t) = int_0^t g(s) (exp(-nu2 (t-s)) - exp(-nu1 (t-s))) / (nu1 - nu2) ds
    T2(t) = int_0^t (t - s) exp(-beta (t-s)) g(s) ds with beta = b / (2a).
    """
    if not (nu1 > nu2 > 0):
        raise HypothesisViolation(f"need nu1 > nu2 > 0, got {nu1}, {nu2}")
    if not (a > 0 and b > 0):
        raise HypothesisViolation("a and b must be positive")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if g is zero_forcing or t == 0:
        return 0.0, 0.0
    beta = b / (2.0 * a)
    gap = nu1 - nu2
    t1 = _quad(lambda s: g(s) * (math.exp(-nu2 * (t - s)) - math.exp(-nu1 * (t - s))) / gap, 0.0, t, breakpoints)
    t2 = _quad(lambda s: (t - s) * math.exp(-beta * (t - s)) * g(s), 0.0, t, breakpoints)
    return t1, t2


def gron1_bound(p: Gron1Problem, t: float) -> float:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return p.y0
    if p.distinct_roots:
        nu1, nu2 = p.nu1, p.nu2
        root = math.sqrt(p.discriminant)
        value = (math.exp(-nu1 * t) * p.y0
                 + p.a * (math.exp(-nu2 * t) - math.exp(-nu1 * t)) / root * (p.y1 + nu1 * p.y0))
        if p.g is not zero_forcing:
            value += _quad(lambda s: p.g(s) * (math.exp(-nu2 * (t - s)) - math.exp(-nu1 * (t - s))) / (nu1 - nu2),
                           0.0, t, p.breakpoints) / p.a
        return value
    beta = p.beta
    value = math.exp(-beta * t) * (p.y0 + (beta * p.y0 + p.y1) * t)
    if p.g is not zero_forcing:
        value += _quad(lambda s: (t - s) * math.exp(-beta * (t - s)) * p.g(s), 0.0, t, p.breakpoints) / p.a
    return value


def gron1_uniform_bound(p: Gron1Problem, g_integral: Optional[float] = None, sharp: bool = False) -> float:
    """Time-uniform bound on y.

    With ``sharp=True`` and repeated/complex roots with y1 >= 0 the homogeneous
    part is replaced by its exact supremum exp(-beta t*) (y0 + y1 / beta).
    """
    total = p.forcing_integral() if g_integral is None else float(g_integral)
    if p.distinct_roots:
        if not p.c > 0:
            raise HypothesisViolation("distinct-root uniform bound needs c > 0")
        return (p.y0 + p.a * (abs(p.y1) + p.nu1 * p.y0) / math.sqrt(p.discriminant)
                + total / (2.0 * math.sqrt(p.a * p.c)))
    if not p.b > 0:
        raise HypothesisViolation("uniform bound needs b > 0")
    if p.y1 < 0:
        return p.y0 + total / p.b
    beta = p.beta
    slope = beta * p.y0 + p.y1
    if sharp:
        if slope == 0.0:
            return total / p.b
        t_peak = p.y1 / (beta * slope)
        return math.exp(-beta * t_peak) * (p.y0 + p.y1 / beta) + total / p.b
    prefactor = math.exp(-p.y0 / slope) if p.y0 > 0 else 0.0
    return prefactor * (1.0 + 2.0 * p.a / p.b) * p.y0 + total / p.b


@dataclass
class MuStarResult:
    mu_star: Optional[float]
    d_star: float
    upper: float
    intervals: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.mu_star is None

    def to_dict(self) -> Dict[str, Any]:
        return {"mu_star": self.mu_star, "d_star": self.d_star, "upper": self.upper,
                "empty": self.empty, "intervals": [list(iv) for iv in self.intervals]}


def _bisect_boundary(p: Gron2Problem, lo: float, hi: float) -> float:
    """Point where the cubic crosses from feasible (lo) to infeasible (hi)."""
    if p.cubic(lo) == 0.0:
        return lo
    root = optimize.bisect(p.cubic, lo, hi, xtol=MU_XTOL, rtol=4 * np.finfo(float).eps)
    return root


def mu_star(p: Gron2Problem) -> MuStarResult:
    """Supremum of the admissible decay rates.

    The feasible set need not be an interval, so the cubic is scanned on a grid
    over (0, min(a, nu)] and the last sign change is refined by bisection.
    """
    d_star = p.d_star
    upper = min(p.a, p.nu)
    if d_star <= 0 or upper <= 0:
        return MuStarResult(None, d_star, upper)
    grid = upper * np.arange(0, MU_GRID_POINTS + 1) / MU_GRID_POINTS
    feasible = p.cubic(grid) <= 0.0
    feasible[0] = True

    intervals: List[Tuple[float, float]] = []
    start = 0.0
    for i in range(1, len(grid)):
        if feasible[i - 1] and not feasible[i]:
            intervals.append((start, _bisect_boundary(p, grid[i - 1], grid[i])))
        elif not feasible[i - 1] and feasible[i]:
            start = _bisect_boundary_rising(p, grid[i - 1], grid[i])
    if feasible[-1]:
        intervals.append((start, upper))
    sup = intervals[-1][1]
    logger.debug("mu_star: d_star=%g upper=%g intervals=%s", d_star, upper, intervals)
    return MuStarResult(sup, d_star, upper, intervals)


def _bisect_boundary_rising(p: Gron2Problem, lo: float, hi: float) -> float:
    if p.cubic(hi) == 0.0:
        return hi
    return optimize.bisect(p.cubic, lo, hi, xtol=MU_XTOL, rtol=4 * np.finfo(float).eps)


def _feasible(p: Gron2Problem, mu: float, upper: float) -> bool:
    return 0.0 < mu < upper and p.cubic(mu) <= 0.0


def _general_estimate(p: Gron2Problem, mu: float, t: float) -> float:
    d1 = p.a - mu
    start = p.y1 + d1 * p.y0 + (p.d / (p.nu - mu) if p.d > 0 else 0.0)
    return math.exp(-d1 * t) * p.y0 + (math.exp(-mu * t) - math.exp(-d1 * t)) / (d1 - mu) * start


def _double_rate_estimate(p: Gron2Problem, t: float) -> float:
    half = p.a / 2.0
    return math.exp(-half * t) * p.y0 + (p.y1 + half * p.y0 + p.d / (p.nu - half)) * t * math.exp(-half * t)


@dataclass(frozen=True)
class Gron2Rate:
    mu: float
    branch: str
    note: str = ""


def gron2_rate(p: Gron2Problem, result: Optional[MuStarResult] = None) -> Gron2Rate:
    """Pick the decay rate and estimate branch used by `gron2_bound`."""
    result = result or mu_star(p)
    if result.empty:
        raise NoDecayRateError(f"no admissible decay rate (d_star={result.d_star:g})")
    mu = result.mu_star
    half = p.a / 2.0
    if mu >= half:
        if _feasible(p, half, result.upper):
            return Gron2Rate(half, "double")
        candidates = [m for iv in result.intervals for m in iv if _feasible(p, m, result.upper)]
        grid = result.upper * np.arange(1, MU_GRID_POINTS) / MU_GRID_POINTS
        candidates += [float(m) for m in grid[p.cubic(grid) <= 0.0]]
        candidates = [m for m in candidates if m != half]
        best = max(candidates, key=lambda m: (min(m, p.a - m), -abs(m - half)))
        return Gron2Rate(best, "general", "a/2 is not an admissible rate; nearest admissible rate used")
    if p.d > 0 and mu >= p.nu * (1.0 - 1e-12):
        return Gron2Rate(p.nu * (1.0 - OPEN_ENDPOINT_SHRINK), "general",
                         "supremum is the open endpoint nu; rate shrunk to keep d/(nu - mu) finite")
    return Gron2Rate(mu, "general")


def gron2_bound(p: Gron2Problem, t: float, rate: Optional[Gron2Rate] = None) -> float:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    rate = rate or gron2_rate(p)
    if t == 0:
        return p.y0
    if rate.branch == "double":
        return _double_rate_estimate(p, t)
    return _general_estimate(p, rate.mu, t)


def gron2_uniform_bound(p: Gron2Problem) -> float:
    if not p.b * p.nu > p.c:
        raise HypothesisViolation(f"uniform bound needs b nu > c (b nu={p.b * p.nu:g}, c={p.c:g})")
    if not p.a > 0:
        raise HypothesisViolation("uniform bound needs a > 0")
    return p.y0 + abs(p.y1) / p.a + p.d / (p.a * p.nu)


@dataclass
class OracleSolution:
    t: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    z: Optional[np.ndarray] = None
    dense: Optional[Callable[[float], np.ndarray]] = None

    def frame(self) -> pd.DataFrame:
        data = {"t": self.t, "y": self.y, "ydot": self.ydot}
        if self.z is not None:
            data["z"] = self.z
        return pd.DataFrame(data)


def integro_ode_oracle(p: Union[Gron1Problem, Gron2Problem], t_end: float,
                       n_samples: int = 2001) -> OracleSolution:
    """Solve the equality version of either problem with the reference scheme.

    Gron2 carries z(t) = int_0^t exp(-nu (t - s)) y(s) ds through z' = y - nu z.
    """
    t_eval = np.linspace(0.0, t_end, n_samples)
    if isinstance(p, Gron2Problem):
        def fun(t, u):
            y, yd, z = u
            return [yd, -p.a * yd - p.b * y + p.c * z + p.d * math.exp(-p.nu * t), y - p.nu * z]
        u0 = [p.y0, p.y1, 0.0]
    else:
        def fun(t, u):
            y, yd = u
            return [yd, (p.g(t) - p.b * yd - p.c * y) / p.a]
        u0 = [p.y0, p.y1]
    sol = solve_ivp(fun, (0.0, t_end), u0, method="DOP853", t_eval=t_eval, dense_output=True,
                    rtol=REFERENCE_RTOL, atol=REFERENCE_ATOL * 1e-1)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise DivergenceError(0, float(sol.t[-1]) if len(sol.t) else 0.0)
    return OracleSolution(t=sol.t, y=sol.y[0], ydot=sol.y[1],
                          z=sol.y[2] if isinstance(p, Gron2Problem) else None, dense=sol.sol)


def _random_gron1(rng: np.random.Generator) -> Gron1Problem:
    amplitude = rng.uniform(0.0, 1.0)
    decay = rng.uniform(0.2, 2.0)
    return Gron1Problem(
        a=rng.uniform(0.5, 2.0), b=rng.uniform(0.5, 4.0), c=rng.uniform(0.1, 2.0),
        y0=rng.uniform(0.0, 1.0), y1=rng.uniform(-0.5, 0.5),
        g=lambda t: amplitude * math.exp(-decay * t), g_integral=amplitude / decay,
    )


def _random_gron2(rng: np.random.Generator) -> Gron2Problem:
    b, nu = rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)
    return Gron2Problem(
        a=rng.uniform(0.5, 3.0), b=b, c=rng.uniform(0.0, 0.9) * b * nu, d=rng.uniform(0.0, 1.0),
        nu=nu, y0=rng.uniform(0.0, 1.0), y1=rng.uniform(-0.5, 0.5),
    )


def gronwall_suite(n_problems: int = 50, seed: int = 0, t_end: float = 20.0,
                   n_samples: int = 401, tol: float = 1e-8) -> pd.DataFrame:
    """Domination sweep over seeded random problems of both shapes.

    One row per problem; problems whose oracle solution turns negative are kept
    but marked as outside the hypotheses.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for index in range(n_problems):
        for kind, problem in (("gron1", _random_gron1(rng)), ("gron2", _random_gron2(rng))):
            oracle = integro_ode_oracle(problem, t_end, n_samples)
            nonnegative = bool(np.all(oracle.y >= 0.0))
            if kind == "gron1":
                bound = np.array([gron1_bound(problem, t) for t in oracle.t])
                uniform = gron1_uniform_bound(problem, sharp=True)
            else:
                rate = gron2_rate(problem)
                bound = np.array([gron2_bound(problem, t, rate) for t in oracle.t])
                uniform = gron2_uniform_bound(problem)
            margin = float(np.min(bound - oracle.y))
            rows.append({
                "index": index, "kind": kind, "nonnegative": nonnegative,
                "margin": margin, "peak": float(np.max(oracle.y)), "uniform_bound": uniform,
                "dominated": (margin >= -tol) if nonnegative else None,
                "uniform_dominates": (uniform >= float(np.max(oracle.y)) - tol) if nonnegative else None,
            })
    return pd.DataFrame(rows, columns=["index", "kind", "nonnegative", "margin", "peak",
                                       "uniform_bound", "dominated", "uniform_dominates"])


def exponential_forcing(amplitude: float, rate: float) -> Forcing:
    if amplitude < 0 or not rate > 0:
        raise HypothesisViolation(f"forcing needs amplitude >= 0 and rate > 0, got {amplitude}, {rate}")
    return lambda t: amplitude * math.exp(-rate * t)


def problem_from_spec(spec: Dict[str, Any]) -> Union[Gron1Problem, Gron2Problem]:
    """Build a problem from a JSON object such as {"kind": "gron1", "a": 1, ...}.

    A Gron1 forcing is given as {"amplitude": A, "rate": r} for g(t) = A exp(-r t).
    """
    spec = dict(spec)
    kind = spec.pop("kind", "gron1")
    if kind == "gron2":
        return Gron2Problem(**{key: float(spec[key]) for key in ("a", "b", "c", "d", "nu", "y0", "y1")})
    if kind != "gron1":
        raise ValueError(f"unknown problem kind '{kind}'")
    forcing = spec.pop("forcing", None)
    values = {key: float(spec[key]) for key in ("a", "b", "c", "y0", "y1")}
    if forcing is None:
        return Gron1Problem(**values)
    amplitude, rate = float(forcing["amplitude"]), float(forcing["rate"])
    return Gron1Problem(**values, g=exponential_forcing(amplitude, rate), g_integral=amplitude / rate)


def bound_table(p: Union[Gron1Problem, Gron2Problem], times: Sequence[float]) -> pd.DataFrame:
    """Pointwise and uniform bounds at the requested times."""
    if isinstance(p, Gron2Problem):
        rate = gron2_rate(p)
        bound = [gron2_bound(p, float(t), rate) for t in times]
        uniform = gron2_uniform_bound(p)
    else:
        bound = [gron1_bound(p, float(t)) for t in times]
        uniform = gron1_uniform_bound(p)
    return pd.DataFrame({"t": np.asarray(times, dtype=float), "bound": bound, "uniform_bound": uniform})
