"""Communication kernels: who listens to whom, and how strongly.

Every kernel exposes the same small surface used by the right-hand sides and
the audits:

* ``matrix(t, x)`` returns the full N x N symmetric weight matrix,
* ``weight(i, j, t, x)`` returns one entry,
* ``psi_M`` is the global upper bound and ``lower_bound(t, x)`` the lower bound
  valid for the given configuration,
* ``is_constant`` tells whether the weights are independent of time and state,
* ``describe()`` returns the JSON-ready description used in scenarios.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.spatial.distance import pdist, squareform

from .errors import KernelContractError

logger = logging.getLogger(__name__)


class CommunicationKernel:
    kind = "abstract"
    is_constant = False

    def matrix(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def weight(self, i: int, j: int, t: float, x: np.ndarray) -> float:
        return float(self.matrix(t, x)[i, j])

    @property
    def psi_M(self) -> float:
        raise NotImplementedError

    def lower_bound(self, t: float, x: np.ndarray) -> float:
        raise NotImplementedError

    def describe(self) -> Dict[str, Any]:
        raise NotImplementedError


def _check_weights(w: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(w)):
        raise KernelContractError(f"{where}: non-finite weight")
    if np.any(w < 0):
        raise KernelContractError(f"{where}: negative weight")
    return w


class ConstantMatrixKernel(CommunicationKernel):
    kind = "constant"
    is_constant = True

    def __init__(self, weights):
        w = np.array(weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise KernelContractError(f"weight matrix must be square, got shape {w.shape}")
        _check_weights(w, "constant kernel")
        if not np.array_equal(w, w.T):
            raise KernelContractError("weight matrix is not symmetric")
        w.setflags(write=False)
        self.weights = w

    @classmethod
    def uniform(cls, n: int, value: float = 1.0) -> "ConstantMatrixKernel":
        return cls(np.full((n, n), float(value)))

    def matrix(self, t: float, x: np.ndarray) -> np.ndarray:
        if len(x) != self.weights.shape[0]:
            raise KernelContractError(
                f"kernel is {self.weights.shape[0]}x{self.weights.shape[0]} but state has N={len(x)}")
        return self.weights

    @property
    def psi_M(self) -> float:
        return float(self.weights.max())

    @property
    def psi_m(self) -> float:
        return float(self.weights.min())

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights.flat[0]))

    def lower_bound(self, t: float, x: np.ndarray) -> float:
        return self.psi_m

    def describe(self) -> Dict[str, Any]:
        if self.is_uniform:
            return {"type": "constant", "value": float(self.weights.flat[0])}
        return {"type": "constant", "matrix": self.weights.tolist()}


class MultiplicativeKernel(CommunicationKernel):
    """psi_ij = p_i p_j with strictly positive p."""

    kind = "multiplicative"
    is_constant = True

    def __init__(self, p: Sequence[float]):
        p = np.array(p, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise KernelContractError("p must be a non-empty vector")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise KernelContractError("multiplicative weights must be positive and finite")
        p.setflags(write=False)
        self.p = p
        self._w = np.outer(p, p)
        self._w.setflags(write=False)

    def matrix(self, t: float, x: np.ndarray) -> np.ndarray:
        if len(x) != len(self.p):
            raise KernelContractError(f"kernel has {len(self.p)} weights but state has N={len(x)}")
        return self._w

    @property
    def psi_M(self) -> float:
        return float(self._w.max())

    @property
    def psi_m(self) -> float:
        return float(self._w.min())

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.p == self.p[0]))

    def lower_bound(self, t: float, x: np.ndarray) -> float:
        return self.psi_m

    def describe(self) -> Dict[str, Any]:
        return {"type": "multiplicative", "p": self.p.tolist()}


@dataclass(frozen=True)
class MetricKernel(CommunicationKernel):
    """psi_ij = psi(|x_i - x_j|) for a positive nonincreasing psi.

    ``primitive(r)`` is the integral of psi over [0, r]; ``tail(r)`` the integral
    over [r, inf). Both fall back to quadrature when no closed form is known.
    """

    psi: Callable[[np.ndarray], np.ndarray]
    psi_max: float
    spec: Dict[str, Any] = field(default_factory=dict)
    closed_primitive: Optional[Callable[[float], float]] = None
    closed_tail: Optional[Callable[[float], float]] = None

    kind = "metric"
    is_constant = False

    @classmethod
    def cucker_smale(cls, beta: float) -> "MetricKernel":
        if not beta > 0:
            raise KernelContractError(f"beta must be positive, got {beta}")

        def psi(r):
            return (1.0 + np.asarray(r, dtype=float) ** 2) ** (-beta / 2.0)

        primitive = tail = None
        if beta == 2.0:
            primitive = math.atan
            tail = lambda r: math.pi / 2.0 - math.atan(r)  # noqa: E731
        elif beta <= 1.0:
            tail = lambda r: math.inf  # noqa: E731
        return cls(psi=psi, psi_max=1.0, spec={"type": "metric", "form": "cucker_smale", "beta": float(beta)},
                   closed_primitive=primitive, closed_tail=tail)

    @classmethod
    def tabulated(cls, r: Sequence[float], values: Sequence[float]) -> "MetricKernel":
        r = np.array(r, dtype=float)
        values = np.array(values, dtype=float)
        if r.ndim != 1 or r.shape != values.shape or len(r) < 2:
            raise KernelContractError("tabulated kernel needs matching r and psi samples (at least two)")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise KernelContractError("tabulated r must start at 0 and increase strictly")
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise KernelContractError("tabulated psi must be positive and finite")
        if np.any(np.diff(values) > 0):
            raise KernelContractError("tabulated psi must be nonincreasing")

        def psi(dist):
            return np.interp(dist, r, values)

        # constant continuation past the last sample, so the tail diverges
        return cls(psi=psi, psi_max=float(values[0]),
                   spec={"type": "metric", "form": "tabulated", "r": r.tolist(), "psi": values.tolist()},
                   closed_tail=lambda _r: math.inf)

    def __call__(self, r):
        return self.psi(r)

    def matrix(self, t: float, x: np.ndarray) -> np.ndarray:
        dist = squareform(pdist(np.asarray(x, dtype=float)))
        return _check_weights(np.asarray(self.psi(dist), dtype=float), "metric kernel")

    def weight(self, i: int, j: int, t: float, x: np.ndarray) -> float:
        r = float(np.linalg.norm(np.asarray(x[i]) - np.asarray(x[j])))
        w = float(self.psi(r))
        if not (w >= 0 and math.isfinite(w)):
            raise KernelContractError(f"metric kernel returned {w} at r={r}")
        return w

    @property
    def psi_M(self) -> float:
        return self.psi_max

    def lower_bound(self, t: float, x: np.ndarray) -> float:
        dist = pdist(np.asarray(x, dtype=float))
        return float(self.psi(dist.max() if len(dist) else 0.0))

    def primitive(self, r: float) -> float:
        if self.closed_primitive is not None:
            return float(self.closed_primitive(r))
        value, _ = integrate.quad(lambda s: float(self.psi(s)), 0.0, r, epsrel=1e-12, limit=200)
        return value

    def tail(self, r: float) -> float:
        if self.closed_tail is not None:
            return float(self.closed_tail(r))
        value, _ = integrate.quad(lambda s: float(self.psi(s)), r, math.inf, epsrel=1e-10, limit=200)
        return value

    def describe(self) -> Dict[str, Any]:
        return dict(self.spec)


class TimeVaryingKernel(CommunicationKernel):
    """Weights sampled from ``sampler(t, i, j)`` within [psi_m, psi_M].

    Only the upper triangle is sampled; the matrix is mirrored so symmetry is
    exact.
    """

    kind = "time_varying"
    is_constant = False

    def __init__(self, sampler: Callable[[float, int, int], float], psi_m: float, psi_M: float,
                 spec: Optional[Dict[str, Any]] = None):
        if not (0 < psi_m <= psi_M):
            raise KernelContractError(f"need 0 < psi_m <= psi_M, got {psi_m}, {psi_M}")
        self.sampler = sampler
        self.psi_m = float(psi_m)
        self._psi_M = float(psi_M)
        self.spec = spec or {"type": "time_varying", "psi_m": self.psi_m, "psi_M": self._psi_M}

    @classmethod
    def oscillating(cls, psi_m: float, psi_M: float, omega: float = 1.0) -> "TimeVaryingKernel":
        span = psi_M - psi_m

        def sampler(t, i, j):
            phase = 0.7 * (i + j) + 0.3 * i * j
            w = psi_m + span * 0.5 * (1.0 + math.sin(omega * t + phase))
            return min(max(w, psi_m), psi_M)

        return cls(sampler, psi_m, psi_M,
                   spec={"type": "time_varying", "psi_m": float(psi_m), "psi_M": float(psi_M),
                         "omega": float(omega)})

    def _sample(self, t: float, i: int, j: int) -> float:
        w = float(self.sampler(t, min(i, j), max(i, j)))
        if not (self.psi_m <= w <= self._psi_M):
            raise KernelContractError(
                f"sampler weight {w} at t={t}, ({i},{j}) outside [{self.psi_m}, {self._psi_M}]")
        return w

    def matrix(self, t: float, x: np.ndarray) -> np.ndarray:
        n = len(x)
        w = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                w[i, j] = w[j, i] = self._sample(t, i, j)
        return w

    def weight(self, i: int, j: int, t: float, x: np.ndarray) -> float:
        return self._sample(t, i, j)

    @property
    def psi_M(self) -> float:
        return self._psi_M

    def lower_bound(self, t: float, x: np.ndarray) -> float:
        return self.psi_m

    def describe(self) -> Dict[str, Any]:
        return dict(self.spec)


def kernel_from_spec(spec: Dict[str, Any], n: int) -> CommunicationKernel:
    """Build a kernel from its scenario description."""
    kind = spec.get("type")
    if kind == "constant":
        if "matrix" in spec:
            kernel = ConstantMatrixKernel(spec["matrix"])
            if kernel.weights.shape[0] != n:
                raise KernelContractError(f"matrix is {kernel.weights.shape[0]}x{kernel.weights.shape[0]}, N={n}")
            return kernel
        return ConstantMatrixKernel.uniform(n, spec.get("value", 1.0))
    if kind == "multiplicative":
        kernel = MultiplicativeKernel(spec["p"])
        if len(kernel.p) != n:
            raise KernelContractError(f"p has {len(kernel.p)} entries, N={n}")
        return kernel
    if kind == "metric":
        form = spec.get("form", "cucker_smale")
        if form == "cucker_smale":
            return MetricKernel.cucker_smale(float(spec.get("beta", 2.0)))
        if form == "tabulated":
            return MetricKernel.tabulated(spec["r"], spec["psi"])
        raise KernelContractError(f"unknown metric form '{form}'")
    if kind == "time_varying":
        return TimeVaryingKernel.oscillating(float(spec["psi_m"]), float(spec["psi_M"]),
                                             float(spec.get("omega", 1.0)))
    raise KernelContractError(f"unknown kernel type '{kind}'")
